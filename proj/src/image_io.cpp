#include "fgcam/image_io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include <png.h>

namespace fgcam {

namespace {

using FilePtr = std::unique_ptr<std::FILE, int (*)(std::FILE*)>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode), &std::fclose);
  if (!f) fail(ErrorCode::kIo, "cannot open " + path.string());
  return f;
}

Image read_png(const std::filesystem::path& path) {
  FilePtr file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::kIo, "libpng initialisation failed");
  }
  Image image;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::kIo, "corrupt PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_packing(png);
  png_set_strip_alpha(png);
  const auto color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  png_read_update_info(png, info);
  image.width = png_get_image_width(png, info);
  image.height = png_get_image_height(png, info);
  image.channels = png_get_channels(png, info);
  image.pixels.resize(static_cast<std::size_t>(image.width * image.height * image.channels));
  rows.resize(static_cast<std::size_t>(image.height));
  for (Index y = 0; y < image.height; ++y) {
    rows[static_cast<std::size_t>(y)] = image.pixels.data() + y * image.width * image.channels;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  if (image.channels != 1 && image.channels != 3) {
    fail(ErrorCode::kIo, "unsupported PNG channel layout in " + path.string());
  }
  return image;
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::string magic;
  is >> magic;
  auto next_int = [&]() {
    is >> std::ws;
    while (is.peek() == '#') {
      std::string comment;
      std::getline(is, comment);
      is >> std::ws;
    }
    long v = -1;
    is >> v;
    return v;
  };
  Image image;
  image.channels = magic == "P5" ? 1 : magic == "P6" ? 3 : 0;
  if (image.channels == 0) fail(ErrorCode::kIo, "unsupported image format " + path.string());
  image.width = next_int();
  image.height = next_int();
  const long maxval = next_int();
  if (image.width < 1 || image.height < 1 || maxval != 255) {
    fail(ErrorCode::kIo, "unsupported PNM header in " + path.string());
  }
  is.get();
  image.pixels.resize(static_cast<std::size_t>(image.width * image.height * image.channels));
  is.read(reinterpret_cast<char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!is) fail(ErrorCode::kIo, "truncated image " + path.string());
  return image;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) fail(ErrorCode::kIo, "cannot open image " + path.string());
  char head[8] = {};
  probe.read(head, sizeof head);
  probe.close();
  static constexpr unsigned char kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (std::memcmp(head, kPngSignature, sizeof kPngSignature) == 0) return read_png(path);
  if (head[0] == 'P' && (head[1] == '5' || head[1] == '6')) return read_pnm(path);
  fail(ErrorCode::kIo, "unreadable image " + path.string() + " (expected PNG, PGM or PPM)");
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    fail(ErrorCode::kInvalidArgument, "PNG output needs 1 or 3 channels");
  }
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::kIo, "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::kIo, "failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8,
               image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (Index y = 0; y < image.height; ++y) {
    png_write_row(png, image.pixels.data() + y * image.width * image.channels);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor preprocess(const Image& image, const ModelGraph& model) {
  const Index c = model.input_shape.at(0);
  const Index h = model.input_shape.at(1), w = model.input_shape.at(2);
  if (c != 1 && c != 3) fail(ErrorCode::kUnsupportedStructure, "model input must have 1 or 3 channels");
  Tensor planar({c, image.height, image.width});
  for (Index y = 0; y < image.height; ++y) {
    for (Index x = 0; x < image.width; ++x) {
      const std::uint8_t* px = image.pixels.data() + (y * image.width + x) * image.channels;
      if (c == image.channels) {
        for (Index ch = 0; ch < c; ++ch) planar.at(ch, y, x) = px[ch] / 255.0f;
      } else if (c == 3) {
        for (Index ch = 0; ch < 3; ++ch) planar.at(ch, y, x) = px[0] / 255.0f;
      } else {
        planar.at(0, y, x) = (0.299f * px[0] + 0.587f * px[1] + 0.114f * px[2]) / 255.0f;
      }
    }
  }
  if (image.height != h || image.width != w) planar = bilinear_resize(planar, h, w);
  const Index plane = h * w;
  for (Index ch = 0; ch < c; ++ch) {
    const float mean = model.preprocessing.mean.at(static_cast<std::size_t>(ch));
    const float sd = model.preprocessing.std.at(static_cast<std::size_t>(ch));
    for (Index k = 0; k < plane; ++k) planar[ch * plane + k] = (planar[ch * plane + k] - mean) / sd;
  }
  return planar;
}

std::vector<std::uint8_t> encode_raw_map(const Tensor& map) {
  std::vector<std::uint8_t> out(std::begin(kMapMagic), std::end(kMapMagic));
  auto put_u32 = [&](std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
  };
  put_u32(static_cast<std::uint32_t>(map.rank()));
  for (Index d : map.shape()) put_u32(static_cast<std::uint32_t>(d));
  for (float v : map.values()) put_u32(std::bit_cast<std::uint32_t>(v));
  return out;
}

void write_raw_map(const std::filesystem::path& path, const Tensor& map) {
  const auto bytes = encode_raw_map(map);
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::kIo, "cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Tensor decode_raw_map(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto get_u32 = [&]() {
    if (pos + 4 > bytes.size()) fail(ErrorCode::kShapeMismatch, "truncated raw map");
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= std::uint32_t(bytes[pos + b]) << (8 * b);
    pos += 4;
    return v;
  };
  if (bytes.size() < sizeof kMapMagic || std::memcmp(bytes.data(), kMapMagic, sizeof kMapMagic) != 0) {
    fail(ErrorCode::kMalformedHeader, "raw map magic mismatch");
  }
  pos = sizeof kMapMagic;
  const std::uint32_t rank = get_u32();
  if (rank == 0 || rank > 8) fail(ErrorCode::kMalformedHeader, "raw map rank out of range");
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(get_u32());
  Tensor out(shape);
  for (Index k = 0; k < out.size(); ++k) out[k] = std::bit_cast<float>(get_u32());
  if (pos != bytes.size()) fail(ErrorCode::kShapeMismatch, "raw map has trailing bytes");
  return out;
}

Tensor read_raw_map(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_raw_map(bytes);
}

std::array<std::uint8_t, 3> viridis(double t) {
  // Ten evenly spaced viridis stops, linearly interpolated.
  static constexpr std::uint8_t stops[10][3] = {
      {0x44, 0x01, 0x54}, {0x48, 0x28, 0x78}, {0x3e, 0x49, 0x89}, {0x31, 0x68, 0x8e}, {0x26, 0x82, 0x8e},
      {0x1f, 0x9e, 0x89}, {0x35, 0xb7, 0x79}, {0x6e, 0xce, 0x58}, {0xb5, 0xde, 0x2b}, {0xfd, 0xe7, 0x25},
  };
  const double pos = std::clamp(t, 0.0, 1.0) * 9.0;
  const int lo = std::min(static_cast<int>(pos), 8);
  const double f = pos - lo;
  std::array<std::uint8_t, 3> rgb{};
  for (int k = 0; k < 3; ++k) {
    const double v = (1.0 - f) * stops[lo][k] + f * stops[lo + 1][k];
    rgb[static_cast<std::size_t>(k)] = static_cast<std::uint8_t>(std::lround(v));
  }
  return rgb;
}

std::array<std::uint8_t, 3> diverging(double t) {
  t = std::clamp(t, -1.0, 1.0);
  const auto fade = static_cast<std::uint8_t>(std::lround((1.0 - std::abs(t)) * 255.0));
  if (t >= 0.0) return {255, fade, fade};
  return {fade, fade, 255};
}

Image render_heatmap(const Tensor& map, bool is_signed, Index height, Index width) {
  if (map.rank() != 2) fail(ErrorCode::kShapeMismatch, "heatmap expects an [h,w] map");
  Tensor scaled = map.reshaped({1, map.dim(0), map.dim(1)});
  if (scaled.dim(1) != height || scaled.dim(2) != width) scaled = bilinear_resize(scaled, height, width);
  Image image{width, height, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(width * height * 3))};
  const auto [lo, hi] = std::minmax_element(scaled.values().begin(), scaled.values().end());
  const double peak = std::max(std::abs(double(*lo)), std::abs(double(*hi)));
  for (Index k = 0; k < height * width; ++k) {
    std::array<std::uint8_t, 3> rgb;
    if (is_signed) {
      rgb = diverging(peak > 0.0 ? scaled[k] / peak : 0.0);
    } else {
      const double range = double(*hi) - double(*lo);
      rgb = viridis(range > 0.0 ? (scaled[k] - *lo) / range : 0.0);
    }
    std::copy(rgb.begin(), rgb.end(), image.pixels.begin() + k * 3);
  }
  return image;
}

}  // namespace fgcam
