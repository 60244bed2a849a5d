#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "fgcam/model.hpp"
#include "fgcam/tensor.hpp"

namespace fgcam {

/// 8-bit interleaved image (1 or 3 channels).
struct Image {
  Index width = 0;
  Index height = 0;
  Index channels = 0;
  std::vector<std::uint8_t> pixels;
};

/// Reads PNG, binary PGM (P5) or binary PPM (P6). Throws kIo.
Image read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

/// Converts to the model's channel count, resizes bilinearly to the model input,
/// scales to [0,1] and normalizes with the model's mean/std.
Tensor preprocess(const Image& image, const ModelGraph& model);

inline constexpr char kMapMagic[8] = {'F', 'G', 'M', 'A', 'P', '0', '1', '\0'};

/// Raw map: 8-byte magic, u32 rank, u32 dims, little-endian float32 payload.
void write_raw_map(const std::filesystem::path& path, const Tensor& map);
std::vector<std::uint8_t> encode_raw_map(const Tensor& map);
Tensor read_raw_map(const std::filesystem::path& path);
Tensor decode_raw_map(const std::vector<std::uint8_t>& bytes);

/// Perceptual sequential colormap, t in [0,1].
std::array<std::uint8_t, 3> viridis(double t);
/// Diverging colormap, t in [-1,1]: blue negative, white zero, red positive.
std::array<std::uint8_t, 3> diverging(double t);

/// Renders an [h,w] map as RGB at height x width. Unsigned maps are min-max
/// scaled per image; signed maps are scaled symmetrically by max |v|.
Image render_heatmap(const Tensor& map, bool is_signed, Index height, Index width);

}  // namespace fgcam
