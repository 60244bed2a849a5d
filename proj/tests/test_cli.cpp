#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bundle.hpp"
#include "fgcam/app.hpp"
#include "fgcam/image_io.hpp"

using namespace fgcam;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "fgcam");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch() {
  const fs::path dir = fs::temp_directory_path() / "fgcam_cli";
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

const std::string& model_path() {
  static const std::string p = fixture::shared_bundle().model.string();
  return p;
}

std::vector<std::string> explain_args(const std::string& method, const std::string& tag,
                                      std::vector<std::string> extra = {}) {
  const fs::path d = scratch();
  std::vector<std::string> a{"explain", fixture::shared_bundle().images[0].string(), "--model", model_path(),
                             "--method", method, "--out-map", (d / (tag + ".fgmap")).string(),
                             "--out-png", (d / (tag + ".png")).string(), "--out-json",
                             (d / (tag + ".json")).string()};
  a.insert(a.end(), extra.begin(), extra.end());
  return a;
}

}  // namespace

TEST_CASE("explain writes map, png and sidecar") {
  const Run r = cli(explain_args("fg-grad-cam", "fg"));
  INFO(r.err);
  REQUIRE(r.code == 0);
  const fs::path d = scratch();
  const Tensor map = read_raw_map(d / "fg.fgmap");
  CHECK(map.shape() == Shape{28, 28});
  const Image png = read_image(d / "fg.png");
  CHECK(png.width == 28);
  CHECK(png.channels == 3);
  const json side = json::parse(slurp(d / "fg.json"));
  CHECK(side.at("method") == "fg-grad-cam");
  CHECK(side.at("layer") == "input");
  CHECK(side.at("logits").size() == 10);
  CHECK(side.at("predicted_class") == fixture::shared_bundle().samples[0].label);
  CHECK(side.at("map_shape") == json::array({28, 28}));

  // Same configuration, bit-identical raw map.
  const std::string first = slurp(d / "fg.fgmap");
  REQUIRE(cli(explain_args("fg-grad-cam", "fg")).code == 0);
  CHECK(slurp(d / "fg.fgmap") == first);
}

TEST_CASE("grad-cam at the last conv stage has that stage's spatial shape") {
  const Run r = cli(explain_args("grad-cam", "gc"));
  REQUIRE(r.code == 0);
  CHECK(read_raw_map(scratch() / "gc.fgmap").shape() == Shape{7, 7});
  CHECK(r.err.empty());

  // Away from the last stage the plain methods still run but warn.
  const Run w = cli(explain_args("grad-cam", "gc1", {"--layer", "pool1"}));
  CHECK(w.code == 0);
  CHECK(w.err.find("warning") != std::string::npos);
  CHECK(read_raw_map(scratch() / "gc1.fgmap").shape() == Shape{14, 14});
}

TEST_CASE("every method runs from the command line") {
  for (const char* m : {"score-cam", "layer-cam", "fg-score-cam", "lrp"}) {
    const Run r = cli(explain_args(m, std::string("all_") + m, {"--signed"}));
    INFO(m << ": " << r.err);
    CHECK(r.code == 0);
  }
  CHECK(cli(explain_args("fg-grad-cam", "den", {"--denoise", "--layer", "conv1"})).code == 0);
  CHECK(read_raw_map(scratch() / "den.fgmap").shape() == Shape{28, 28});
}

TEST_CASE("usage errors exit nonzero with diagnostics on the error stream") {
  Run r = cli(explain_args("best-cam", "bad"));
  CHECK(r.code == 2);
  CHECK(r.out.empty());
  CHECK(r.err.find("best-cam") != std::string::npos);

  r = cli(explain_args("fg-grad-cam", "bad", {"--layer", "nope"}));
  CHECK(r.code != 0);
  CHECK(r.err.find("nope") != std::string::npos);

  r = cli({"explain", "/nonexistent.png", "--model", model_path()});
  CHECK(r.code != 0);
  CHECK_FALSE(r.err.empty());

  r = cli(explain_args("lrp", "bad", {"--layer", "conv2"}));
  CHECK(r.code == 2);

  CHECK(cli({"frobnicate"}).code != 0);
}

TEST_CASE("eval ad-ai over the fixture listfile") {
  const fs::path out = scratch() / "adai.json";
  const Run r = cli({"eval", fixture::shared_bundle().listfile.string(), "--model", model_path(), "--method",
                     "fg-grad-cam,grad-cam", "--metric", "ad-ai", "--out-json", out.string()});
  INFO(r.err);
  REQUIRE(r.code == 0);
  const json report = json::parse(slurp(out));
  REQUIRE(report.at("results").size() == 2);
  for (const json& row : report.at("results")) {
    CHECK(row.at("count") == 20);
    CHECK(row.at("average_drop").get<double>() >= 0.0);
    CHECK(row.at("average_drop").get<double>() <= 100.0);
    CHECK(row.at("average_increase").get<double>() >= 0.0);
    CHECK(row.at("average_increase").get<double>() <= 100.0);
  }
}

TEST_CASE("eval is deterministic for a fixed seed") {
  const auto run = [](const std::string& name, const std::string& workers) {
    const fs::path out = scratch() / name;
    REQUIRE(cli({"eval", fixture::shared_bundle().listfile.string(), "--model", model_path(), "--method",
                 "fg-grad-cam", "--metric", "insdel", "--sample", "6", "--seed", "41", "--step-pixels", "49",
                 "--workers", workers, "--out-json", out.string()})
                .code == 0);
    return slurp(out);
  };
  const std::string a = run("det_a.json", "1"), b = run("det_b.json", "4");
  CHECK(a == b);
  const json report = json::parse(a);
  CHECK(report.at("images") == 6);
  CHECK(report.at("results")[0].at("count") == 6);
}

TEST_CASE("eval loc") {
  const auto& bundle = fixture::shared_bundle();
  const fs::path d = scratch();
  // Listfile without any boxes.
  const fs::path none = d / "nobox.jsonl";
  {
    std::ofstream os(none);
    for (std::size_t k = 0; k < 3; ++k) {
      os << json{{"path", fs::absolute(bundle.images[k]).string()}, {"class", bundle.samples[k].label}}.dump() << '\n';
    }
  }
  Run r = cli({"eval", none.string(), "--model", model_path(), "--metric", "loc"});
  CHECK(r.code != 0);
  CHECK(r.err.find(none.string()) != std::string::npos);

  // Listfile where one entry lacks a box: skipped and counted.
  const fs::path some = d / "somebox.jsonl";
  {
    std::ofstream os(some);
    for (std::size_t k = 0; k < 3; ++k) {
      json j{{"path", fs::absolute(bundle.images[k]).string()}, {"class", bundle.samples[k].label}};
      if (k != 1) {
        const BBox& b = bundle.samples[k].box;
        j["bbox"] = {b.x1, b.y1, b.x2, b.y2};
      }
      os << j.dump() << '\n';
    }
  }
  r = cli({"eval", some.string(), "--model", model_path(), "--metric", "loc"});
  INFO(r.err);
  REQUIRE(r.code == 0);
  const json report = json::parse(r.out);
  CHECK(report.at("results")[0].at("count") == 2);
  CHECK(report.at("results")[0].at("skipped_no_bbox") == 1);
  const double p = report.at("results")[0].at("proportion");
  CHECK(p > 0.0);
  CHECK(p <= 1.0);
}

TEST_CASE("inspect") {
  Run r = cli({"inspect", model_path()});
  REQUIRE(r.code == 0);
  std::istringstream lines(r.out);
  int rows = 0;
  bool marked = false;
  for (std::string line; std::getline(lines, line);) {
    if (!line.empty() && std::isdigit(static_cast<unsigned char>(line[0]))) {
      ++rows;
      if (line.find("conv2") != std::string::npos && line.find("[L: last conv]") != std::string::npos) marked = true;
    }
  }
  CHECK(rows == 7);
  CHECK(marked);

  // One flipped payload byte fails the checksum.
  std::string bytes = slurp(model_path());
  bytes[bytes.size() - 10] ^= 0x01;
  const fs::path bad = scratch() / "corrupt.fgm";
  std::ofstream(bad, std::ios::binary) << bytes;
  r = cli({"inspect", bad.string()});
  CHECK(r.code != 0);
  CHECK(r.err.find("CRC") != std::string::npos);

  // A model without any conv layer is reported as a finding.
  ModelGraph m = fixture::shared_model();
  m.layers.erase(m.layers.begin(), m.layers.begin() + 5);
  m.input_shape = {16, 7, 7};
  m.preprocessing = {std::vector<float>(16, 0.0f), std::vector<float>(16, 1.0f)};
  const fs::path noconv = scratch() / "noconv.fgm";
  save_model(m, noconv);
  r = cli({"inspect", noconv.string()});
  CHECK(r.code != 0);
  CHECK(r.err.find("finding") != std::string::npos);
}

TEST_CASE("render") {
  const fs::path d = scratch();
  write_raw_map(d / "r.fgmap", Tensor({2, 2}, {-1, 0, 1, 2}));
  const Run r = cli({"render", (d / "r.fgmap").string(), "--out-png", (d / "r.png").string(), "--signed",
                     "--height", "10", "--width", "12"});
  REQUIRE(r.code == 0);
  const Image img = read_image(d / "r.png");
  CHECK(img.width == 12);
  CHECK(img.height == 10);
}
