#pragma once

// Scene directories on disk. Layout:
//   manifest.json
//   <split>/<index>_ref.png  _mask.png  _bg.png  _depth.raw  _shading.raw
//   <split>/<index>_gt<j>.png          (NTR splits: one per colour record)

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "active/benchmark.hpp"
#include "active/image_io.hpp"
#include "active/scenegen.hpp"

namespace active {

inline constexpr int kManifestVersion = 1;

namespace detail {

inline std::string scene_stem(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05zu", index);
  return buf;
}

inline nlohmann::json rgb_json(const Rgb& c) { return nlohmann::json::array({c[0], c[1], c[2]}); }
inline Rgb rgb_from(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

}  // namespace detail

/// Writes one split's images and returns its manifest entries.
inline nlohmann::json write_split(const std::filesystem::path& root, const std::string& name, const Dataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(root / name);
  nlohmann::json scenes = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.scenes.size(); ++i) {
    const auto& s = ds.scenes[i];
    const std::string stem = name + "/" + detail::scene_stem(i);
    write_png(root / (stem + "_ref.png"), s.x_ref);
    write_mask_png(root / (stem + "_mask.png"), s.x_m, s.height(), s.width());
    write_png(root / (stem + "_bg.png"), s.x_bg);
    Image depth(s.height(), s.width(), 1);
    depth.pixels = s.x_d.values;
    write_raw(root / (stem + "_depth.raw"), depth);
    Image shading(s.height(), s.width(), 1);
    shading.pixels = s.shading;
    write_raw(root / (stem + "_shading.raw"), shading);

    nlohmann::json j;
    j["kind"] = to_string(s.kind);
    j["pose"] = {{"distance", s.pose.distance}, {"pitch", s.pose.pitch}, {"rotation", s.pose.rotation}};
    j["width"] = s.width();
    j["height"] = s.height();
    j["intrinsics"] = s.cam.intrinsics();
    j["extrinsics"] = s.cam.extrinsics;
    j["base_color"] = detail::rgb_json(s.base_color);
    j["ambient"] = s.ambient;
    j["gt_box"] = {s.gt_box.x_min, s.gt_box.y_min, s.gt_box.x_max, s.gt_box.y_max};
    j["files"] = {{"x_ref", stem + "_ref.png"},
                  {"mask", stem + "_mask.png"},
                  {"background", stem + "_bg.png"},
                  {"depth", stem + "_depth.raw"},
                  {"shading", stem + "_shading.raw"}};
    j["records"] = nlohmann::json::array();
    scenes.push_back(std::move(j));
  }
  std::vector<std::size_t> per_scene(ds.scenes.size(), 0);
  for (const auto& r : ds.records) {
    const std::string file =
        name + "/" + detail::scene_stem(r.scene) + "_gt" + std::to_string(per_scene[r.scene]++) + ".png";
    write_png(root / file, r.ground_truth);
    scenes[r.scene]["records"].push_back({{"color", detail::rgb_json(r.color)}, {"ground_truth", file}});
  }
  return scenes;
}

inline void write_benchmark(const std::filesystem::path& root, const Benchmark& b, const BenchmarkOptions& opt) {
  nlohmann::json manifest;
  manifest["format"] = "active-scenes";
  manifest["version"] = kManifestVersion;
  manifest["seed"] = opt.seed;
  manifest["image_size"] = opt.scene.image_size;
  for (const auto& name : split_names()) manifest["splits"][name] = write_split(root, name, split(b, name));
  io::atomic_write(root / "manifest.json", [&](std::ostream& os) { os << manifest.dump(1) << "\n"; });
}

inline nlohmann::json read_manifest(const std::filesystem::path& root) {
  std::ifstream is(root / "manifest.json");
  if (!is) throw std::runtime_error("no manifest.json in " + root.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed manifest in " + root.string() + ": " + e.what());
  }
  if (m.value("format", "") != "active-scenes" || m.value("version", 0) != kManifestVersion)
    throw std::runtime_error("unsupported manifest format in " + root.string());
  return m;
}

/// Reloads a split. x_ref_m is rebuilt as x_ref on the mask, so the
/// compositing identity holds exactly on the quantised images.
inline Dataset read_split(const std::filesystem::path& root, const std::string& name) {
  const auto manifest = read_manifest(root);
  if (!manifest.at("splits").contains(name)) throw std::runtime_error("dataset has no split '" + name + "'");
  Dataset ds;
  for (const auto& j : manifest["splits"][name]) {
    SceneSample s;
    const auto& f = j.at("files");
    s.x_ref = read_png(root / f.at("x_ref").get<std::string>());
    s.x_m = read_mask_png(root / f.at("mask").get<std::string>());
    s.x_bg = read_png(root / f.at("background").get<std::string>());
    const int H = j.at("height").get<int>(), W = j.at("width").get<int>();
    if (s.x_ref.height != H || s.x_ref.width != W || s.x_bg.height != H || s.x_m.size() != s.x_ref.pixel_count())
      throw std::runtime_error("scene image extents disagree with the manifest in split " + name);
    s.x_ref_m = Image(H, W, 3);
    for (std::size_t i = 0; i < s.x_m.size(); ++i)
      if (s.x_m[i])
        for (int c = 0; c < 3; ++c) {
          s.x_ref_m.pixels[i * 3 + c] = s.x_ref.pixels[i * 3 + c];
          s.x_bg.pixels[i * 3 + c] = 0.0;
        }
    s.x_d = DepthImage{H, W, read_raw(root / f.at("depth").get<std::string>()).pixels, s.x_m};
    s.shading = read_raw(root / f.at("shading").get<std::string>()).pixels;
    if (s.x_d.values.size() != s.x_m.size() || s.shading.size() != s.x_m.size())
      throw std::runtime_error("raw file extent mismatch in split " + name);
    const auto k = j.at("intrinsics").get<std::vector<double>>();
    s.cam.fx = k.at(0);
    s.cam.cx = k.at(2);
    s.cam.fy = k.at(4);
    s.cam.cy = k.at(5);
    s.cam.extrinsics = j.at("extrinsics").get<std::array<double, 16>>();
    s.cam.width = W;
    s.cam.height = H;
    s.kind = parse_kind(j.at("kind").get<std::string>());
    s.pose = {j["pose"].at("distance").get<double>(), j["pose"].at("pitch").get<double>(),
              j["pose"].at("rotation").get<double>()};
    s.base_color = detail::rgb_from(j.at("base_color"));
    s.ambient = j.at("ambient").get<double>();
    s.gt_box = mask_bbox(s.x_m, H, W);
    const std::size_t index = ds.scenes.size();
    for (const auto& r : j.at("records"))
      ds.records.push_back({index, detail::rgb_from(r.at("color")),
                            read_png(root / r.at("ground_truth").get<std::string>())});
    ds.scenes.push_back(std::move(s));
  }
  return ds;
}

}  // namespace active
