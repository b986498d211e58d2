#pragma once

// Flat "key = value" configuration shared by every CLI subcommand. Blank
// lines and lines starting with '#' are ignored; unknown keys are errors.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "active/augment.hpp"
#include "active/detector.hpp"
#include "active/losses.hpp"
#include "active/renderer.hpp"
#include "active/scenegen.hpp"

namespace active {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Scene counts for the synthetic benchmark. Attack kinds are sphere and box;
/// the capsule is held out for the instance-transfer check.
struct BenchmarkOptions {
  SceneOptions scene;
  CameraPoseSet poses;
  int ntr_poses = 12;        ///< per attack kind, each with the 9 boundary colours
  int ntr_test_poses = 4;    ///< per attack kind
  int ntr_test_colors = 3;   ///< random colours per held-out NTR pose
  int detector_scenes = 3000; ///< per kind
  int attack_poses = 512;    ///< per attack kind
  int eval_poses = 64;       ///< per kind, disjoint draws from the attack scenes
  std::uint64_t seed = 1;
};

struct AttackConfig {
  LossWeights weights;
  DigitalTransformSet roa;
  bool use_roa = true;
  ProjectionAugRanges projection;
  bool use_projection_aug = true;
  double tile_period = 4.0;  ///< meters per texture repeat
  int texture_size = 64;
  int epochs = 30;
  int batch_size = 8;
  double lr = 0.03;
  std::uint64_t seed = 1;
  int colors_k = 4;
  double score_threshold = 0.30;

  void validate() const {
    weights.validate();
    roa.validate();
    if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
    if (texture_size < 2) throw std::invalid_argument("texture_size must be at least 2");
    if (!(tile_period > 0.0)) throw std::invalid_argument("tile_period must be positive");
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
    if (colors_k < 1) throw std::invalid_argument("colors_k must be at least 1");
    if (projection.shift < 0.0 || projection.scale_delta < 0.0 || projection.scale_delta >= 1.0)
      throw std::invalid_argument("projection augmentation ranges out of bounds");
  }
};

struct PipelineConfig {
  BenchmarkOptions benchmark;
  NtrConfig ntr_model;
  NtrTrainOptions ntr;
  DetectorConfig detector_model;
  DetectorTrainOptions detector;
  AttackConfig attack;
  std::filesystem::path dataset = "data";
  std::filesystem::path ntr_checkpoint = "ntr.actw";
  std::filesystem::path detector_checkpoint = "detector.actw";
  std::filesystem::path colors = "colors.txt";
  std::filesystem::path output_dir = "out";

  /// Propagates the master seed to every stage's own seed.
  void set_seed(std::uint64_t seed) {
    benchmark.seed = seed;
    ntr_model.seed = seed;
    ntr.seed = seed;
    detector_model.seed = seed;
    detector.seed = seed;
    attack.seed = seed;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  return value;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "on") return true;
  if (text == "false" || text == "0" || text == "off") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + text + "'");
}

/// "lo:hi" or "lo:hi,lo:hi".
inline std::vector<Range> parse_ranges(const std::string& key, const std::string& text) {
  std::vector<Range> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("config key '" + key + "': expected lo:hi, got '" + item + "'");
    out.push_back({parse_number<double>(key, trim(item.substr(0, colon))),
                   parse_number<double>(key, trim(item.substr(colon + 1)))});
  }
  if (out.empty()) throw ConfigError("config key '" + key + "' is empty");
  return out;
}

inline std::string format_ranges(const std::vector<Range>& rs) {
  std::string s;
  for (const auto& r : rs) {
    if (!s.empty()) s += ",";
    std::ostringstream os;
    os << r.lo << ":" << r.hi;
    s += os.str();
  }
  return s;
}

template <class T>
std::string format_value(const T& v) {
  std::ostringstream os;
  os << std::boolalpha << v;
  return os.str();
}

inline std::string format_value(const std::filesystem::path& p) { return p.string(); }

}  // namespace detail

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

/// Every recognised key, in documentation order.
inline const std::vector<ConfigKey>& config_keys() {
  using detail::format_value;
  using detail::parse_bool;
  using detail::parse_number;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
#define ACTIVE_KEY(NAME, HELP, FIELD, PARSE)                                                           \
  k.push_back({NAME, HELP,                                                                            \
               [](PipelineConfig& c, const std::string& v) { c.FIELD = PARSE; },                      \
               [](const PipelineConfig& c) { return format_value(c.FIELD); }})
#define ACTIVE_NUM(NAME, HELP, FIELD) \
  ACTIVE_KEY(NAME, HELP, FIELD, (parse_number<std::decay_t<decltype(c.FIELD)>>(NAME, v)))
#define ACTIVE_PATH(NAME, HELP, FIELD) ACTIVE_KEY(NAME, HELP, FIELD, std::filesystem::path(v))

    ACTIVE_NUM("seed", "master seed for every stage (also --seed)", attack.seed);
    ACTIVE_PATH("dataset", "scene directory written by gen-scenes", dataset);
    ACTIVE_PATH("ntr_checkpoint", "NTR weight file", ntr_checkpoint);
    ACTIVE_PATH("detector_checkpoint", "detector weight file", detector_checkpoint);
    ACTIVE_PATH("colors", "dominant colour file (k lines of r g b)", colors);
    ACTIVE_PATH("output_dir", "directory for textures, reports and previews", output_dir);

    ACTIVE_NUM("scene.image_size", "rendered image side in pixels", benchmark.scene.image_size);
    ACTIVE_NUM("scene.focal_scale", "focal length as a multiple of the image side", benchmark.scene.focal_scale);
    ACTIVE_NUM("scene.ambient", "ambient shading term", benchmark.scene.ambient);
    auto ranges = [&k](const char* name, const char* help, std::vector<Range> CameraPoseSet::*field) {
      k.push_back({name, help,
                   [name, field](PipelineConfig& c, const std::string& v) {
                     c.benchmark.poses.*field = detail::parse_ranges(name, v);
                   },
                   [field](const PipelineConfig& c) { return detail::format_ranges(c.benchmark.poses.*field); }});
    };
    ranges("scene.distances", "camera distance ranges in meters, lo:hi[,lo:hi]", &CameraPoseSet::distances);
    ranges("scene.pitches", "camera pitch ranges in degrees", &CameraPoseSet::pitches);
    ranges("scene.rotations", "camera rotation ranges in degrees", &CameraPoseSet::rotations);
    ACTIVE_NUM("scene.ntr_poses", "NTR training poses per attack kind", benchmark.ntr_poses);
    ACTIVE_NUM("scene.ntr_test_poses", "held-out NTR poses per attack kind", benchmark.ntr_test_poses);
    ACTIVE_NUM("scene.ntr_test_colors", "random colours per held-out NTR pose", benchmark.ntr_test_colors);
    ACTIVE_NUM("scene.detector_scenes", "detector training scenes per kind", benchmark.detector_scenes);
    ACTIVE_NUM("scene.attack_poses", "attack scenes per attack kind", benchmark.attack_poses);
    ACTIVE_NUM("scene.eval_poses", "evaluation scenes per kind", benchmark.eval_poses);

    ACTIVE_NUM("ntr.base_width", "NTR channel width", ntr_model.base_width);
    ACTIVE_NUM("ntr.epochs", "NTR training epochs", ntr.epochs);
    ACTIVE_NUM("ntr.batch_size", "NTR minibatch size", ntr.batch_size);
    ACTIVE_NUM("ntr.lr", "NTR learning rate", ntr.lr);

    ACTIVE_NUM("detector.grid", "detector grid side S", detector_model.grid);
    ACTIVE_NUM("detector.base_width", "detector channel width", detector_model.base_width);
    ACTIVE_NUM("detector.epochs", "detector training epochs", detector.epochs);
    ACTIVE_NUM("detector.batch_size", "detector minibatch size", detector.batch_size);
    ACTIVE_NUM("detector.lr", "detector learning rate", detector.lr);

    ACTIVE_NUM("attack.alpha", "stealth loss weight", attack.weights.alpha);
    ACTIVE_NUM("attack.beta", "smooth loss weight", attack.weights.beta);
    ACTIVE_NUM("attack.gamma", "camouflage loss weight", attack.weights.gamma);
    ACTIVE_NUM("attack.iou_threshold", "IoU above which a box counts as the object", attack.weights.iou_threshold);
    ACTIVE_NUM("attack.epochs", "optimisation epochs", attack.epochs);
    ACTIVE_NUM("attack.batch_size", "scenes per optimisation step", attack.batch_size);
    ACTIVE_NUM("attack.lr", "Adam learning rate on the texture", attack.lr);
    ACTIVE_NUM("attack.texture_size", "texture side in texels", attack.texture_size);
    ACTIVE_NUM("attack.tile_period", "meters per texture repeat", attack.tile_period);
    ACTIVE_NUM("attack.colors_k", "dominant colours to extract", attack.colors_k);
    ACTIVE_NUM("attack.score_threshold", "detection score cut for AP", attack.score_threshold);
    ACTIVE_KEY("attack.roa", "random output augmentation on/off", attack.use_roa, parse_bool("attack.roa", v));
    ACTIVE_NUM("attack.roa.brightness", "brightness offset range +-b", attack.roa.brightness_delta);
    ACTIVE_NUM("attack.roa.contrast_min", "lower contrast factor", attack.roa.contrast_min);
    ACTIVE_NUM("attack.roa.contrast_max", "upper contrast factor", attack.roa.contrast_max);
    ACTIVE_NUM("attack.roa.scale_min", "lower output scale", attack.roa.scale_min);
    ACTIVE_NUM("attack.roa.scale_max", "upper output scale", attack.roa.scale_max);
    ACTIVE_KEY("attack.projection_aug", "projection augmentation on/off", attack.use_projection_aug,
               parse_bool("attack.projection_aug", v));
    ACTIVE_NUM("attack.projection.shift", "world shift range in tile periods", attack.projection.shift);
    ACTIVE_NUM("attack.projection.scale_delta", "tile scale range 1 +- d", attack.projection.scale_delta);
#undef ACTIVE_PATH
#undef ACTIVE_NUM
#undef ACTIVE_KEY
    return k;
  }();
  return keys;
}

/// Applies `key = value` lines on top of `cfg`. `origin` names the source in errors.
inline void apply_config(PipelineConfig& cfg, std::istream& is, const std::string& origin = "config") {
  const auto& keys = config_keys();
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = detail::trim(t.substr(0, eq)), value = detail::trim(t.substr(eq + 1));
    const auto it = std::find_if(keys.begin(), keys.end(), [&](const ConfigKey& k) { return k.name == key; });
    if (it == keys.end()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->set(cfg, value);
    if (key == "seed") cfg.set_seed(cfg.attack.seed);
  }
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  PipelineConfig cfg;
  apply_config(cfg, is, path.string());
  return cfg;
}

/// Effective configuration in the same format that apply_config reads.
inline std::string dump_config(const PipelineConfig& cfg) {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

}  // namespace active
