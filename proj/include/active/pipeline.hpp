#pragma once

// Texture optimisation against the toy detector and the evaluation protocol.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "active/augment.hpp"
#include "active/benchmark.hpp"
#include "active/checkpoint.hpp"
#include "active/config.hpp"
#include "active/detector.hpp"
#include "active/geometry.hpp"
#include "active/losses.hpp"
#include "active/renderer.hpp"
#include "active/scenegen.hpp"

namespace active {

inline Image random_texture(int size, std::uint64_t seed) {
  auto rng = make_stream(seed, 0x7e47);
  Image t(size, size, 3);
  for (auto& v : t.pixels) v = uniform(rng, 0.0, 1.0);
  return t;
}

inline Image constant_texture(int size, const Rgb& color) {
  Image t(size, size, 3);
  for (std::size_t i = 0; i < t.pixel_count(); ++i)
    for (int c = 0; c < 3; ++c) t.pixels[i * 3 + c] = color[c];
  return t;
}

/// Random colour blocks of `cells` x `cells`, upsampled to `size`.
inline Image block_texture(int size, int cells, std::mt19937_64& rng) {
  std::vector<Rgb> palette(static_cast<std::size_t>(cells) * cells);
  for (auto& c : palette) c = random_color(rng);
  Image t(size, size, 3);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      const auto& col = palette[static_cast<std::size_t>(r * cells / size) * cells + c * cells / size];
      for (int k = 0; k < 3; ++k) t.at(r, c, k) = col[k];
    }
  return t;
}

/// Detector training images: each scene re-rendered (ground-truth shading),
/// alternating the gray reference and a flat random colour.
inline std::vector<LabeledImage> detector_training_set(const Dataset& ds, std::uint64_t seed) {
  std::vector<LabeledImage> out;
  for (std::size_t i = 0; i < ds.scenes.size(); ++i) {
    const auto& s = ds.scenes[i];
    auto rng = make_stream(seed, i, 0xd5);
    // Untextured reference and flat colours only: a detector that has also seen
    // patterned objects shrugs off most textures.
    Image img = i % 2 == 0 ? s.x_ref : render_ground_truth(s, flat_projection(s, random_color(rng)));
    out.push_back({std::move(img), {s.gt_box, s.class_id()}});
  }
  return out;
}

/// A scene with everything that does not depend on the texture precomputed:
/// surface geometry for triplanar mapping and the NTR's transformation maps
/// (which see only x_ref_m).
struct AttackScene {
  SceneSample sample;
  SurfaceGeometry geometry;
  TransformationFeatures tf;
  Tensor mask;        ///< [H,W,3] 0/1
  Tensor background;  ///< [H,W,3]
};

inline std::vector<AttackScene> prepare_scenes(const Dataset& ds, const NtrModel& ntr) {
  std::vector<AttackScene> out;
  out.reserve(ds.scenes.size());
  for (const auto& s : ds.scenes) {
    AttackScene a;
    a.sample = s;
    a.geometry = surface_geometry(s.x_d, s.cam);
    const auto tf = ntr.encode(s.x_ref_m.to_tensor());
    a.tf = {tf.multiplier.detach(), tf.adder.detach()};
    a.mask = detail::mask_image(s).to_tensor();
    a.background = s.x_bg.to_tensor();
    out.push_back(std::move(a));
  }
  return out;
}

enum class AttackStage { project, render, composite, augment, losses, update };

inline const char* to_string(AttackStage s) {
  switch (s) {
    case AttackStage::project: return "project";
    case AttackStage::render: return "render";
    case AttackStage::composite: return "composite";
    case AttackStage::augment: return "augment";
    case AttackStage::losses: return "losses";
    case AttackStage::update: return "update";
  }
  return "?";
}

using AttackObserver = std::function<void(AttackStage)>;

/// x_adv for texture `eta` on one scene: triplanar projection, NTR
/// composition with the cached maps, then compositing over the background.
inline Tensor adversarial_image(const Tensor& eta, const AttackScene& scene, const ProjectionAugmentation& aug,
                                double tile_period, const AttackObserver& observe = {}) {
  auto note = [&](AttackStage s) {
    if (observe) observe(s);
  };
  note(AttackStage::project);
  const auto plan = triplanar_plan(scene.geometry, aug, tile_period, eta.dim(0), eta.dim(1), eta.dim(2));
  const Tensor eta_p = triplanar_project(eta, plan);
  note(AttackStage::render);
  const Tensor x_adv_m = reshape(NtrModel::compose(eta_p, scene.tf), eta_p.shape());
  note(AttackStage::composite);
  return add(mul(x_adv_m, scene.mask), scene.background);
}

struct EpochLosses {
  double attack = 0, smooth = 0, camouflage = 0, total = 0;
};

class AttackDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvalBucket {
  std::string name;
  std::size_t images = 0;
  double ap = 0.0;          ///< AP@0.5 in [0,100]
  double mean_score = 0.0;  ///< mean over images of the best valid detection score
};

struct EvalTable {
  std::vector<EvalBucket> buckets;  ///< "all" first

  const EvalBucket& overall() const { return buckets.front(); }
  const EvalBucket* find(const std::string& name) const {
    for (const auto& b : buckets)
      if (b.name == name) return &b;
    return nullptr;
  }
};

struct AttackReport {
  std::vector<EpochLosses> epochs;
  Image texture;
  std::optional<EvalTable> before;  ///< gray texture
  std::optional<EvalTable> after;   ///< optimised texture
};

/// Optimises a texture over `scenes`: random init, then per minibatch
/// project, render, composite, augment, score, and one Adam step on the
/// texture followed by a clamp to [0,1].
inline AttackReport run_attack(const AttackConfig& cfg, const std::vector<AttackScene>& scenes,
                               const ToyDetector& detector, const DominantColorSet& palette,
                               const AttackObserver& observe = {}) {
  cfg.validate();
  if (scenes.empty()) throw std::invalid_argument("run_attack: no scenes");
  auto note = [&](AttackStage s) {
    if (observe) observe(s);
  };
  const int T = cfg.texture_size;
  Tensor eta = random_texture(T, cfg.seed).to_tensor(true);
  AdamState adam;
  adam.lr = cfg.lr;

  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  auto order_rng = make_stream(cfg.seed, 0x0ede7);
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const ProjectionAugmentation no_aug{};

  AttackReport report;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    EpochLosses sum;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      Tensor attack_sum;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        const auto& scene = scenes[idx];
        auto rng = make_stream(cfg.seed, static_cast<std::uint64_t>(epoch), idx, 0xa77);
        const auto aug = cfg.use_projection_aug ? sample_projection_aug(rng, cfg.projection) : no_aug;
        const Tensor x_adv = adversarial_image(eta, scene, aug, cfg.tile_period, observe);
        note(AttackStage::augment);
        Tensor x_in = x_adv;
        Box gt = scene.sample.gt_box;
        if (cfg.use_roa) {
          auto r = roa(x_adv, cfg.roa, rng);
          x_in = r.image;
          gt = mask_bbox(apply_roa(scene.sample.x_m, r.record), r.record.canvas_h, r.record.canvas_w);
        }
        const Tensor l = stealth_loss(detector.detect(x_in), 0, gt, cfg.weights.iou_threshold);
        attack_sum = attack_sum.defined() ? add(attack_sum, l) : l;
      }
      note(AttackStage::losses);
      const Tensor l_atk = mul(attack_sum, 1.0 / static_cast<double>(end - start));
      const Tensor l_sm = smooth_loss(eta);
      const Tensor l_cm = camouflage_loss(eta, palette);
      const Tensor l_total = total_loss(l_atk, l_sm, l_cm, cfg.weights);
      if (!std::isfinite(l_total.item())) {
        char msg[256];
        std::snprintf(msg, sizeof(msg), "non-finite loss at epoch %d, batch %zu: L_atk=%g L_sm=%g L_cm=%g L_total=%g",
                      epoch, start / batch, l_atk.item(), l_sm.item(), l_cm.item(), l_total.item());
        throw AttackDiverged(msg);
      }
      note(AttackStage::update);
      l_total.backward();
      adam_step(eta, adam);
      for (auto& v : eta.mutable_data()) v = std::clamp(v, 0.0, 1.0);
      sum.attack += l_atk.item();
      sum.smooth += l_sm.item();
      sum.camouflage += l_cm.item();
      sum.total += l_total.item();
      ++steps;
    }
    const double n = static_cast<double>(steps);
    report.epochs.push_back({sum.attack / n, sum.smooth / n, sum.camouflage / n, sum.total / n});
  }
  report.texture = Image::from_tensor(eta.detach());
  return report;
}

namespace detail {

struct BucketRule {
  std::string name;
  std::function<bool(const SceneSample&)> contains;
};

inline std::vector<BucketRule> bucket_rules() {
  std::vector<BucketRule> rules;
  rules.push_back({"all", [](const SceneSample&) { return true; }});
  for (auto k : {PrimitiveKind::sphere, PrimitiveKind::box, PrimitiveKind::capsule})
    rules.push_back({std::string("kind:") + to_string(k), [k](const SceneSample& s) { return s.kind == k; }});
  auto band = [&](const std::string& family, double CameraPose::*field, std::vector<double> edges) {
    for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
      const double lo = edges[i], hi = edges[i + 1];
      const bool last = i + 2 == edges.size();
      char name[64];
      std::snprintf(name, sizeof(name), "%s:%g-%g", family.c_str(), lo, hi);
      rules.push_back({name, [=](const SceneSample& s) {
                         const double v = s.pose.*field;
                         return v >= lo && (v < hi || (last && v <= hi));
                       }});
    }
  };
  band("distance", &CameraPose::distance, {5, 8, 11, 15});
  band("pitch", &CameraPose::pitch, {0, 15, 30, 45});
  band("rotation", &CameraPose::rotation, {0, 90, 180, 270, 360});
  return rules;
}

}  // namespace detail

/// Renders `texture` onto every scene (no augmentation), runs the detector
/// and reports class-agnostic AP@0.5 at `cfg.score_threshold` plus the mean
/// best valid detection score, overall and per kind / distance / pitch /
/// rotation bucket. Empty buckets are omitted with a warning.
inline EvalTable evaluate_texture(const Image& texture, const std::vector<AttackScene>& scenes,
                                  const ToyDetector& detector, const AttackConfig& cfg, bool warn_empty = true) {
  if (scenes.empty()) throw std::invalid_argument("evaluate_texture: no scenes");
  const Tensor eta = texture.to_tensor();
  std::vector<std::vector<Detection>> dets;
  std::vector<double> best;
  for (const auto& scene : scenes) {
    const Tensor x = adversarial_image(eta, scene, ProjectionAugmentation{}, cfg.tile_period);
    const auto out = detector.detect(x);
    auto d = out.detections(0);
    std::erase_if(d, [&](const Detection& det) { return det.score() < cfg.score_threshold; });
    dets.push_back(std::move(d));
    best.push_back(max(valid_detection_scores(out, 0, scene.sample.gt_box, cfg.weights.iou_threshold)).item());
  }
  EvalTable table;
  for (const auto& rule : detail::bucket_rules()) {
    std::vector<std::vector<Detection>> bd;
    std::vector<std::vector<Box>> bg;
    double score = 0.0;
    for (std::size_t i = 0; i < scenes.size(); ++i)
      if (rule.contains(scenes[i].sample)) {
        bd.push_back(dets[i]);
        bg.push_back({scenes[i].sample.gt_box});
        score += best[i];
      }
    if (bd.empty()) {
      if (warn_empty && rule.name.rfind("kind:", 0) != 0)
        std::cerr << "warning: evaluation bucket " << rule.name << " is empty; omitted\n";
      continue;
    }
    table.buckets.push_back(
        {rule.name, bd.size(), 100.0 * average_precision_50(bd, bg), score / static_cast<double>(bd.size())});
  }
  return table;
}

inline void write_attack_csv(const std::filesystem::path& path, const AttackReport& report) {
  io::atomic_write(path, [&](std::ostream& os) {
    os << "epoch,l_atk,l_sm,l_cm,l_total\n";
    char line[160];
    for (std::size_t e = 0; e < report.epochs.size(); ++e) {
      const auto& l = report.epochs[e];
      std::snprintf(line, sizeof(line), "%zu,%.9f,%.9f,%.9f,%.9f\n", e + 1, l.attack, l.smooth, l.camouflage, l.total);
      os << line;
    }
  });
}

/// One row per bucket present in `after`; `split` labels the scene set.
inline void append_eval_rows(std::ostream& os, const std::string& split, const EvalTable& before,
                             const EvalTable& after) {
  char line[256];
  for (const auto& b : after.buckets) {
    const auto* g = before.find(b.name);
    if (!g) continue;
    std::snprintf(line, sizeof(line), "%s,%s,%zu,%.4f,%.4f,%.6f,%.6f\n", split.c_str(), b.name.c_str(), b.images,
                  g->ap, b.ap, g->mean_score, b.mean_score);
    os << line;
  }
}

inline constexpr const char* kEvalCsvHeader = "split,bucket,images,ap_gray,ap_texture,score_gray,score_texture\n";

}  // namespace active
