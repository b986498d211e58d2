#pragma once

// Neural texture renderer: an encoder-decoder that reads only the masked
// reference image and predicts two per-pixel maps, a multiplier and an adder.
// A projected texture is rendered as clamp(eta_p * multiplier + adder, 0, 1),
// so the maps carry pose and lighting while the texture enters linearly.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "active/checkpoint.hpp"
#include "active/image.hpp"
#include "active/scenegen.hpp"
#include "active/tensor.hpp"

namespace active {

/// Mean SSIM over every 8x8 window position and channel, uniform weights,
/// C1 = 0.01^2 and C2 = 0.03^2 for a unit dynamic range.
inline double ssim(const Image& a, const Image& b) {
  constexpr int kWin = 8;
  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  if (!a.same_extent(b)) throw std::invalid_argument("ssim: image extents differ");
  if (a.height < kWin || a.width < kWin) throw std::invalid_argument("ssim: image smaller than the 8x8 window");
  const double n = kWin * kWin;
  double total = 0.0;
  std::size_t count = 0;
  for (int ch = 0; ch < a.channels; ++ch)
    for (int r = 0; r + kWin <= a.height; ++r)
      for (int c = 0; c + kWin <= a.width; ++c) {
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        for (int y = r; y < r + kWin; ++y)
          for (int x = c; x < c + kWin; ++x) {
            const double va = a.at(y, x, ch), vb = b.at(y, x, ch);
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
          }
        const double ma = sa / n, mb = sb / n;
        const double va = saa / n - ma * ma, vb = sbb / n - mb * mb, cov = sab / n - ma * mb;
        total += ((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
        ++count;
      }
  return total / static_cast<double>(count);
}

struct NtrConfig {
  int base_width = 16;
  std::uint64_t seed = 1;
};

struct TransformationFeatures {
  Tensor multiplier;  ///< [N,H,W,3]
  Tensor adder;       ///< [N,H,W,3]
};

namespace detail {

inline Tensor he_kernel(std::mt19937_64& rng, std::size_t k, std::size_t cin, std::size_t cout, double gain = 1.0) {
  std::normal_distribution<double> dist(0.0, gain * std::sqrt(2.0 / static_cast<double>(k * k * cin)));
  std::vector<double> w(k * k * cin * cout);
  for (auto& v : w) v = dist(rng);
  return Tensor({k, k, cin, cout}, std::move(w), true);
}

inline Tensor as_batch(const Tensor& t) {
  if (t.rank() == 4) return t;
  if (t.rank() == 3) {
    Shape s{1};
    s.insert(s.end(), t.shape().begin(), t.shape().end());
    return reshape(t, s);
  }
  throw ShapeError("expected an image tensor [H,W,C] or [N,H,W,C], got " + shape_string(t.shape()));
}

}  // namespace detail

/// Four encoder stages (full, 1/2, 1/4, 1/8 resolution) and four decoder
/// stages with skip concatenation; both heads also see the input image.
class NtrModel {
 public:
  explicit NtrModel(NtrConfig cfg = {}) : cfg_(cfg) {
    auto rng = make_stream(cfg.seed, 0x7e7);
    const std::size_t w = static_cast<std::size_t>(cfg.base_width);
    auto conv = [&](const std::string& name, std::size_t k, std::size_t cin, std::size_t cout) {
      params_.push_back({name + ".kernel", detail::he_kernel(rng, k, cin, cout)});
      params_.push_back({name + ".bias", Tensor::zeros({cout}, true)});
    };
    conv("enc1", 3, 3, w);
    conv("enc2", 3, w, w);
    conv("enc3", 3, w, 2 * w);
    conv("enc4", 3, 2 * w, 2 * w);
    conv("dec4", 3, 2 * w, 2 * w);
    conv("dec3", 3, 4 * w, 2 * w);
    conv("dec2", 3, 3 * w, w);
    conv("dec1", 3, 2 * w, w);
    for (const char* head : {"tf_multiplier", "tf_adder"}) {
      std::normal_distribution<double> small(0.0, 0.01);
      std::vector<double> k((w + 3) * 3);
      for (auto& v : k) v = small(rng);
      params_.push_back({std::string(head) + ".kernel", Tensor({1, 1, w + 3, 3}, std::move(k), true)});
      params_.push_back({std::string(head) + ".bias",
                         Tensor::full({3}, std::string(head) == "tf_multiplier" ? 1.0 : 0.0, true)});
    }
  }

  const NtrConfig& config() const { return cfg_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void set_trainable(bool on) {
    for (auto& p : params_) {
      p.value.set_requires_grad(on);
      if (!on) p.value.clear_grad();
    }
  }

  /// Unit-test hook: multiplier == 1 and adder == 0 everywhere.
  void set_identity_heads() {
    for (auto& p : params_) {
      if (p.name.rfind("tf_", 0) != 0) continue;
      const bool bias_one = p.name == "tf_multiplier.bias";
      for (auto& v : p.value.mutable_data()) v = bias_one ? 1.0 : 0.0;
    }
  }

  /// Predicts the transformation maps from the masked reference image alone.
  TransformationFeatures encode(const Tensor& x_ref_m) const {
    const Tensor x = detail::as_batch(x_ref_m);
    if (x.dim(3) != 3) throw ShapeError("ntr: reference image must have 3 channels");
    if (x.dim(1) % 8 != 0 || x.dim(2) % 8 != 0)
      throw ShapeError("ntr: image extent must be divisible by 8, got " + shape_string(x.shape()));
    auto layer = [&](const Tensor& in, const char* name, std::size_t stride) {
      return leaky_relu(add_bias(conv2d(in, param(std::string(name) + ".kernel"), stride),
                                 param(std::string(name) + ".bias")));
    };
    const Tensor e1 = layer(x, "enc1", 1);
    const Tensor e2 = layer(e1, "enc2", 2);
    const Tensor e3 = layer(e2, "enc3", 2);
    const Tensor e4 = layer(e3, "enc4", 2);
    const Tensor d4 = layer(e4, "dec4", 1);
    const Tensor d3 = layer(concat_last(upsample2x(d4), e3), "dec3", 1);
    const Tensor d2 = layer(concat_last(upsample2x(d3), e2), "dec2", 1);
    const Tensor d1 = layer(concat_last(upsample2x(d2), e1), "dec1", 1);
    const Tensor features = concat_last(d1, x);
    auto head = [&](const char* name) {
      return add_bias(conv2d(features, param(std::string(name) + ".kernel"), 1),
                      param(std::string(name) + ".bias"));
    };
    return {head("tf_multiplier"), head("tf_adder")};
  }

  static Tensor compose(const Tensor& eta_p, const TransformationFeatures& tf) {
    const Tensor p = detail::as_batch(eta_p);
    if (p.shape() != tf.multiplier.shape())
      throw ShapeError("ntr: projected texture " + shape_string(p.shape()) + " does not match reference " +
                       shape_string(tf.multiplier.shape()));
    return clamp(add(mul(p, tf.multiplier), tf.adder), 0.0, 1.0);
  }

  /// x_adv_m for reference x_ref_m and projected texture eta_p, both [N,H,W,3]
  /// (or [H,W,3]); output is batched.
  Tensor forward(const Tensor& x_ref_m, const Tensor& eta_p) const {
    const Tensor r = detail::as_batch(x_ref_m), p = detail::as_batch(eta_p);
    if (r.shape() != p.shape())
      throw ShapeError("ntr: reference " + shape_string(r.shape()) + " and projected texture " +
                       shape_string(p.shape()) + " differ");
    return compose(p, encode(r));
  }

  WeightFile to_weight_file() const {
    WeightFile wf{"ntr", to_arrays(params_)};
    wf.arrays.push_back({"meta.base_width", {1}, {static_cast<double>(cfg_.base_width)}});
    return wf;
  }
  static NtrModel from_weight_file(const WeightFile& wf) {
    if (wf.kind != "ntr") throw std::runtime_error("weight file holds a '" + wf.kind + "' model, expected 'ntr'");
    NtrConfig cfg;
    cfg.base_width = static_cast<int>(wf.find("meta.base_width").data.at(0));
    NtrModel m(cfg);
    load_arrays(m.params_, wf);
    return m;
  }

 private:
  const Tensor& param(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return p.value;
    throw std::logic_error("ntr: missing parameter " + name);
  }

  NtrConfig cfg_;
  std::vector<Parameter> params_;
};

struct NtrTrainOptions {
  int epochs = 20;
  int batch_size = 4;
  double lr = 0.003;
  std::uint64_t seed = 7;
};

struct NtrTrainReport {
  std::vector<double> epoch_loss;
  std::vector<double> step_loss;
  double heldout_ssim = std::nan("");
  double baseline_ssim = std::nan("");
  std::size_t train_records = 0;
  std::size_t test_records = 0;
};

namespace detail {

/// Copies images into one [N,H,W,3] tensor.
inline Tensor stack_images(const std::vector<const Image*>& images) {
  const auto& f = *images.front();
  std::vector<double> data;
  data.reserve(images.size() * f.pixels.size());
  for (const auto* img : images) data.insert(data.end(), img->pixels.begin(), img->pixels.end());
  return Tensor({images.size(), static_cast<std::size_t>(f.height), static_cast<std::size_t>(f.width),
                 static_cast<std::size_t>(f.channels)},
                std::move(data));
}

inline Image mask_image(const SceneSample& s) {
  Image m(s.height(), s.width(), 3);
  for (std::size_t i = 0; i < s.x_m.size(); ++i)
    for (int c = 0; c < 3; ++c) m.pixels[i * 3 + c] = s.x_m[i] ? 1.0 : 0.0;
  return m;
}

}  // namespace detail

/// NTR render of a flat-coloured object, composited over the background.
inline Image ntr_render(const NtrModel& model, const SceneSample& s, const Image& eta_p) {
  const Tensor out = model.forward(s.x_ref_m.to_tensor(), eta_p.to_tensor());
  Image img = Image::from_tensor(out);
  for (std::size_t i = 0; i < s.x_m.size(); ++i)
    for (int c = 0; c < 3; ++c)
      img.pixels[i * 3 + c] = (s.x_m[i] ? img.pixels[i * 3 + c] : 0.0) + s.x_bg.pixels[i * 3 + c];
  return img;
}

/// Mean SSIM of NTR renders against the ground truth over `records`.
inline double evaluate_ntr(const NtrModel& model, const Dataset& ds) {
  if (ds.records.empty()) throw std::invalid_argument("evaluate_ntr: empty dataset");
  double total = 0.0;
  for (const auto& r : ds.records) {
    const auto& s = ds.scenes[r.scene];
    total += ssim(ntr_render(model, s, flat_projection(s, r.color)), r.ground_truth);
  }
  return total / static_cast<double>(ds.records.size());
}

/// SSIM of a predictor that paints every object pixel with the mean training
/// target colour, ignoring both pose and texture.
inline double constant_baseline_ssim(const Dataset& train, const Dataset& test) {
  Rgb mean{0, 0, 0};
  double n = 0;
  for (const auto& r : train.records) {
    const auto& s = train.scenes[r.scene];
    for (std::size_t i = 0; i < s.x_m.size(); ++i)
      if (s.x_m[i]) {
        for (int c = 0; c < 3; ++c) mean[c] += r.ground_truth.pixels[i * 3 + c];
        n += 1;
      }
  }
  for (auto& v : mean) v /= std::max(n, 1.0);
  double total = 0.0;
  for (const auto& r : test.records) {
    const auto& s = test.scenes[r.scene];
    Image pred = s.x_bg;
    for (std::size_t i = 0; i < s.x_m.size(); ++i)
      if (s.x_m[i])
        for (int c = 0; c < 3; ++c) pred.pixels[i * 3 + c] = mean[c];
    total += ssim(pred, r.ground_truth);
  }
  return total / static_cast<double>(test.records.size());
}

/// Fits the NTR by MSE between its composited output and ground-truth renders.
/// When `test` is given, fills in held-out and constant-baseline SSIM.
inline NtrTrainReport ntr_train(NtrModel& model, const Dataset& train, const NtrTrainOptions& opt,
                                const Dataset* test = nullptr) {
  if (train.records.empty()) throw std::invalid_argument("ntr_train: empty dataset");
  model.set_trainable(true);
  std::vector<AdamState> states(model.parameters().size());
  for (auto& s : states) s.lr = opt.lr;

  // Per-scene constant inputs, built once.
  std::vector<Image> masks;
  for (const auto& s : train.scenes) masks.push_back(detail::mask_image(s));
  std::vector<Image> projections;
  for (const auto& r : train.records) projections.push_back(flat_projection(train.scenes[r.scene], r.color));

  NtrTrainReport report;
  report.train_records = train.records.size();
  std::vector<std::size_t> order(train.records.size());
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_stream(opt.seed, 0x4e7);
  const std::size_t batch = static_cast<std::size_t>(std::max(1, opt.batch_size));

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::vector<const Image*> refs, etas, ms, bgs, gts;
      for (std::size_t k = start; k < std::min(order.size(), start + batch); ++k) {
        const auto& rec = train.records[order[k]];
        const auto& scene = train.scenes[rec.scene];
        refs.push_back(&scene.x_ref_m);
        etas.push_back(&projections[order[k]]);
        ms.push_back(&masks[rec.scene]);
        bgs.push_back(&scene.x_bg);
        gts.push_back(&rec.ground_truth);
      }
      const Tensor out = model.forward(detail::stack_images(refs), detail::stack_images(etas));
      const Tensor composite = add(mul(out, detail::stack_images(ms)), detail::stack_images(bgs));
      const Tensor diff = sub(composite, detail::stack_images(gts));
      const Tensor loss = mean(mul(diff, diff));
      loss.backward();
      for (std::size_t p = 0; p < states.size(); ++p) adam_step(model.parameters()[p].value, states[p]);
      report.step_loss.push_back(loss.item());
      epoch_total += loss.item();
      ++steps;
    }
    report.epoch_loss.push_back(epoch_total / static_cast<double>(steps));
  }
  model.set_trainable(false);
  if (test) {
    report.test_records = test->records.size();
    report.heldout_ssim = evaluate_ntr(model, *test);
    report.baseline_ssim = constant_baseline_ssim(train, *test);
  }
  return report;
}

}  // namespace active
