#pragma once

// Grid detector used as the white-box target, and the IoU / AP@0.5
// measurement code.
//
// Each of the S x S cells predicts one box, an objectness score and class
// confidences. Box centres are sigmoid offsets inside the cell; sizes are
// sigmoid fractions of the image extent.

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "active/checkpoint.hpp"
#include "active/image.hpp"
#include "active/tensor.hpp"

namespace active {

struct Detection {
  Box box;
  std::vector<double> class_confidences;
  double objectness = 0.0;

  /// Class-max confidence times objectness.
  double score() const {
    return *std::max_element(class_confidences.begin(), class_confidences.end()) * objectness;
  }
  int predicted_class() const {
    return static_cast<int>(std::max_element(class_confidences.begin(), class_confidences.end()) -
                            class_confidences.begin());
  }
};

struct GroundTruth {
  Box box;
  int class_id = 0;
};

inline double iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// Pooled AP at IoU 0.5 over all images: detections ranked by score, greedy
/// matching (each ground truth used once), all-point interpolated area under
/// the precision envelope. Returns a value in [0,1].
inline double average_precision_50(const std::vector<std::vector<Detection>>& detections,
                                   const std::vector<std::vector<Box>>& ground_truths) {
  if (detections.size() != ground_truths.size())
    throw std::invalid_argument("average_precision_50: image count mismatch");
  std::size_t total_gt = 0;
  for (const auto& g : ground_truths) total_gt += g.size();
  if (total_gt == 0) throw std::invalid_argument("average_precision_50: no ground truths");

  struct Ranked {
    double score;
    std::size_t image, index;
  };
  std::vector<Ranked> ranked;
  for (std::size_t i = 0; i < detections.size(); ++i)
    for (std::size_t k = 0; k < detections[i].size(); ++k) ranked.push_back({detections[i][k].score(), i, k});
  // Stable: equal scores keep image/detection order.
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

  std::vector<std::vector<bool>> used(ground_truths.size());
  for (std::size_t i = 0; i < ground_truths.size(); ++i) used[i].assign(ground_truths[i].size(), false);

  std::vector<double> precision, recall;
  std::size_t tp = 0, fp = 0;
  for (const auto& r : ranked) {
    const Box& box = detections[r.image][r.index].box;
    double best = 0.5;
    std::ptrdiff_t match = -1;
    for (std::size_t g = 0; g < ground_truths[r.image].size(); ++g) {
      if (used[r.image][g]) continue;
      const double o = iou(box, ground_truths[r.image][g]);
      if (o >= best) {
        best = o;
        match = static_cast<std::ptrdiff_t>(g);
      }
    }
    if (match >= 0) {
      used[r.image][static_cast<std::size_t>(match)] = true;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
  }
  // Monotone envelope from the right, then sum over recall steps.
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

struct DetectorConfig {
  int image_size = 64;
  int grid = 8;
  int classes = 3;
  int base_width = 16;
  std::uint64_t seed = 3;
};

/// Differentiable detector outputs for a batch of N images, C = S*S cells.
struct DetectorOutput {
  Tensor boxes;        ///< [N,C,4] pixel (x_min, y_min, x_max, y_max)
  Tensor class_conf;   ///< [N,C,Y] softmax confidences
  Tensor objectness;   ///< [N,C] sigmoid
  Tensor raw;          ///< [N,S,S,4+1+Y] head pre-activations
  std::size_t batch = 0, cells = 0, classes = 0;

  std::vector<Detection> detections(std::size_t image) const {
    std::vector<Detection> out(cells);
    const auto b = boxes.data(), c = class_conf.data(), o = objectness.data();
    for (std::size_t k = 0; k < cells; ++k) {
      const std::size_t bi = (image * cells + k) * 4;
      out[k].box = {b[bi], b[bi + 1], b[bi + 2], b[bi + 3]};
      out[k].class_confidences.assign(c.begin() + static_cast<std::ptrdiff_t>((image * cells + k) * classes),
                                      c.begin() + static_cast<std::ptrdiff_t>((image * cells + k + 1) * classes));
      out[k].objectness = o[image * cells + k];
    }
    return out;
  }
};

/// Stride-2 convolution stages down to the S x S grid, two context
/// convolutions, then a 1x1 head with 4 + 1 + Y channels per cell.
class ToyDetector {
 public:
  explicit ToyDetector(DetectorConfig cfg = {}) : cfg_(cfg) {
    if (cfg.image_size % cfg.grid != 0) throw std::invalid_argument("detector: image size must be a multiple of the grid");
    int ratio = cfg.image_size / cfg.grid;
    stages_ = 0;
    while (ratio > 1) {
      if (ratio % 2) throw std::invalid_argument("detector: image/grid ratio must be a power of two");
      ratio /= 2;
      ++stages_;
    }
    auto rng = make_stream(cfg.seed, 0xde7);
    std::size_t cin = 3, w = static_cast<std::size_t>(cfg.base_width);
    auto conv = [&](const std::string& name, std::size_t k, std::size_t in, std::size_t out, double gain = 1.0) {
      std::normal_distribution<double> dist(0.0, gain * std::sqrt(2.0 / static_cast<double>(k * k * in)));
      std::vector<double> kernel(k * k * in * out);
      for (auto& v : kernel) v = dist(rng);
      params_.push_back({name + ".kernel", Tensor({k, k, in, out}, std::move(kernel), true)});
      params_.push_back({name + ".bias", Tensor::zeros({out}, true)});
    };
    for (int s = 0; s < stages_; ++s) {
      const std::size_t out = w << std::min(s, 2);
      conv("stage" + std::to_string(s + 1), 3, cin, out);
      cin = out;
    }
    conv("context1", 3, cin, cin);
    conv("context2", 3, cin, cin);
    conv("head", 1, cin, static_cast<std::size_t>(5 + cfg.classes), 0.1);
  }

  const DetectorConfig& config() const { return cfg_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  void set_trainable(bool on) {
    for (auto& p : params_) {
      p.value.set_requires_grad(on);
      if (!on) p.value.clear_grad();
    }
  }

  /// Zeroes every weight and bias (objectness becomes sigmoid(0) = 0.5).
  void zero_weights() {
    for (auto& p : params_)
      for (auto& v : p.value.mutable_data()) v = 0.0;
  }

  /// Runs the detector on images [N,H,W,3] (or one [H,W,3]).
  DetectorOutput detect(const Tensor& images) const {
    Tensor x = images;
    if (x.rank() == 3) x = reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
    const auto res = static_cast<std::size_t>(cfg_.image_size);
    if (x.rank() != 4 || x.dim(1) != res || x.dim(2) != res || x.dim(3) != 3)
      throw ShapeError("detector expects [N," + std::to_string(res) + "," + std::to_string(res) + ",3] images, got " +
                       shape_string(x.shape()));
    std::size_t p = 0;
    auto layer = [&](const Tensor& in, std::size_t stride) {
      const Tensor& k = params_[p++].value;
      const Tensor& b = params_[p++].value;
      return leaky_relu(add_bias(conv2d(in, k, stride), b));
    };
    for (int s = 0; s < stages_; ++s) x = layer(x, 2);
    x = layer(x, 1);
    x = layer(x, 1);
    const Tensor raw = add_bias(conv2d(x, params_[p].value, 1), params_[p + 1].value);

    const std::size_t N = raw.dim(0), S = static_cast<std::size_t>(cfg_.grid), Y = static_cast<std::size_t>(cfg_.classes);
    const std::size_t cells = S * S, D = 5 + Y;
    const Tensor flat = reshape(raw, {N, cells, D});
    const Tensor geo = sigmoid(slice(flat, 2, 0, 4));
    const Tensor obj = reshape(sigmoid(slice(flat, 2, 4, 5)), {N, cells});
    const Tensor conf = softmax(slice(flat, 2, 5, D));

    // Box corners are linear in the sigmoid outputs: build them with take +
    // constant affine maps so gradients flow back to the image.
    const double cell = static_cast<double>(res) / static_cast<double>(S);
    std::vector<std::size_t> idx_cx, idx_cy, idx_w, idx_h;
    std::vector<double> off_x, off_y;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t k = 0; k < cells; ++k) {
        const std::size_t base = (n * cells + k) * 4;
        idx_cx.push_back(base);
        idx_cy.push_back(base + 1);
        idx_w.push_back(base + 2);
        idx_h.push_back(base + 3);
        off_x.push_back(static_cast<double>(k % S) * cell);
        off_y.push_back(static_cast<double>(k / S) * cell);
      }
    const std::size_t M = N * cells;
    const Tensor cx = add(mul(take(geo, idx_cx), cell), Tensor({M}, off_x));
    const Tensor cy = add(mul(take(geo, idx_cy), cell), Tensor({M}, off_y));
    const Tensor half_w = mul(take(geo, idx_w), 0.5 * static_cast<double>(res));
    const Tensor half_h = mul(take(geo, idx_h), 0.5 * static_cast<double>(res));
    const Tensor x0 = reshape(sub(cx, half_w), {M, 1});
    const Tensor y0 = reshape(sub(cy, half_h), {M, 1});
    const Tensor x1 = reshape(add(cx, half_w), {M, 1});
    const Tensor y1 = reshape(add(cy, half_h), {M, 1});
    const Tensor boxes = reshape(concat_last(concat_last(x0, y0), concat_last(x1, y1)), {N, cells, 4});

    DetectorOutput out;
    out.boxes = boxes;
    out.class_conf = conf;
    out.objectness = obj;
    out.raw = raw;
    out.batch = N;
    out.cells = cells;
    out.classes = Y;
    return out;
  }

  WeightFile to_weight_file() const {
    WeightFile wf{"detector", to_arrays(params_)};
    wf.arrays.push_back({"meta.config",
                         {4},
                         {static_cast<double>(cfg_.image_size), static_cast<double>(cfg_.grid),
                          static_cast<double>(cfg_.classes), static_cast<double>(cfg_.base_width)}});
    return wf;
  }
  static ToyDetector from_weight_file(const WeightFile& wf) {
    if (wf.kind != "detector")
      throw std::runtime_error("weight file holds a '" + wf.kind + "' model, expected 'detector'");
    const auto& meta = wf.find("meta.config").data;
    DetectorConfig cfg;
    cfg.image_size = static_cast<int>(meta.at(0));
    cfg.grid = static_cast<int>(meta.at(1));
    cfg.classes = static_cast<int>(meta.at(2));
    cfg.base_width = static_cast<int>(meta.at(3));
    ToyDetector d(cfg);
    load_arrays(d.params_, wf);
    return d;
  }

 private:
  DetectorConfig cfg_;
  int stages_ = 0;
  std::vector<Parameter> params_;
};

/// A labelled training image.
struct LabeledImage {
  Image image;
  GroundTruth gt;
};

struct DetectorTrainOptions {
  int epochs = 5;
  int batch_size = 8;
  double lr = 0.003;
  bool cosine_decay = true;  ///< lr * (1 + cos(pi * epoch / epochs)) / 2
  double box_weight = 5.0;
  double noobj_weight = 0.5;
  bool flip = true;  ///< mirror each sample left-right with probability 1/2
  /// Per-sample photometric jitter clamp(c*x + 0.5*(1-c) + b), c in
  /// [1/(1+contrast), 1+contrast], b in [-brightness, brightness]. 0 disables.
  double jitter_contrast = 0.0;
  double jitter_brightness = 0.0;
  std::uint64_t seed = 11;
};

struct DetectorTrainReport {
  std::vector<double> epoch_loss;
  double initial_loss = 0.0;
};

/// YOLO-style loss for a batch: box regression and class cross-entropy on the
/// cell holding each gt centre, objectness BCE on every cell.
inline Tensor detection_loss(const ToyDetector& model, const DetectorOutput& out, const std::vector<GroundTruth>& gts,
                             const DetectorTrainOptions& opt) {
  const auto& cfg = model.config();
  const std::size_t S = static_cast<std::size_t>(cfg.grid), Y = static_cast<std::size_t>(cfg.classes);
  const std::size_t D = 5 + Y, N = out.batch, cells = out.cells;
  const double res = cfg.image_size, cell = res / static_cast<double>(S);

  std::vector<double> obj_target(N * cells, 0.0), obj_weight(N * cells, opt.noobj_weight);
  std::vector<std::size_t> box_idx, cls_idx;
  std::vector<double> box_target;
  for (std::size_t n = 0; n < N; ++n) {
    const Box& b = gts[n].box;
    const double cx = (b.x_min + b.x_max) / 2.0, cy = (b.y_min + b.y_max) / 2.0;
    const auto col = static_cast<std::size_t>(std::clamp(cx / cell, 0.0, static_cast<double>(S) - 1e-9));
    const auto row = static_cast<std::size_t>(std::clamp(cy / cell, 0.0, static_cast<double>(S) - 1e-9));
    const std::size_t k = row * S + col;
    obj_target[n * cells + k] = 1.0;
    obj_weight[n * cells + k] = 1.0;
    const double targets[4] = {cx / cell - static_cast<double>(col), cy / cell - static_cast<double>(row),
                               b.width() / res, b.height() / res};
    for (std::size_t j = 0; j < 4; ++j) {
      box_idx.push_back((n * cells + k) * D + j);
      box_target.push_back(targets[j]);
    }
    cls_idx.push_back((n * cells + k) * Y + static_cast<std::size_t>(gts[n].class_id));
  }
  std::vector<std::size_t> obj_idx(N * cells);
  for (std::size_t i = 0; i < N * cells; ++i) obj_idx[i] = i * D + 4;

  const Tensor flat = reshape(out.raw, {N * cells * D});
  const Tensor box_pred = sigmoid(take(flat, box_idx));
  const Tensor box_err = sub(box_pred, Tensor({box_target.size()}, box_target));
  const Tensor box_loss = mul(sum(mul(box_err, box_err)), opt.box_weight);
  const Tensor obj_loss = bce_with_logits(take(flat, obj_idx), obj_target, obj_weight);
  const Tensor logits = reshape(slice(reshape(out.raw, {N * cells, D}), 1, 5, D), {N * cells, Y});
  const Tensor cls_loss = neg(sum(take(reshape(log_softmax(logits), {N * cells * Y}), cls_idx)));
  return mul(add(add(box_loss, obj_loss), cls_loss), 1.0 / static_cast<double>(N));
}

inline DetectorTrainReport train_toy_detector(ToyDetector& model, const std::vector<LabeledImage>& data,
                                              const DetectorTrainOptions& opt = {}) {
  if (data.empty()) throw std::invalid_argument("train_toy_detector: empty dataset");
  std::vector<bool> seen(static_cast<std::size_t>(model.config().classes), false);
  for (const auto& d : data) {
    if (d.gt.class_id < 0 || d.gt.class_id >= model.config().classes)
      throw std::invalid_argument("train_toy_detector: class id out of range");
    seen[static_cast<std::size_t>(d.gt.class_id)] = true;
  }
  if (std::count(seen.begin(), seen.end(), true) < 2)
    std::cerr << "warning: detector training data holds a single class; the class head is degenerate\n";

  model.set_trainable(true);
  std::vector<AdamState> states(model.parameters().size());
  for (auto& s : states) s.lr = opt.lr;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_stream(opt.seed, 0xd7);
  const std::size_t batch = static_cast<std::size_t>(std::max(1, opt.batch_size));
  DetectorTrainReport report;

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    if (opt.cosine_decay)
      for (auto& s : states)
        s.lr = opt.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / static_cast<double>(opt.epochs)));
    double total = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::vector<double> pixels;
      std::vector<GroundTruth> gts;
      for (std::size_t k = start; k < end; ++k) {
        const auto& d = data[order[k]];
        GroundTruth gt = d.gt;
        if (opt.flip && std::bernoulli_distribution(0.5)(rng)) {
          const int W = d.image.width;
          for (int r = 0; r < d.image.height; ++r)
            for (int c = W - 1; c >= 0; --c) {
              const auto px = d.image.pixels.begin() + (static_cast<std::ptrdiff_t>(r) * W + c) * 3;
              pixels.insert(pixels.end(), px, px + 3);
            }
          gt.box = {W - d.gt.box.x_max, d.gt.box.y_min, W - d.gt.box.x_min, d.gt.box.y_max};
        } else {
          pixels.insert(pixels.end(), d.image.pixels.begin(), d.image.pixels.end());
        }
        if (opt.jitter_contrast > 0.0 || opt.jitter_brightness > 0.0) {
          const double c = std::exp(uniform(rng, -1.0, 1.0) * std::log1p(opt.jitter_contrast));
          const double b = uniform(rng, -opt.jitter_brightness, opt.jitter_brightness);
          for (auto it = pixels.end() - static_cast<std::ptrdiff_t>(d.image.pixels.size()); it != pixels.end(); ++it)
            *it = std::clamp(c * *it + 0.5 * (1.0 - c) + b, 0.0, 1.0);
        }
        gts.push_back(gt);
      }
      const auto& first = data[order[start]].image;
      const Tensor images({end - start, static_cast<std::size_t>(first.height), static_cast<std::size_t>(first.width), 3},
                          std::move(pixels));
      const Tensor loss = detection_loss(model, model.detect(images), gts, opt);
      if (epoch == 0 && start == 0) report.initial_loss = loss.item();
      loss.backward();
      for (std::size_t p = 0; p < states.size(); ++p) adam_step(model.parameters()[p].value, states[p]);
      total += loss.item();
      ++steps;
    }
    report.epoch_loss.push_back(total / static_cast<double>(steps));
  }
  model.set_trainable(false);
  return report;
}

/// Detections at or above `score_threshold` for every image.
inline std::vector<std::vector<Detection>> run_detector(const ToyDetector& model, const std::vector<Image>& images,
                                                        double score_threshold = 0.30) {
  std::vector<std::vector<Detection>> out;
  for (const auto& img : images) {
    auto dets = model.detect(img.to_tensor()).detections(0);
    std::erase_if(dets, [&](const Detection& d) { return d.score() < score_threshold; });
    out.push_back(std::move(dets));
  }
  return out;
}

}  // namespace active
