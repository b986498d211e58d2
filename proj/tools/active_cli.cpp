// Command-line front end: scene generation, model training, colour
// extraction, texture optimisation, evaluation and preview renders.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "active/config.hpp"
#include "active/dataset_io.hpp"
#include "active/image_io.hpp"
#include "active/pipeline.hpp"

namespace fs = std::filesystem;
using namespace active;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string dataset, ntr, detector, colors, out, texture;
  int previews = 4;
};

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw std::runtime_error(what + " not found: " + p.string());
}

Image load_texture(const fs::path& p) {
  require_file(p, "texture");
  Image t = p.extension() == ".raw" ? read_raw(p) : read_png(p, 3);
  if (t.channels != 3 || t.height != t.width) throw std::runtime_error("texture must be square RGB: " + p.string());
  return t;
}

NtrModel load_ntr(const PipelineConfig& cfg) {
  require_file(cfg.ntr_checkpoint, "NTR checkpoint");
  auto m = NtrModel::from_weight_file(read_weights(cfg.ntr_checkpoint));
  m.set_trainable(false);
  return m;
}

ToyDetector load_detector(const PipelineConfig& cfg) {
  require_file(cfg.detector_checkpoint, "detector checkpoint");
  auto m = ToyDetector::from_weight_file(read_weights(cfg.detector_checkpoint));
  m.set_trainable(false);
  return m;
}

int gen_scenes(const PipelineConfig& cfg) {
  const auto b = build_benchmark(cfg.benchmark);
  write_benchmark(cfg.dataset, b, cfg.benchmark);
  for (const auto& name : split_names())
    std::printf("%-10s %4zu scenes %5zu records\n", name.c_str(), split(b, name).scenes.size(),
                split(b, name).records.size());
  return 0;
}

int train_ntr(const PipelineConfig& cfg) {
  const auto train = read_split(cfg.dataset, "ntr_train");
  const auto test = read_split(cfg.dataset, "ntr_test");
  NtrModel model(cfg.ntr_model);
  const auto report = ntr_train(model, train, cfg.ntr, test.records.empty() ? nullptr : &test);
  write_weights(cfg.ntr_checkpoint, model.to_weight_file());
  fs::create_directories(cfg.output_dir);
  io::atomic_write(cfg.output_dir / "ntr_report.csv", [&](std::ostream& os) {
    os << "epoch,loss\n";
    char line[64];
    for (std::size_t e = 0; e < report.epoch_loss.size(); ++e) {
      std::snprintf(line, sizeof(line), "%zu,%.9f\n", e + 1, report.epoch_loss[e]);
      os << line;
    }
  });
  std::printf("ntr: %zu train records, final loss %.6f, held-out SSIM %.4f (constant baseline %.4f)\n",
              report.train_records, report.epoch_loss.back(), report.heldout_ssim, report.baseline_ssim);
  return 0;
}

int train_detector(PipelineConfig cfg) {
  const auto ds = read_split(cfg.dataset, "detector");
  if (ds.scenes.empty()) throw std::runtime_error("detector split is empty");
  cfg.detector_model.image_size = ds.scenes.front().width();
  ToyDetector model(cfg.detector_model);
  const auto data = detector_training_set(ds, cfg.detector.seed);
  const auto report = train_toy_detector(model, data, cfg.detector);
  write_weights(cfg.detector_checkpoint, model.to_weight_file());
  std::printf("detector: %zu images, loss %.4f -> %.4f\n", data.size(), report.initial_loss, report.epoch_loss.back());
  return 0;
}

int extract_colors(const PipelineConfig& cfg) {
  const auto ds = read_split(cfg.dataset, "attack");
  std::vector<Image> backgrounds;
  std::vector<Mask> masks;
  for (const auto& s : ds.scenes) {
    backgrounds.push_back(s.x_bg);
    masks.push_back(s.x_m);
  }
  const auto set = extract_dominant_colors(backgrounds, cfg.attack.colors_k, &masks, cfg.attack.seed);
  if (cfg.colors.has_parent_path()) fs::create_directories(cfg.colors.parent_path());
  write_colors(cfg.colors, set);
  for (const auto& c : set.colors) std::printf("%.4f %.4f %.4f\n", c[0], c[1], c[2]);
  return 0;
}

/// Gray-versus-texture evaluation on the held-out splits, written as CSV.
void write_evaluation(const PipelineConfig& cfg, const NtrModel& ntr, const ToyDetector& det, const Image& texture,
                      const fs::path& path) {
  const Image gray = constant_texture(texture.height, cfg.benchmark.scene.base_color);
  std::string body = kEvalCsvHeader;
  for (const char* name : {"eval", "unseen"}) {
    const auto scenes = prepare_scenes(read_split(cfg.dataset, name), ntr);
    if (scenes.empty()) continue;
    const auto before = evaluate_texture(gray, scenes, det, cfg.attack);
    const auto after = evaluate_texture(texture, scenes, det, cfg.attack);
    std::ostringstream os;
    append_eval_rows(os, name, before, after);
    body += os.str();
    std::printf("%-7s AP@0.5 gray %6.2f -> texture %6.2f, mean valid score %.4f -> %.4f\n", name,
                before.overall().ap, after.overall().ap, before.overall().mean_score, after.overall().mean_score);
  }
  io::atomic_write(path, [&](std::ostream& os) { os << body; });
}

int attack(const PipelineConfig& cfg) {
  require_file(cfg.dataset / "manifest.json", "dataset manifest");
  require_file(cfg.colors, "colour file");
  const auto ntr = load_ntr(cfg);
  const auto det = load_detector(cfg);
  const auto palette = read_colors(cfg.colors);
  const auto scenes = prepare_scenes(read_split(cfg.dataset, "attack"), ntr);
  const auto report = run_attack(cfg.attack, scenes, det, palette);
  fs::create_directories(cfg.output_dir);
  write_png(cfg.output_dir / "texture.png", report.texture);
  write_raw(cfg.output_dir / "texture.raw", report.texture);
  write_attack_csv(cfg.output_dir / "attack_report.csv", report);
  const auto& first = report.epochs.front();
  const auto& last = report.epochs.back();
  std::printf("attack: %d epochs, L_total %.4f -> %.4f (L_atk %.4f -> %.4f)\n", cfg.attack.epochs, first.total,
              last.total, first.attack, last.attack);
  write_evaluation(cfg, ntr, det, report.texture, cfg.output_dir / "attack_eval.csv");
  return 0;
}

int eval(const PipelineConfig& cfg, const Options& o) {
  require_file(cfg.dataset / "manifest.json", "dataset manifest");
  const Image texture = load_texture(o.texture.empty() ? cfg.output_dir / "texture.raw" : fs::path(o.texture));
  fs::create_directories(cfg.output_dir);
  write_evaluation(cfg, load_ntr(cfg), load_detector(cfg), texture, cfg.output_dir / "eval.csv");
  return 0;
}

/// Side-by-side strip: reference | NTR render | ground-truth render.
int render_preview(const PipelineConfig& cfg, const Options& o) {
  require_file(cfg.dataset / "manifest.json", "dataset manifest");
  const Image texture = load_texture(o.texture.empty() ? cfg.output_dir / "texture.raw" : fs::path(o.texture));
  const auto ntr = load_ntr(cfg);
  fs::create_directories(cfg.output_dir);
  write_png(cfg.output_dir / "preview_texture.png", texture);
  const Tensor eta = texture.to_tensor();
  for (const char* name : {"eval", "unseen"}) {
    const auto ds = read_split(cfg.dataset, name);
    const auto scenes = prepare_scenes(ds, ntr);
    for (std::size_t i = 0; i < scenes.size() && static_cast<int>(i) < o.previews; ++i) {
      const auto& s = scenes[i].sample;
      const Image ntr_img = Image::from_tensor(adversarial_image(eta, scenes[i], {}, cfg.attack.tile_period));
      const Tensor eta_p = triplanar_project(eta, s.x_d, s.cam, {}, cfg.attack.tile_period);
      const Image gt_img = render_ground_truth(s, Image::from_tensor(eta_p));
      Image strip(s.height(), s.width() * 3, 3);
      const Image* parts[3] = {&s.x_ref, &ntr_img, &gt_img};
      for (int p = 0; p < 3; ++p)
        for (int r = 0; r < s.height(); ++r)
          for (int c = 0; c < s.width(); ++c)
            for (int k = 0; k < 3; ++k) strip.at(r, p * s.width() + c, k) = parts[p]->at(r, c, k);
      char file[64];
      std::snprintf(file, sizeof(file), "preview_%s_%02zu.png", name, i);
      write_png(cfg.output_dir / file, strip);
    }
  }
  std::printf("previews written to %s\n", cfg.output_dir.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial camouflage texture toolkit"};
  app.require_subcommand(1);
  Options o;

  auto add = [&](const std::string& name, const std::string& help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config, "key = value configuration file");
    sub->add_option("--seed", o.seed, "master seed (overrides the config)");
    sub->add_option("--dataset", o.dataset, "scene directory");
    sub->add_option("--out", o.out, "output directory");
    return sub;
  };
  add("gen-scenes", "render the synthetic benchmark to the dataset directory");
  auto* tntr = add("train-ntr", "train the neural texture renderer");
  tntr->add_option("--ntr-checkpoint", o.ntr, "NTR weight file to write");
  auto* tdet = add("train-detector", "train the toy detector");
  tdet->add_option("--detector-checkpoint", o.detector, "detector weight file to write");
  auto* cols = add("extract-colors", "k-means dominant colours of the attack-scene backgrounds");
  cols->add_option("--colors", o.colors, "colour file to write");
  std::vector<CLI::App*> consumers{add("attack", "optimise an adversarial texture"),
                                   add("eval", "evaluate a texture against the gray baseline"),
                                   add("render-preview", "write preview renders of a texture")};
  for (auto* sub : consumers) {
    sub->add_option("--ntr-checkpoint", o.ntr, "NTR weight file");
    if (sub->get_name() != "render-preview") sub->add_option("--detector-checkpoint", o.detector, "detector weight file");
    if (sub->get_name() == "attack") sub->add_option("--colors", o.colors, "colour file");
    else sub->add_option("--texture", o.texture, "texture PNG or raw file (default <out>/texture.raw)");
  }
  consumers[2]->add_option("--count", o.previews, "scenes per split to preview")->check(CLI::NonNegativeNumber);
  app.footer("Configuration keys (key = value):\n" + [] {
    std::string s;
    for (const auto& k : config_keys()) s += "  " + k.name + "  " + k.help + "\n";
    return s;
  }());

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  PipelineConfig cfg;
  try {
    if (!o.config.empty()) {
      if (!fs::exists(o.config)) throw ConfigError("config file not found: " + o.config);
      cfg = load_config(o.config);
    }
    if (o.seed) cfg.set_seed(*o.seed);
    if (!o.dataset.empty()) cfg.dataset = o.dataset;
    if (!o.out.empty()) cfg.output_dir = o.out;
    if (!o.ntr.empty()) cfg.ntr_checkpoint = o.ntr;
    if (!o.detector.empty()) cfg.detector_checkpoint = o.detector;
    if (!o.colors.empty()) cfg.colors = o.colors;
    cfg.attack.validate();
    cfg.benchmark.poses.validate();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "gen-scenes") return gen_scenes(cfg);
    if (cmd == "train-ntr") return train_ntr(cfg);
    if (cmd == "train-detector") return train_detector(cfg);
    if (cmd == "extract-colors") return extract_colors(cfg);
    if (cmd == "attack") return attack(cfg);
    if (cmd == "eval") return eval(cfg, o);
    if (cmd == "render-preview") return render_preview(cfg, o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
