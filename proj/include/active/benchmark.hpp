#pragma once

// The synthetic benchmark: every split the pipeline needs, drawn from
// independent seed streams so their poses and placements never coincide.

#include <cstdint>
#include <string>
#include <vector>

#include "active/config.hpp"
#include "active/scenegen.hpp"

namespace active {

inline const std::vector<PrimitiveKind>& attack_kinds() {
  static const std::vector<PrimitiveKind> k{PrimitiveKind::sphere, PrimitiveKind::box};
  return k;
}
inline PrimitiveKind unseen_kind() { return PrimitiveKind::capsule; }

struct Benchmark {
  Dataset ntr_train;  ///< attack kinds x boundary colours
  Dataset ntr_test;   ///< other poses, random colours
  Dataset detector;   ///< all kinds, gray reference renders
  Dataset attack;     ///< scenes the texture is optimised on
  Dataset eval;       ///< held-out scenes of the attack kinds
  Dataset unseen;     ///< held-out scenes of the unseen kind
};

inline const std::vector<std::string>& split_names() {
  static const std::vector<std::string> n{"ntr_train", "ntr_test", "detector", "attack", "eval", "unseen"};
  return n;
}

inline Dataset& split(Benchmark& b, const std::string& name) {
  if (name == "ntr_train") return b.ntr_train;
  if (name == "ntr_test") return b.ntr_test;
  if (name == "detector") return b.detector;
  if (name == "attack") return b.attack;
  if (name == "eval") return b.eval;
  if (name == "unseen") return b.unseen;
  throw std::invalid_argument("unknown split '" + name + "'");
}
inline const Dataset& split(const Benchmark& b, const std::string& name) {
  return split(const_cast<Benchmark&>(b), name);
}

inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t tag) { return make_stream(seed, tag, 0x5b)(); }

inline std::vector<PrimitiveObject> standard_objects(const std::vector<PrimitiveKind>& kinds) {
  std::vector<PrimitiveObject> out;
  for (auto k : kinds) out.push_back(PrimitiveObject::standard(k));
  return out;
}

inline Benchmark build_benchmark(const BenchmarkOptions& opt) {
  const auto attack_objs = standard_objects(attack_kinds());
  const auto unseen_objs = standard_objects({unseen_kind()});
  std::vector<PrimitiveKind> all = attack_kinds();
  all.push_back(unseen_kind());

  Benchmark b;
  b.ntr_train = generate_dataset(opt.poses, attack_objs, boundary_colors(), opt.ntr_poses, split_seed(opt.seed, 1),
                                 opt.scene);
  b.ntr_test = generate_dataset(opt.poses, attack_objs, {}, opt.ntr_test_poses, split_seed(opt.seed, 2), opt.scene);
  auto rng = make_stream(split_seed(opt.seed, 2), 0xc0);
  for (std::size_t s = 0; s < b.ntr_test.scenes.size(); ++s)
    for (int c = 0; c < opt.ntr_test_colors; ++c) {
      const Rgb color = random_color(rng);
      const auto& scene = b.ntr_test.scenes[s];
      b.ntr_test.records.push_back({s, color, render_ground_truth(scene, flat_projection(scene, color))});
    }
  b.detector =
      generate_dataset(opt.poses, standard_objects(all), {}, opt.detector_scenes, split_seed(opt.seed, 3), opt.scene);
  b.attack = generate_dataset(opt.poses, attack_objs, {}, opt.attack_poses, split_seed(opt.seed, 4), opt.scene);
  b.eval = generate_dataset(opt.poses, attack_objs, {}, opt.eval_poses, split_seed(opt.seed, 5), opt.scene);
  b.unseen = generate_dataset(opt.poses, unseen_objs, {}, opt.eval_poses, split_seed(opt.seed, 6), opt.scene);
  return b;
}

}  // namespace active
