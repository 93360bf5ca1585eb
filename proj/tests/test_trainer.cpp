#include <doctest.h>

#include "support.hpp"
#include "ucd/objective.hpp"
#include "ucd/trainer.hpp"

using namespace ucd;

namespace {

ModelConfig tiny_model() {
  ModelConfig mc;
  mc.backbone.scales = 2;
  mc.backbone.base_width = 4;
  mc.tfr.layers = 1;
  mc.seed = 1;
  return mc;
}

Scene tiny_scene(std::uint64_t seed, std::size_t size = 16) {
  SceneSpec spec;
  spec.seed = seed;
  spec.height = spec.width = size;
  spec.buildings = 3;
  spec.max_extent = 6;
  return generate_scene(spec);
}

// Position of source pixel (r, c) after the documented geometric transform.
std::pair<std::size_t, std::size_t> track(std::size_t r, std::size_t c, std::size_t n,
                                          std::size_t turns, bool hflip, bool vflip) {
  for (std::size_t k = 0; k < turns; ++k) {
    const std::size_t nr = n - 1 - c, nc = r;  // counter-clockwise quarter turn
    r = nr;
    c = nc;
  }
  if (hflip) c = n - 1 - c;
  if (vflip) r = n - 1 - r;
  return {r, c};
}

}  // namespace

TEST_CASE("candidate weighting") {
  const auto uniform = candidate_probabilities(std::vector<double>(20, 0.0), 0.05);
  for (double p : uniform) CHECK(p == doctest::Approx(0.05).epsilon(1e-15));
  std::vector<double> f(20, 0.0);
  f[3] = 1.0;
  const auto p = candidate_probabilities(f, 0.05);
  CHECK(p[3] == doctest::Approx(1.05 / (1.05 + 19 * 0.05)).epsilon(1e-15));
  CHECK(p[3] == doctest::Approx(0.525).epsilon(1e-12));
}

TEST_CASE("weighted draws follow the probabilities") {
  Rng rng(1);
  const std::vector<double> p{0.1, 0.6, 0.3};
  std::vector<int> hits(3);
  for (int i = 0; i < 30000; ++i) hits[draw_index(p, rng)]++;
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(hits[i] / 30000.0 - p[i]) < 0.015);
}

TEST_CASE("timestamps are sorted distinct draws") {
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const auto t = sample_timestamps(7, 4, rng);
    REQUIRE(t.size() == 4);
    for (std::size_t k = 1; k < 4; ++k) CHECK(t[k - 1] < t[k]);
    CHECK(t.back() < 7);
  }
  CHECK(sample_timestamps(4, 4, rng) == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK_THROWS_AS(sample_timestamps(3, 4, rng), std::invalid_argument);
}

TEST_CASE("patch sampling is deterministic and label consistent") {
  const Scene scene = tiny_scene(3, 32);
  TrainConfig cfg;
  cfg.patch_size = 16;
  Rng a(5), b(5);
  for (int i = 0; i < 5; ++i) {
    const Sample x = sample_patch(scene, cfg, a), y = sample_patch(scene, cfg, b);
    CHECK(x.images == y.images);
    CHECK(x.seg == y.seg);
    REQUIRE(x.change.shape() == Shape{6, 16, 16});
    const EdgeSet es(EdgeKind::dense, 4);
    for (std::size_t n = 0; n < es.size(); ++n) {
      CHECK(slice_map(x.change, n) ==
            xor_maps(slice_map(x.seg, es[n].earlier), slice_map(x.seg, es[n].later)));
    }
  }
  cfg.patch_size = 64;
  CHECK_THROWS_AS(sample_patch(scene, cfg, a), std::invalid_argument);
}

TEST_CASE("oversampling prefers windows with change") {
  // One building appears at t = 1 in an otherwise static 64x64 scene.
  Scene scene = tiny_scene(0, 64);
  scene.seg_labels.fill(0.0);
  for (std::size_t t = 1; t < 4; ++t)
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x) scene.seg_labels.at({t, y, x}) = 1.0;
  TrainConfig cfg;
  cfg.patch_size = 16;
  Rng rng(6);
  double with_change = 0, total = 200;
  for (int i = 0; i < int(total); ++i) {
    const Sample s = sample_patch(scene, cfg, rng);
    double sum = 0.0;
    for (double v : s.change.values()) sum += v;
    with_change += sum > 0;
  }
  // A uniformly placed 16x16 window overlaps the corner block with probability
  // (16/49)^2, about 11%; weighting 20 candidates lifts that to roughly 40%.
  CHECK(with_change / total > 0.25);
}

TEST_CASE("geometry transforms") {
  Rng rng(7);
  TrainConfig cfg;
  cfg.patch_size = 16;
  const Sample s = sample_patch(tiny_scene(4, 16), cfg, rng);
  const Sample id = apply_geometry(s, 0, false, false);
  CHECK(id.images == s.images);
  CHECK(id.seg == s.seg);
  const Sample twice = apply_geometry(apply_geometry(s, 2, false, false), 2, false, false);
  CHECK(twice.images == s.images);
  CHECK(twice.change == s.change);

  for (std::size_t k = 0; k < 4; ++k)
    for (bool h : {false, true})
      for (bool v : {false, true}) {
        Sample marked = s;
        marked.images.fill(0.0);
        marked.seg.fill(0.0);
        marked.change.fill(0.0);
        marked.images.at({2, 1, 3, 11}) = 1.0;
        marked.seg.at({2, 3, 11}) = 1.0;
        marked.change.at({4, 3, 11}) = 1.0;
        const Sample out = apply_geometry(marked, k, h, v);
        const auto [r, c] = track(3, 11, 16, k, h, v);
        CHECK(out.images.at({2, 1, r, c}) == 1.0);
        CHECK(out.seg.at({2, r, c}) == 1.0);
        CHECK(out.change.at({4, r, c}) == 1.0);
      }
  Sample rect{Tensor({1, 1, 2, 3}), Tensor({1, 2, 3}), Tensor({0, 2, 3})};
  CHECK_THROWS_AS(apply_geometry(rect, 1, false, false), std::invalid_argument);
}

TEST_CASE("AdamW single step matches the update formula") {
  Parameter p("w", {2});
  p.value = Tensor({2}, {1.0, -2.0});
  p.grad = Tensor({2}, {0.5, -0.25});
  AdamW opt({&p}, 0.1);
  opt.step(0.01);
  // First step: m_hat = g, v_hat = g^2, so the adaptive term is g / (|g| + eps).
  for (std::size_t i = 0; i < 2; ++i) {
    const double w0 = i ? -2.0 : 1.0, g = i ? -0.25 : 0.5;
    const double decayed = w0 - 0.01 * 0.1 * w0;
    CHECK(p.value[i] == doctest::Approx(decayed - 0.01 * g / (std::abs(g) + 1e-8)).epsilon(1e-14));
  }
}

TEST_CASE("one epoch on a tiny scene runs and the loss is finite") {
  TrainConfig cfg;
  cfg.patch_size = 16;
  cfg.batch_size = 2;
  cfg.max_epochs = 1;
  cfg.lr = 1e-3;
  const TrainResult r = train({tiny_scene(1)}, {tiny_scene(2)}, tiny_model(), cfg);
  CHECK(r.steps == 1);
  CHECK(std::isfinite(r.best_val_loss));
  REQUIRE(r.log.size() == 2);
  CHECK(r.log[0].contains("loss"));
  CHECK(r.log[1].contains("val_loss"));
}

TEST_CASE("zero learning rate leaves the parameters unchanged") {
  TrainConfig cfg;
  cfg.patch_size = 16;
  cfg.max_epochs = 2;
  cfg.lr = 0.0;
  const TrainResult r = train({tiny_scene(1)}, {tiny_scene(2)}, tiny_model(), cfg);
  ChangeNet fresh(tiny_model());
  for (Parameter* p : fresh.trainable()) CHECK(r.model->find(p->name).value()->value == p->value);
}

TEST_CASE("the desk model overfits a single sample") {
  const ModelConfig mc = [] {
    ModelConfig m;
    m.seed = 2;
    return m;
  }();
  ChangeNet model(mc);
  TrainConfig cfg;
  cfg.patch_size = 16;
  cfg.batch_size = 1;
  Rng rng(3);
  const Sample s = sample_patch(tiny_scene(5), cfg, rng);
  Trainer trainer(model, cfg);
  const double first = trainer.step({s}, 1e-3).total;
  double last = first;
  for (int i = 1; i < 300; ++i) last = trainer.step({s}, 1e-3).total;
  CHECK(last <= 0.5 * first);
}

TEST_CASE("one loss term per timestamp and edge") {
  ChangeNet model(tiny_model());
  TrainConfig cfg;
  cfg.patch_size = 16;
  Rng rng(4);
  Trainer trainer(model, cfg);
  const StepLoss l = trainer.loss({sample_patch(tiny_scene(6), cfg, rng)});
  CHECK(l.terms == 4 + 6);
  CHECK(l.total == doctest::Approx(l.seg + l.change).epsilon(1e-15));
}

TEST_CASE("early stopping returns the best validation checkpoint and runs are reproducible") {
  TrainConfig cfg;
  cfg.patch_size = 16;
  cfg.batch_size = 2;
  cfg.max_epochs = 6;
  cfg.patience = 2;
  cfg.lr = 3e-3;
  const std::vector<Scene> tr{tiny_scene(1), tiny_scene(2)}, va{tiny_scene(3)};
  const TrainResult a = train(tr, va, tiny_model(), cfg);
  const TrainResult b = train(tr, va, tiny_model(), cfg);
  CHECK(a.log == b.log);
  double best = 1e300;
  for (const auto& line : a.log)
    if (line.contains("val_loss")) best = std::min(best, line["val_loss"].get<double>());
  CHECK(a.best_val_loss == best);
  Trainer check(*a.model, cfg);
  CHECK(check.validation_loss(va) == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("training preconditions") {
  TrainConfig cfg;
  cfg.patch_size = 16;
  CHECK_THROWS_AS(train({}, {tiny_scene(1)}, tiny_model(), cfg), std::invalid_argument);
  cfg.patience = 0;
  CHECK_THROWS_AS(train({tiny_scene(1)}, {tiny_scene(2)}, tiny_model(), cfg),
                  std::invalid_argument);
  cfg = TrainConfig{};
  cfg.patch_size = 15;
  CHECK_THROWS_AS(train({tiny_scene(1)}, {tiny_scene(2)}, tiny_model(), cfg),
                  std::invalid_argument);
  cfg = TrainConfig{};
  cfg.patch_size = 16;
  cfg.base_prob = 0.0;
  CHECK_THROWS_AS(train({tiny_scene(1)}, {tiny_scene(2)}, tiny_model(), cfg),
                  std::invalid_argument);
}
