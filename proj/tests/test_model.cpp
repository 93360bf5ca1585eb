#include <doctest.h>

#include <filesystem>

#include "support.hpp"
#include "ucd/json_io.hpp"
#include "ucd/model.hpp"
#include "ucd/objective.hpp"
#include "ucd/parallel.hpp"
#include "ucd/raster_io.hpp"
#include "ucd/synthgen.hpp"

using namespace ucd;
namespace fs = std::filesystem;

namespace {

ModelConfig small(bool tfr = true, EdgeKind kind = EdgeKind::dense) {
  ModelConfig mc;
  mc.backbone.scales = 2;
  mc.backbone.base_width = 4;
  mc.tfr.layers = 1;
  mc.use_tfr = tfr;
  mc.edge_kind = kind;
  mc.seed = 3;
  return mc;
}

}  // namespace

TEST_CASE("inference shapes follow the edge set") {
  Rng rng(1);
  ChangeNet dense(small());
  const Prediction p = infer(dense, testing::random_tensor({4, 3, 8, 8}, rng, 0, 1));
  CHECK(p.seg.shape() == Shape{4, 8, 8});
  CHECK(p.change.shape() == Shape{6, 8, 8});
  const Prediction q = infer(dense, testing::random_tensor({2, 3, 8, 8}, rng, 0, 1));
  CHECK(q.change.shape() == Shape{1, 8, 8});
  ChangeNet adj(small(true, EdgeKind::adjacent));
  CHECK(infer(adj, testing::random_tensor({5, 3, 8, 8}, rng, 0, 1)).change.dim(0) == 4);
}

TEST_CASE("inference is repeatable and independent of the worker count") {
  Rng rng(2);
  ChangeNet model(small());
  const Tensor x = testing::random_tensor({4, 3, 8, 8}, rng, 0, 1);
  set_workers(1);
  const Prediction a = infer(model, x);
  set_workers(3);
  const Prediction b = infer(model, x);
  set_workers(1);
  CHECK(a.seg == b.seg);
  CHECK(a.change == b.change);
}

TEST_CASE("shape mismatches name expected and actual shapes") {
  ChangeNet model(small());
  try {
    infer(model, Tensor({4, 2, 8, 8}));
    FAIL("expected a shape error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("(1, 4, 2, 8, 8)") != std::string::npos);
  }
  CHECK_THROWS_AS(infer(model, Tensor({4, 3, 7, 8})), std::invalid_argument);
}

TEST_CASE("TFR-off models hold no attention parameters and CF adds none") {
  ChangeNet off(small(false));
  for (Parameter* p : off.tensors()) CHECK(p->name.find("attn") == std::string::npos);
  ChangeNet on(small(true));
  std::size_t attention = 0;
  for (Parameter* p : on.tensors()) attention += p->name.find("attn") != std::string::npos;
  CHECK(attention > 0);
  for (Parameter* p : on.tensors()) {
    const bool known = p->name.rfind("encoder.", 0) == 0 || p->name.rfind("tfr.", 0) == 0 ||
                       p->name.rfind("seg_decoder.", 0) == 0 ||
                       p->name.rfind("change_decoder.", 0) == 0;
    CHECK(known);
  }
}

TEST_CASE("full-model gradients match central differences") {
  ModelConfig mc = small();
  mc.backbone.use_batchnorm = false;
  ChangeNet model(mc);
  Rng rng(4);
  const Tensor x = testing::random_tensor({1, 3, 3, 4, 4}, rng, 0, 1);
  const NetworkOutput out = model.forward(x, Mode::train);
  const Tensor rs = testing::random_tensor(out.seg.shape(), rng);
  const Tensor rc = testing::random_tensor(out.change.shape(), rng);
  model.zero_grad();
  model.backward(rs, rc);
  auto loss = [&] {
    const NetworkOutput o = model.forward(x, Mode::train);
    return testing::dot(o.seg, rs) + testing::dot(o.change, rc);
  };
  double worst = 0.0;
  std::size_t probed = 0;
  for (Parameter* p : model.trainable()) {
    // A few entries of every tensor keeps the check fast.
    for (std::size_t i = 0; i < p->value.size(); i += 1 + p->value.size() / 3) {
      const double analytic = p->grad[i], keep = p->value[i];
      p->value[i] = keep + 1e-5;
      const double up = loss();
      p->value[i] = keep - 1e-5;
      const double down = loss();
      p->value[i] = keep;
      worst = std::max(worst, testing::relative_error(analytic, (up - down) / 2e-5));
      ++probed;
    }
  }
  CHECK(probed > 50);
  CHECK(worst <= 1e-4);
}

TEST_CASE("checkpoints round-trip every tensor") {
  const fs::path dir = fs::temp_directory_path() / "ucd_test_model";
  fs::create_directories(dir);
  ChangeNet model(small());
  Rng rng(5);
  // Perturb so the reload cannot pass by re-initializing from the seed.
  for (Parameter* p : model.tensors()) p->value = testing::random_tensor(p->value.shape(), rng);
  save_checkpoint(model, dir / "ckpt");
  const auto back = load_checkpoint(dir / "ckpt");
  REQUIRE(back->tensors().size() == model.tensors().size());
  for (std::size_t i = 0; i < model.tensors().size(); ++i) {
    const Tensor& a = model.tensors()[i]->value;
    const Tensor& b = back->tensors()[i]->value;
    CHECK(testing::max_abs_diff(a, b) <= 1e-6);
  }
  const json index = json::parse(read_file(dir / "ckpt.json"));
  CHECK(index["format"] == "ucd-checkpoint-1");
  CHECK(index["model"]["edge_kind"] == "dense");

  // A corrupted index is rejected.
  json bad = index;
  bad["tensors"][0]["shape"] = {1};
  bad["tensors"][0]["offset"] = index["tensors"][1]["offset"];
  write_file(dir / "bad.json", bad.dump());
  fs::copy_file(dir / "ckpt.rts", dir / "bad.rts", fs::copy_options::overwrite_existing);
  CHECK_THROWS(load_checkpoint(dir / "bad"));
}

TEST_CASE("config json round trip") {
  ModelConfig mc = small(false, EdgeKind::cyclic);
  mc.tfr.heads = 4;
  const json j = mc;
  const ModelConfig back = j.get<ModelConfig>();
  CHECK(back.use_tfr == false);
  CHECK(back.edge_kind == EdgeKind::cyclic);
  CHECK(back.tfr.heads == 4);
  CHECK(back.backbone.base_width == 4);
  CHECK(json::parse(R"({"use_tfr": false})").get<ModelConfig>().backbone.scales == 3);
}
