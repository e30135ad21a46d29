/*
 * Copyright 2026 The ctvseg Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ctvseg/mcdo.hpp"
#include "ctvseg/pipeline.hpp"
#include "ctvseg/tensor_util.hpp"

using namespace ctvseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("ctvseg_pipe_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const Dataset& tiny_data() {
  static const Dataset d = generate_dataset(31, 2, 1, 1);
  return d;
}

TrainConfig tiny_cfg(int epochs = 1) {
  TrainConfig c = TrainConfig::segmentation_defaults();
  c.epochs = epochs;
  c.base_width = 8;
  c.quiet = true;
  return c;
}

// One-epoch networks laid out for CheckpointSet::in_dir.
const fs::path& tiny_checkpoints() {
  static const fs::path root = [] {
    const auto root = scratch("ckpt");
    const auto& d = tiny_data();
    const auto voi = VoiConfig::defaults();
    TrainConfig loc = tiny_cfg();
    loc.batch_size = 16;
    train_localizer(d.train, d.val, loc, voi, root / "localizer");
    for (auto s : kOrgans) train_organ(s, d.train, d.val, tiny_cfg(), voi, root / std::string(to_string(s)));
    train_ctv(CtvVariant::AGMTN, d.train, d.val, tiny_cfg(), voi, root / "ctv");
    return root;
  }();
  return root;
}

std::vector<std::string> loss_tags(const fs::path& dir) {
  std::ifstream in(dir / "report.json");
  nlohmann::json j;
  in >> j;
  std::vector<std::string> out;
  for (const auto& e : j.at("epochs")) out.push_back(e.at("loss_fn").get<std::string>());
  return out;
}

}  // namespace

TEST_CASE("learning rate halves at 60 and 85 percent of the epochs") {
  TrainConfig c;
  c.epochs = 20;
  c.learning_rate = 1e-3;
  CHECK(learning_rate_at(c, 1) == doctest::Approx(1e-3));
  CHECK(learning_rate_at(c, 12) == doctest::Approx(1e-3));
  CHECK(learning_rate_at(c, 13) == doctest::Approx(5e-4));
  CHECK(learning_rate_at(c, 17) == doctest::Approx(5e-4));
  CHECK(learning_rate_at(c, 18) == doctest::Approx(2.5e-4));
}

TEST_CASE("training config validation and JSON overlay") {
  TrainConfig c = tiny_cfg();
  c.l2_finetune_epochs = 2;
  CHECK_THROWS_AS(c.validate(), UsageError);
  const auto j = nlohmann::json::parse(R"({"epochs": 12, "snapshot_epochs": [2]})");
  const auto d = TrainConfig::from_json(j, TrainConfig::localizer_defaults());
  CHECK(d.epochs == 12);
  CHECK(d.snapshot_epochs == std::vector<int>{2});
  CHECK(d.batch_size == TrainConfig::localizer_defaults().batch_size);
  CHECK_THROWS_AS(TrainConfig::from_json(nlohmann::json::parse(R"({"epochs": "x"})"), c), UsageError);
}

TEST_CASE("empty training data is a data error") {
  const auto& d = tiny_data();
  CHECK_THROWS_AS(train_organ(StructureId::Bladder, {}, d.val, tiny_cfg(), VoiConfig::defaults(), scratch("empty")),
                  DataError);
}

TEST_CASE("localizer switches from L1 to L2 for the final epochs") {
  const auto& d = tiny_data();
  TrainConfig c = tiny_cfg(3);
  c.l2_finetune_epochs = 1;
  c.batch_size = 16;
  const auto dir = scratch("switch");
  train_localizer(d.train, d.val, c, VoiConfig::defaults(), dir);
  const std::vector<std::string> expected{"L1", "L1", "L2"};
  CHECK(loss_tags(dir) == expected);
}

TEST_CASE("organ training is deterministic and writes snapshots") {
  const auto& d = tiny_data();
  TrainConfig c = tiny_cfg(2);
  c.snapshot_epochs = {1};
  const auto a = train_organ(StructureId::FemoralHeadL, d.train, d.val, c, VoiConfig::defaults(), scratch("det_a"));
  const auto b = train_organ(StructureId::FemoralHeadL, d.train, d.val, c, VoiConfig::defaults(), scratch("det_b"));
  REQUIRE(a.epochs.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) CHECK(a.epochs[i].loss == b.epochs[i].loss);
  CHECK(a.snapshots.count(1) == 1);
  CHECK(fs::exists(a.snapshots.at(1).string() + ".pt"));
  auto na = load_checkpoint(a.best_checkpoint).net, nb = load_checkpoint(b.best_checkpoint).net;
  for (const auto& p : na->named_parameters()) CHECK(torch::equal(p.value(), nb->named_parameters()[p.key()]));
}

TEST_CASE("anatomy-guided channels are the scaled CT inside each organ") {
  Rng rng(5, 0);
  for (int trial = 0; trial < 5; ++trial) {
    const Shape s{8, 8, 4};
    Volume ct(s, {});
    Mask bl(s, {}), re(s, {});
    for (std::size_t i = 0; i < ct.size(); ++i) {
      ct[i] = static_cast<float>(rng.uniform(0.0, 1000.0));
      bl[i] = rng.bernoulli(0.3);
      re[i] = rng.bernoulli(0.3);
    }
    const auto x = ctv_input(ct, &bl, &re, true, VoiConfig::defaults().ahe);
    REQUIRE(x.size(0) == 3);
    const auto expect_bl = to_tensor(ct) * to_tensor(bl) * kIntensityScale;
    const auto expect_re = to_tensor(ct) * to_tensor(re) * kIntensityScale;
    CHECK(torch::allclose(x[1], expect_bl, 0.0, 1e-7));
    CHECK(torch::allclose(x[2], expect_re, 0.0, 1e-7));
    CHECK(ctv_input(ct, nullptr, nullptr, false, VoiConfig::defaults().ahe).size(0) == 1);
    CHECK_THROWS_AS(ctv_input(ct, &bl, nullptr, true, VoiConfig::defaults().ahe), DataError);
  }
}

TEST_CASE("MCDO samples depend only on their index") {
  auto net = build_organ_net(StructureId::Bladder, 3, 8);
  const auto x = torch::rand({1, 8, 16, 16});
  const auto all = mcdo_sample(net, x, 4, 11, {});
  const auto some = mcdo_sample(net, x, std::vector<int>{3, 1}, 11, {});
  CHECK(some.samples[0] == all.samples[3]);
  CHECK(some.samples[1] == all.samples[1]);
  CHECK_FALSE(all.samples[0] == all.samples[1]);
  CHECK_THROWS_AS(mcdo_sample(net, x, std::vector<int>{}, 11, {}), UsageError);
}

TEST_CASE("MCDO with keep probability one reproduces the deterministic forward") {
  NetConfig cfg = organ_config(StructureId::Bladder, 8);
  cfg.dropblock.keep_prob = 1.0;
  SegNet net(cfg);
  const auto x = torch::rand({1, 8, 16, 16});
  const auto stack = mcdo_sample(net, x, 3, 0, {});
  const auto det = predict_probability(net, x, {});
  for (const auto& s : stack.samples) CHECK(s == det);
  const auto sum = summarize(stack);
  CHECK(count_foreground(sum.band) == 0);
}

TEST_CASE("checkpointed networks reproduce their forward pass") {
  const auto& d = tiny_data();
  const auto rep = train_organ(StructureId::PenileBulb, d.train, d.val, tiny_cfg(), VoiConfig::defaults(), scratch("fwd"));
  auto a = load_checkpoint(rep.best_checkpoint).net, b = load_checkpoint(rep.best_checkpoint).net;
  const auto x = torch::rand({1, 16, 32, 32});
  const auto pa = predict_probability(a, x, {}), pb = predict_probability(b, x, {});
  double worst = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) worst = std::max(worst, std::abs(double(pa[i]) - pb[i]));
  CHECK(worst <= 1e-6);
}

TEST_CASE("pipeline runs its stages in order and the CTV stage uses only the supplied organs") {
  const auto& c = tiny_data().test.front();
  PipelineConfig pc;
  pc.mcdo_samples = 2;
  Pipeline p(CheckpointSet::in_dir(tiny_checkpoints()), pc);

  StructureSet organs(c.truth.shape(), c.truth.spacing());
  for (auto s : kOrgans) organs.set(s, c.truth.get(s));
  const auto before = p.infer(c.ct, c.id, &c.truth, &organs);
  REQUIRE(before.log.size() == 3);
  CHECK(before.log[0].stage == "localize");
  CHECK(before.log[1].stage == "organs");
  CHECK(before.log[2].stage == "ctv");
  CHECK(before.prediction.has(StructureId::CTV));

  {
    torch::NoGradGuard g;
    for (auto s : kOrgans)
      for (auto& w : p.organ_net(s)->parameters()) w.mul_(-1.0);
  }
  const auto after = p.infer(c.ct, c.id, &c.truth, &organs);
  CHECK(after.prediction.get(StructureId::CTV) == before.prediction.get(StructureId::CTV));
  CHECK_FALSE(after.prediction.get(StructureId::Bladder) == before.prediction.get(StructureId::Bladder));

  const auto dir = scratch("result");
  write_result(before, dir);
  const auto back = read_result(dir);
  CHECK(back.prediction.get(StructureId::CTV) == before.prediction.get(StructureId::CTV));
  CHECK(back.quality == before.quality);
}
