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
#include <random>
#include <set>

#include "ctvseg/checkpoint.hpp"
#include "ctvseg/dropblock.hpp"
#include "ctvseg/losses.hpp"
#include "ctvseg/nets.hpp"
#include "ctvseg/torch_losses.hpp"

using namespace ctvseg;

namespace {

torch::Tensor randn(std::vector<std::int64_t> shape, std::uint64_t seed) {
  auto gen = at::detail::createCPUGenerator(seed);
  return torch::randn(shape, gen);
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ctvseg_nn_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

bool same_weights(SegNet& a, SegNet& b) {
  auto pa = a->named_parameters(), pb = b->named_parameters();
  if (pa.size() != pb.size()) return false;
  for (const auto& p : pa)
    if (!torch::equal(p.value(), pb[p.key()])) return false;
  return true;
}

}  // namespace

TEST_CASE("localizer emits five channel probabilities per slice") {
  auto net = build_localizer(1, 8);
  torch::NoGradGuard g;
  auto out = net->forward(randn({3, 1, 48, 48}, 2));
  CHECK(out.main.sizes() == torch::IntArrayRef({3, 5, 48, 48}));
  CHECK(out.main.min().item<float>() > 0.0f);
  CHECK(out.main.max().item<float>() < 1.0f);
  CHECK_FALSE(out.aux1.defined());
  CHECK_FALSE(out.dist.defined());
}

TEST_CASE("every organ net maps a VOI to a same-size probability map") {
  torch::NoGradGuard g;
  for (auto s : {StructureId::Bladder, StructureId::Rectum, StructureId::FemoralHeadL, StructureId::PenileBulb}) {
    auto net = build_organ_net(s, 3, 8);
    auto out = net->forward(randn({2, 1, 16, 24, 32}, 4));
    CHECK(out.main.sizes() == torch::IntArrayRef({2, 1, 16, 24, 32}));
    const double m = out.main.mean().item<double>();
    CHECK(m > 0.3);
    CHECK(m < 0.7);
  }
}

TEST_CASE("organ nets use their prescribed blocks") {
  auto has = [](const SegNet& n, const std::string& kind) {
    for (const auto& line : n->manifest())
      if (line.find(kind) != std::string::npos) return true;
    return false;
  };
  CHECK(has(build_organ_net(StructureId::Bladder, 0, 8), "GroupedResidual"));
  CHECK(has(build_organ_net(StructureId::FemoralHeadR, 0, 8), "GroupedResidual"));
  auto rectum = build_organ_net(StructureId::Rectum, 0, 8);
  CHECK(has(rectum, "MultiBranch"));
  CHECK(has(rectum, ": Residual"));
  CHECK(has(build_organ_net(StructureId::PenileBulb, 0, 8), "SqueezeExcite"));
  for (const auto& line : rectum->manifest())
    if (line.rfind("seg", 0) == 0) CHECK(line.find("DropBlock") != std::string::npos);
  CHECK_THROWS_AS(organ_config(StructureId::CTV), UsageError);
}

TEST_CASE("AG-MTN heads and variant channel counts") {
  torch::NoGradGuard g;
  auto net = build_agmtn(true, true, 5, 8);
  auto out = net->forward(randn({1, 3, 16, 16, 16}, 6));
  for (const auto& t : {out.main, out.aux1, out.aux2, out.dist}) CHECK(t.sizes() == torch::IntArrayRef({1, 1, 16, 16, 16}));
  for (const auto& t : {out.main, out.aux1, out.aux2}) {
    CHECK(t.min().item<float>() >= 0.0f);
    CHECK(t.max().item<float>() <= 1.0f);
  }
  CHECK(agmtn_config(false, true).in_channels == 1);
  CHECK(agmtn_config(true, false).in_channels == 3);
  CHECK_FALSE(build_agmtn(true, false, 5, 8)->forward(randn({1, 3, 16, 16, 16}, 6)).dist.defined());
  CHECK_THROWS_AS(net->forward(randn({1, 1, 16, 16, 16}, 6)), DataError);
  CHECK_THROWS_AS(net->forward(randn({1, 3, 16, 16, 12}, 6)), DataError);
}

TEST_CASE("multi-task adds exactly the distance decoder") {
  auto mtn = build_agmtn(true, true, 0, 8);
  auto unet = build_agmtn(true, false, 0, 8);
  CHECK(mtn->parameter_count() - unet->parameter_count() == mtn->parameter_count("dist"));
  CHECK(mtn->parameter_count("dist") > 0);
  CHECK(unet->parameter_count("dist") == 0);
}

TEST_CASE("shared submodules get identical initial weights across variants") {
  auto a = build_agmtn(true, true, 9, 8);
  auto b = build_agmtn(true, false, 9, 8);
  auto pb = b->named_parameters();
  for (const auto& p : a->named_parameters())
    if (p.key().rfind("dist", 0) != 0) CHECK(torch::equal(p.value(), pb[p.key()]));
}

TEST_CASE("initialization is deterministic in the seed") {
  auto a = build_organ_net(StructureId::Rectum, 42, 8);
  auto b = build_organ_net(StructureId::Rectum, 42, 8);
  auto c = build_organ_net(StructureId::Rectum, 43, 8);
  CHECK(same_weights(a, b));
  CHECK_FALSE(same_weights(a, c));
}

TEST_CASE("stochastic forward is reproducible and varies with the seed") {
  auto net = build_agmtn(false, false, 1, 8);
  torch::NoGradGuard g;
  const auto x = randn({1, 1, 16, 16, 16}, 7);
  auto det1 = net->forward(x).main, det2 = net->forward(x).main;
  CHECK(torch::equal(det1, det2));
  auto s1 = net->forward(x, {true, 11}).main, s2 = net->forward(x, {true, 11}).main;
  auto s3 = net->forward(x, {true, 12}).main;
  CHECK(torch::equal(s1, s2));
  CHECK_FALSE(torch::equal(s1, s3));
  CHECK_FALSE(torch::equal(s1, det1));
}

TEST_CASE("all parameters receive gradients from the composite loss") {
  auto net = build_agmtn(true, true, 2, 8);
  const auto x = randn({2, 3, 16, 16, 16}, 3);
  auto truth = (randn({2, 1, 16, 16, 16}, 4) > 0).to(torch::kFloat32);
  CtvTargets t{truth, torch::full_like(truth, 0.5), randn({2, 1, 16, 16, 16}, 5)};
  auto out = net->forward(x, {true, 1});
  composite_ctv_loss(out, t).total.backward();
  for (const auto& p : net->named_parameters()) {
    INFO(p.key());
    REQUIRE(p.value().grad().defined());
    CHECK(p.value().grad().abs().sum().item<double>() > 0.0);
  }
}

TEST_CASE("dropblock keeps the requested fraction") {
  const auto x = torch::ones({4, 8, 16, 32, 32});
  auto y = dropblock(x, 0.9, 3, DropMode::Stochastic, 5, 0);
  const double kept = (y > 0).to(torch::kFloat64).mean().item<double>();
  CHECK(kept == doctest::Approx(0.9).epsilon(0.02 / 0.9));
  CHECK(y.sum().item<double>() == doctest::Approx(x.sum().item<double>()).epsilon(1e-5));
  auto z = dropblock(torch::ones({2, 4, 32, 32}), 0.8, 5, DropMode::Stochastic, 5, 1);
  CHECK((z > 0).to(torch::kFloat64).mean().item<double>() == doctest::Approx(0.8).epsilon(0.03 / 0.8));
}

TEST_CASE("dropblock drops whole blocks") {
  auto y = dropblock(torch::ones({1, 1, 64, 64}), 0.9, 5, DropMode::Stochastic, 3, 0);
  auto dropped = (y == 0).squeeze();
  // Every dropped pixel lies in a fully dropped 5x5 window.
  auto win = torch::max_pool2d((1 - torch::max_pool2d(1 - dropped.to(torch::kFloat32).unsqueeze(0), 5, 1, 2)), 5, 1, 2);
  CHECK(torch::equal(win.squeeze().to(torch::kBool), dropped));
}

TEST_CASE("dropblock identity cases and argument checks") {
  const auto x = randn({2, 3, 8, 8, 8}, 1);
  CHECK(torch::equal(dropblock(x, 0.9, 3, DropMode::Off, 1, 0), x));
  CHECK(torch::equal(dropblock(x, 1.0, 3, DropMode::Stochastic, 1, 0), x));
  CHECK(torch::equal(dropblock(x, 0.9, 3, DropMode::Stochastic, 1, 0), dropblock(x, 0.9, 3, DropMode::Stochastic, 1, 0)));
  CHECK_FALSE(torch::equal(dropblock(x, 0.9, 3, DropMode::Stochastic, 1, 0), dropblock(x, 0.9, 3, DropMode::Stochastic, 1, 1)));
  CHECK_THROWS_AS(dropblock(x, 0.9, 4, DropMode::Stochastic, 1, 0), UsageError);
  CHECK_THROWS_AS(dropblock(x, 0.9, 9, DropMode::Stochastic, 1, 0), UsageError);
  CHECK_THROWS_AS(dropblock(x, 0.0, 3, DropMode::Stochastic, 1, 0), UsageError);
  CHECK(dropblock_gamma(0.9, 3, {32, 32}) == doctest::Approx(0.1 / 9.0 * 1024.0 / 900.0));
}

TEST_CASE("tensor Dice losses match the array losses and their gradients") {
  std::mt19937_64 gen(17);
  std::uniform_real_distribution<double> u(0.02, 0.98), uw(0.1, 1.0);
  const int b = 2, n = 60;
  std::vector<LossBatch> rows(b);
  for (auto& r : rows)
    for (int i = 0; i < n; ++i) {
      r.p.push_back(u(gen));
      r.q.push_back(u(gen) < 0.4 ? 1.0 : 0.0);
      r.w.push_back(uw(gen));
    }
  auto tensor = [&](auto field) {
    std::vector<double> flat;
    for (const auto& r : rows) flat.insert(flat.end(), (r.*field).begin(), (r.*field).end());
    return torch::tensor(flat, torch::kFloat64).view({b, 1, 3, 4, 5});
  };
  auto p = tensor(&LossBatch::p).requires_grad_(true);
  const auto q = tensor(&LossBatch::q), w = tensor(&LossBatch::w);

  auto l1 = dice_loss(p, q, w);
  l1.backward();
  CHECK(l1.item<double>() == doctest::Approx((ctvseg::dice_loss(rows[0]) + ctvseg::dice_loss(rows[1])) / 2).epsilon(1e-12));
  for (int r = 0; r < b; ++r) {
    const auto g = dice_loss_grad(rows[r]);
    for (int i = 0; i < n; ++i) CHECK(p.grad().view({b, n})[r][i].item<double>() == doctest::Approx(g[i] / b).epsilon(1e-10));
  }

  p.grad().zero_();
  auto l2 = sqrt_dice_loss(p, q, 1e-6);
  l2.backward();
  CHECK(l2.item<double>() ==
        doctest::Approx((ctvseg::sqrt_dice_loss(rows[0], 1e-6) + ctvseg::sqrt_dice_loss(rows[1], 1e-6)) / 2).epsilon(1e-12));
  for (int r = 0; r < b; ++r) {
    const auto g = sqrt_dice_loss_grad(rows[r], 1e-6);
    for (int i = 0; i < n; ++i) CHECK(p.grad().view({b, n})[r][i].item<double>() == doctest::Approx(g[i] / b).epsilon(1e-10));
  }
}

TEST_CASE("tensor Dice sums channels") {
  auto q = (randn({1, 5, 4, 4}, 1) > 0).to(torch::kFloat32);
  CHECK(dice_loss(q, q).item<double>() == doctest::Approx(-5.0).epsilon(1e-5));
  CHECK_THROWS_AS(dice_loss(q, q.view({1, 5, 16})), DataError);
  CHECK_THROWS_AS(sqrt_dice_loss(q, q, 0.0), UsageError);
}

TEST_CASE("composite loss needs a distance target for multi-task output") {
  NetOutputs out;
  out.main = torch::full({1, 1, 4, 4, 4}, 0.5);
  out.dist = torch::zeros({1, 1, 4, 4, 4});
  CtvTargets t{torch::ones({1, 1, 4, 4, 4}), torch::ones({1, 1, 4, 4, 4}), {}};
  CHECK_THROWS_AS(composite_ctv_loss(out, t), DataError);
  t.dist = torch::full({1, 1, 4, 4, 4}, 0.5);
  const auto terms = composite_ctv_loss(out, t);
  CHECK(terms.dist == doctest::Approx(0.25));
  CHECK(terms.total.item<double>() == doctest::Approx(terms.main + 0.25));
}

TEST_CASE("checkpoint round trip restores weights and config") {
  const auto dir = scratch("ckpt");
  auto net = build_organ_net(StructureId::PenileBulb, 8, 8);
  save_checkpoint(net, {net->config(), 8, 3, {{"val_dsc", 0.5}}}, dir / "best");
  auto loaded = load_checkpoint(dir / "best");
  CHECK(loaded.meta.net == net->config());
  CHECK(loaded.meta.epoch == 3);
  CHECK(loaded.meta.extra["val_dsc"] == 0.5);
  CHECK(same_weights(net, loaded.net));

  nlohmann::json j;
  std::ifstream(dir / "best.json") >> j;
  j["net"]["base_width"] = 16;
  std::ofstream(dir / "best.json") << j.dump();
  CHECK_THROWS_AS(load_checkpoint(dir / "best"), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing"), DataError);
}

TEST_CASE("net config JSON round trip and hash") {
  const auto c = agmtn_config(true, true, 16);
  CHECK(NetConfig::from_json(c.to_json()) == c);
  CHECK(c.hash() == NetConfig::from_json(c.to_json()).hash());
  CHECK(c.hash() != agmtn_config(true, false, 16).hash());
  CHECK(c.hash().size() == 16);
  CHECK(parse_block_kind("MultiBranch") == BlockKind::MultiBranch);
  CHECK_THROWS_AS(parse_block_kind("Dense"), UsageError);
}
