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
#include "ctvseg/nets.hpp"

#include <array>
#include <cstdio>
#include <numeric>

#include <ATen/CPUGeneratorImpl.h>

#include "ctvseg/error.hpp"
#include "ctvseg/rng.hpp"

namespace ctvseg {

namespace nn = torch::nn;

namespace {

constexpr std::array<std::string_view, 5> kBlockNames = {"PlainConv", "Residual", "GroupedResidual", "MultiBranch",
                                                         "SqueezeExcite"};

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

nn::AnyModule conv(int dims, int in, int out, int k, int groups = 1) {
  if (dims == 2) return nn::AnyModule(nn::Conv2d(nn::Conv2dOptions(in, out, k).padding(k / 2).groups(groups)));
  return nn::AnyModule(nn::Conv3d(nn::Conv3dOptions(in, out, k).padding(k / 2).groups(groups)));
}

nn::AnyModule up_conv(int dims, int in, int out) {
  if (dims == 2) return nn::AnyModule(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, out, 2).stride(2)));
  return nn::AnyModule(nn::ConvTranspose3d(nn::ConvTranspose3dOptions(in, out, 2).stride(2)));
}

int norm_groups(int ch) {
  for (int g = std::min(8, ch); g > 1; --g)
    if (ch % g == 0) return g;
  return 1;
}

torch::Tensor max_pool(const torch::Tensor& x, int dims, int k, int stride, int pad) {
  return dims == 2 ? torch::max_pool2d(x, k, stride, pad) : torch::max_pool3d(x, k, stride, pad);
}

struct ConvNormImpl : nn::Module {
  ConvNormImpl(int dims, int in, int out, int k, bool act, int groups = 1) : c(conv(dims, in, out, k, groups)), act(act) {
    register_module("conv", c.ptr());
    norm = register_module("norm", nn::GroupNorm(nn::GroupNormOptions(norm_groups(out), out)));
  }
  torch::Tensor forward(const torch::Tensor& x) {
    auto y = norm(c.forward(x));
    return act ? torch::relu(y) : y;
  }
  nn::AnyModule c;
  nn::GroupNorm norm{nullptr};
  bool act;
};
TORCH_MODULE(ConvNorm);

}  // namespace

namespace detail {

struct BlockImpl : nn::Module {
  virtual torch::Tensor forward(const torch::Tensor& x) = 0;
};

}  // namespace detail

namespace {

using detail::BlockImpl;

struct PlainBlock : BlockImpl {
  PlainBlock(int d, int in, int out) {
    a = register_module("a", ConvNorm(d, in, out, 3, true));
    b = register_module("b", ConvNorm(d, out, out, 3, true));
  }
  torch::Tensor forward(const torch::Tensor& x) override { return b(a(x)); }
  ConvNorm a{nullptr}, b{nullptr};
};

struct Shortcut {
  ConvNorm proj{nullptr};
  torch::Tensor operator()(const torch::Tensor& x) { return proj ? proj(x) : x; }
};

Shortcut make_shortcut(nn::Module& m, int d, int in, int out) {
  Shortcut s;
  if (in != out) s.proj = m.register_module("skip", ConvNorm(d, in, out, 1, false));
  return s;
}

struct ResidualBlock : BlockImpl {
  ResidualBlock(int d, int in, int out) {
    a = register_module("a", ConvNorm(d, in, out, 3, true));
    b = register_module("b", ConvNorm(d, out, out, 3, false));
    skip = make_shortcut(*this, d, in, out);
  }
  torch::Tensor forward(const torch::Tensor& x) override { return torch::relu(b(a(x)) + skip(x)); }
  ConvNorm a{nullptr}, b{nullptr};
  Shortcut skip;
};

// ResNeXt bottleneck: 1x1, grouped 3x3, 1x1.
struct GroupedResidualBlock : BlockImpl {
  GroupedResidualBlock(int d, int in, int out) {
    const int groups = std::gcd(kGroupedCardinality, out);
    a = register_module("a", ConvNorm(d, in, out, 1, true));
    b = register_module("b", ConvNorm(d, out, out, 3, true, groups));
    c = register_module("c", ConvNorm(d, out, out, 1, false));
    skip = make_shortcut(*this, d, in, out);
  }
  torch::Tensor forward(const torch::Tensor& x) override { return torch::relu(c(b(a(x))) + skip(x)); }
  ConvNorm a{nullptr}, b{nullptr}, c{nullptr};
  Shortcut skip;
};

// Inception-style: 1x1 | 1x1-3x3 | 1x1-3x3-3x3 (factorized 5x5) | pool-1x1.
struct MultiBranchBlock : BlockImpl {
  MultiBranchBlock(int d, int in, int out) : dims(d) {
    if (out % 4) throw UsageError("MultiBranch block needs a width divisible by 4");
    const int q = out / 4;
    b1 = register_module("b1", ConvNorm(d, in, q, 1, true));
    b2a = register_module("b2a", ConvNorm(d, in, q, 1, true));
    b2b = register_module("b2b", ConvNorm(d, q, q, 3, true));
    b3a = register_module("b3a", ConvNorm(d, in, q, 1, true));
    b3b = register_module("b3b", ConvNorm(d, q, q, 3, true));
    b3c = register_module("b3c", ConvNorm(d, q, q, 3, true));
    b4 = register_module("b4", ConvNorm(d, in, q, 1, true));
    skip = make_shortcut(*this, d, in, out);
  }
  torch::Tensor forward(const torch::Tensor& x) override {
    auto y = torch::cat({b1(x), b2b(b2a(x)), b3c(b3b(b3a(x))), b4(max_pool(x, dims, 3, 1, 1))}, 1);
    return torch::relu(y + skip(x));
  }
  int dims;
  ConvNorm b1{nullptr}, b2a{nullptr}, b2b{nullptr}, b3a{nullptr}, b3b{nullptr}, b3c{nullptr}, b4{nullptr};
  Shortcut skip;
};

// Residual block whose residual branch is gated channelwise by squeeze-excitation.
struct SqueezeExciteBlock : BlockImpl {
  SqueezeExciteBlock(int d, int in, int out) {
    a = register_module("a", ConvNorm(d, in, out, 3, true));
    b = register_module("b", ConvNorm(d, out, out, 3, false));
    const int hidden = std::max(1, out / kSqueezeReduction);
    fc1 = register_module("fc1", nn::Linear(out, hidden));
    fc2 = register_module("fc2", nn::Linear(hidden, out));
    skip = make_shortcut(*this, d, in, out);
  }
  torch::Tensor forward(const torch::Tensor& x) override {
    auto y = b(a(x));
    std::vector<std::int64_t> spatial;
    for (std::int64_t i = 2; i < y.dim(); ++i) spatial.push_back(i);
    auto s = torch::sigmoid(fc2(torch::relu(fc1(y.mean(spatial)))));
    std::vector<std::int64_t> shape{s.size(0), s.size(1)};
    shape.resize(static_cast<std::size_t>(y.dim()), 1);
    return torch::relu(y * s.view(shape) + skip(x));
  }
  ConvNorm a{nullptr}, b{nullptr};
  nn::Linear fc1{nullptr}, fc2{nullptr};
  Shortcut skip;
};

std::shared_ptr<BlockImpl> make_block(BlockKind k, int d, int in, int out) {
  switch (k) {
    case BlockKind::PlainConv: return std::make_shared<PlainBlock>(d, in, out);
    case BlockKind::Residual: return std::make_shared<ResidualBlock>(d, in, out);
    case BlockKind::GroupedResidual: return std::make_shared<GroupedResidualBlock>(d, in, out);
    case BlockKind::MultiBranch: return std::make_shared<MultiBranchBlock>(d, in, out);
    case BlockKind::SqueezeExcite: return std::make_shared<SqueezeExciteBlock>(d, in, out);
  }
  throw UsageError("unknown block kind");
}

torch::Tensor any_forward(nn::AnyModule& m, const torch::Tensor& x) { return m.forward(x); }

int largest_odd_at_most(std::int64_t n) { return static_cast<int>(n % 2 ? n : n - 1); }

}  // namespace

std::string_view to_string(BlockKind k) { return kBlockNames.at(static_cast<std::size_t>(k)); }

BlockKind parse_block_kind(std::string_view name) {
  for (std::size_t i = 0; i < kBlockNames.size(); ++i)
    if (kBlockNames[i] == name) return static_cast<BlockKind>(i);
  throw UsageError("unknown block kind '" + std::string(name) + "'");
}

void NetConfig::validate() const {
  if (dims != 2 && dims != 3) throw UsageError("net: dims must be 2 or 3");
  if (in_channels < 1 || out_channels < 1 || base_width < 4) throw UsageError("net: bad channel counts");
  if (depth < 2 || static_cast<int>(blocks.size()) != depth) throw UsageError("net: need one block kind per stage");
  if (deep_supervision && depth < 3) throw UsageError("net: deep supervision needs depth >= 3");
  if (base_width % 4) throw UsageError("net: base width must be divisible by 4");
  if (!(dropblock.keep_prob > 0.0 && dropblock.keep_prob <= 1.0) || dropblock.block_size < 1 ||
      dropblock.block_size % 2 == 0)
    throw UsageError("net: bad DropBlock settings");
}

nlohmann::ordered_json NetConfig::to_json() const {
  nlohmann::ordered_json j;
  j["name"] = name;
  j["dims"] = dims;
  j["in_channels"] = in_channels;
  j["out_channels"] = out_channels;
  j["depth"] = depth;
  j["base_width"] = base_width;
  j["blocks"] = nlohmann::ordered_json::array();
  for (auto b : blocks) j["blocks"].push_back(std::string(to_string(b)));
  j["dropblock"] = {{"keep_prob", dropblock.keep_prob}, {"block_size", dropblock.block_size}};
  j["deep_supervision"] = deep_supervision;
  j["multi_task"] = multi_task;
  return j;
}

NetConfig NetConfig::from_json(const nlohmann::json& j) {
  NetConfig c;
  try {
    c.name = j.at("name").get<std::string>();
    c.dims = j.at("dims").get<int>();
    c.in_channels = j.at("in_channels").get<int>();
    c.out_channels = j.at("out_channels").get<int>();
    c.depth = j.at("depth").get<int>();
    c.base_width = j.at("base_width").get<int>();
    for (const auto& b : j.at("blocks")) c.blocks.push_back(parse_block_kind(b.get<std::string>()));
    c.dropblock.keep_prob = j.at("dropblock").at("keep_prob").get<double>();
    c.dropblock.block_size = j.at("dropblock").at("block_size").get<int>();
    c.deep_supervision = j.at("deep_supervision").get<bool>();
    c.multi_task = j.at("multi_task").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad net config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string NetConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json().dump())));
  return buf;
}

NetConfig localizer_config(int base_width) {
  NetConfig c;
  c.name = "localizer";
  c.dims = 2;
  c.out_channels = 5;
  c.base_width = base_width;
  c.blocks.assign(4, BlockKind::PlainConv);
  c.dropblock.block_size = 5;
  return c;
}

NetConfig organ_config(StructureId s, int base_width) {
  NetConfig c;
  c.name = std::string(to_string(s));
  c.base_width = base_width;
  switch (s) {
    case StructureId::Bladder:
    case StructureId::FemoralHeadL:
    case StructureId::FemoralHeadR: c.blocks.assign(4, BlockKind::GroupedResidual); break;
    case StructureId::Rectum:
      c.blocks = {BlockKind::Residual, BlockKind::MultiBranch, BlockKind::Residual, BlockKind::MultiBranch};
      break;
    case StructureId::PenileBulb: c.blocks.assign(4, BlockKind::SqueezeExcite); break;
    case StructureId::CTV: throw UsageError("organ_config: the CTV uses the anatomy-guided network");
  }
  return c;
}

NetConfig agmtn_config(bool anatomy_guided, bool multi_task, int base_width) {
  NetConfig c;
  c.name = std::string(anatomy_guided ? "AG-" : "") + (multi_task ? "MTN" : "UNet");
  c.in_channels = anatomy_guided ? 3 : 1;
  c.base_width = base_width;
  c.blocks.assign(4, BlockKind::PlainConv);
  c.deep_supervision = true;
  c.multi_task = multi_task;
  return c;
}

SegNetImpl::SegNetImpl(NetConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int d = cfg_.dims;
  int in = cfg_.in_channels;
  for (int l = 0; l < cfg_.depth; ++l) {
    auto b = make_block(cfg_.blocks[l], d, in, cfg_.width(l));
    encoder_.push_back(register_module("enc" + std::to_string(l), b));
    manifest_.push_back("enc" + std::to_string(l) + ": " + std::string(to_string(cfg_.blocks[l])));
    in = cfg_.width(l);
  }
  auto build_decoder = [&](Decoder& dec, const std::string& tag) {
    for (int l = cfg_.depth - 2; l >= 0; --l) {
      const std::string name = tag + std::to_string(l);
      auto up = up_conv(d, cfg_.width(l + 1), cfg_.width(l));
      register_module(name + "_up", up.ptr());
      dec.ups.push_back(std::move(up));
      auto b = make_block(cfg_.blocks[l], d, 2 * cfg_.width(l), cfg_.width(l));
      dec.blocks.push_back(register_module(name, b));
      manifest_.push_back(name + ": " + std::string(to_string(cfg_.blocks[l])) + " + DropBlock");
    }
  };
  build_decoder(seg_, "seg");
  head_ = conv(d, cfg_.width(0), cfg_.out_channels, 1);
  register_module("head", head_.ptr());
  if (cfg_.deep_supervision) {
    aux1_head_ = conv(d, cfg_.width(cfg_.depth - 2), cfg_.out_channels, 1);
    aux2_head_ = conv(d, cfg_.width(cfg_.depth - 3), cfg_.out_channels, 1);
    register_module("aux1_head", aux1_head_.ptr());
    register_module("aux2_head", aux2_head_.ptr());
  }
  if (cfg_.multi_task) {
    build_decoder(dist_, "dist");
    dist_head_ = conv(d, cfg_.width(0), 1, 1);
    register_module("dist_head", dist_head_.ptr());
  }
}

torch::Tensor SegNetImpl::run_block(const std::shared_ptr<torch::nn::Module>& b, const torch::Tensor& x) {
  return std::static_pointer_cast<BlockImpl>(b)->forward(x);
}

torch::Tensor SegNetImpl::drop(const torch::Tensor& x, const ForwardContext& ctx, std::uint64_t layer) {
  if (!ctx.stochastic) return x;
  std::int64_t smallest = x.size(2);
  for (std::int64_t i = 2; i < x.dim(); ++i) smallest = std::min(smallest, x.size(i));
  const int bs = std::min(cfg_.dropblock.block_size, largest_odd_at_most(smallest));
  return dropblock(x, cfg_.dropblock.keep_prob, bs, DropMode::Stochastic, ctx.seed, layer);
}

std::vector<torch::Tensor> SegNetImpl::decode(Decoder& dec, torch::Tensor x, const std::vector<torch::Tensor>& skips,
                                              const ForwardContext& ctx, std::uint64_t layer_base) {
  std::vector<torch::Tensor> stages;
  for (std::size_t i = 0; i < dec.blocks.size(); ++i) {
    x = any_forward(dec.ups[i], x);
    x = run_block(dec.blocks[i], torch::cat({x, skips[skips.size() - 1 - i]}, 1));
    x = drop(x, ctx, layer_base + i);
    stages.push_back(x);
  }
  return stages;
}

NetOutputs SegNetImpl::forward(const torch::Tensor& x, const ForwardContext& ctx) {
  if (x.dim() != cfg_.dims + 2 || x.size(1) != cfg_.in_channels)
    throw DataError("net " + cfg_.name + ": input has the wrong rank or channel count");
  for (std::int64_t i = 2; i < x.dim(); ++i)
    if (x.size(i) % cfg_.divisor())
      throw DataError("net " + cfg_.name + ": spatial size must be divisible by " + std::to_string(cfg_.divisor()));
  std::vector<torch::Tensor> skips;
  torch::Tensor h = x;
  for (int l = 0; l < cfg_.depth; ++l) {
    h = run_block(encoder_[l], h);
    if (l + 1 < cfg_.depth) {
      skips.push_back(h);
      h = max_pool(h, cfg_.dims, 2, 2, 0);
    }
  }
  NetOutputs out;
  const auto seg = decode(seg_, h, skips, ctx, 0);
  out.main = torch::sigmoid(any_forward(head_, seg.back()));
  if (cfg_.deep_supervision) {
    std::vector<std::int64_t> full(x.sizes().begin() + 2, x.sizes().end());
    auto opts = torch::nn::functional::InterpolateFuncOptions().size(full).align_corners(false);
    if (cfg_.dims == 2)
      opts = opts.mode(torch::kBilinear);
    else
      opts = opts.mode(torch::kTrilinear);
    out.aux1 = torch::sigmoid(torch::nn::functional::interpolate(any_forward(aux1_head_, seg[0]), opts));
    out.aux2 = torch::sigmoid(torch::nn::functional::interpolate(any_forward(aux2_head_, seg[1]), opts));
  }
  if (cfg_.multi_task) out.dist = any_forward(dist_head_, decode(dist_, h, skips, ctx, 100).back());
  return out;
}

std::vector<std::string> SegNetImpl::manifest() const { return manifest_; }

std::int64_t SegNetImpl::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : parameters()) n += p.numel();
  return n;
}

std::int64_t SegNetImpl::parameter_count(const std::string& prefix) const {
  std::int64_t n = 0;
  for (const auto& p : named_parameters())
    if (p.key().rfind(prefix, 0) == 0) n += p.value().numel();
  return n;
}

SegNet build_net(const NetConfig& cfg, std::uint64_t seed) {
  SegNet net(cfg);
  // Each parameter draws from its own seeded generator keyed by name, so
  // variants that share a submodule also share its initial weights.
  torch::NoGradGuard guard;
  for (auto& p : net->named_parameters()) {
    const std::string& name = p.key();
    auto& t = p.value();
    const bool is_norm = name.find("norm.") != std::string::npos;
    if (name.ends_with(".bias")) {
      t.zero_();
    } else if (is_norm) {
      t.fill_(1.0);
    } else {
      auto gen = at::detail::createCPUGenerator(derive_seed(seed, fnv1a(name)));
      std::int64_t fan_in = t.dim() > 1 ? t.size(1) : t.size(0);
      for (std::int64_t i = 2; i < t.dim(); ++i) fan_in *= t.size(i);
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in)) * std::sqrt(3.0);
      t.uniform_(-bound, bound, gen);
    }
  }
  return net;
}

SegNet build_localizer(std::uint64_t seed, int base_width) { return build_net(localizer_config(base_width), seed); }

SegNet build_organ_net(StructureId s, std::uint64_t seed, int base_width) {
  return build_net(organ_config(s, base_width), seed);
}

SegNet build_agmtn(bool anatomy_guided, bool multi_task, std::uint64_t seed, int base_width) {
  return build_net(agmtn_config(anatomy_guided, multi_task, base_width), seed);
}

}  // namespace ctvseg
