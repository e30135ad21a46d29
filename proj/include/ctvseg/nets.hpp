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
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "ctvseg/dropblock.hpp"
#include "ctvseg/volcore.hpp"

namespace ctvseg {

enum class BlockKind { PlainConv, Residual, GroupedResidual, MultiBranch, SqueezeExcite };

std::string_view to_string(BlockKind k);
BlockKind parse_block_kind(std::string_view name);

inline constexpr int kGroupedCardinality = 8;
inline constexpr int kSqueezeReduction = 8;

struct DropBlockConfig {
  double keep_prob = 0.9;
  int block_size = 3;
  bool operator==(const DropBlockConfig&) const = default;
};

struct NetConfig {
  std::string name;
  int dims = 3;
  int in_channels = 1;
  int out_channels = 1;
  int depth = 4;
  int base_width = 16;
  std::vector<BlockKind> blocks;  // one per encoder stage; decoder stages reuse them
  DropBlockConfig dropblock{};
  bool deep_supervision = false;
  bool multi_task = false;

  void validate() const;
  int width(int stage) const { return base_width << stage; }
  // Spatial sizes must be divisible by this.
  int divisor() const { return 1 << (depth - 1); }
  nlohmann::ordered_json to_json() const;
  static NetConfig from_json(const nlohmann::json& j);
  // FNV-1a over the canonical JSON text, as 16 hex digits.
  std::string hash() const;
  bool operator==(const NetConfig&) const = default;
};

NetConfig localizer_config(int base_width = 32);
NetConfig organ_config(StructureId s, int base_width = 16);
NetConfig agmtn_config(bool anatomy_guided, bool multi_task, int base_width = 16);

struct ForwardContext {
  bool stochastic = false;
  std::uint64_t seed = 0;
};

struct NetOutputs {
  torch::Tensor main;  // probabilities, {B, out, spatial...}
  torch::Tensor aux1;  // deep-supervision heads at full resolution, undefined when absent
  torch::Tensor aux2;
  torch::Tensor dist;  // distance regression, undefined unless multi-task
};

namespace detail {
struct BlockImpl;
}

class SegNetImpl : public torch::nn::Module {
 public:
  explicit SegNetImpl(NetConfig cfg);
  NetOutputs forward(const torch::Tensor& x, const ForwardContext& ctx = {});
  const NetConfig& config() const { return cfg_; }
  // One "<path>: <kind>" line per block, encoder then decoders.
  std::vector<std::string> manifest() const;
  std::int64_t parameter_count() const;
  std::int64_t parameter_count(const std::string& prefix) const;

 private:
  struct Decoder {
    std::vector<torch::nn::AnyModule> ups;
    std::vector<std::shared_ptr<torch::nn::Module>> blocks;
  };
  torch::Tensor run_block(const std::shared_ptr<torch::nn::Module>& b, const torch::Tensor& x);
  torch::Tensor drop(const torch::Tensor& x, const ForwardContext& ctx, std::uint64_t layer);
  std::vector<torch::Tensor> decode(Decoder& d, torch::Tensor x, const std::vector<torch::Tensor>& skips,
                                    const ForwardContext& ctx, std::uint64_t layer_base);

  NetConfig cfg_;
  std::vector<std::shared_ptr<torch::nn::Module>> encoder_;
  Decoder seg_;
  Decoder dist_;
  torch::nn::AnyModule head_, aux1_head_, aux2_head_, dist_head_;
  std::vector<std::string> manifest_;
};
TORCH_MODULE(SegNet);

SegNet build_net(const NetConfig& cfg, std::uint64_t seed);
SegNet build_localizer(std::uint64_t seed, int base_width = 32);
SegNet build_organ_net(StructureId s, std::uint64_t seed, int base_width = 16);
SegNet build_agmtn(bool anatomy_guided, bool multi_task, std::uint64_t seed, int base_width = 16);

}  // namespace ctvseg
