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
#include "ctvseg/checkpoint.hpp"

#include <fstream>

#include "ctvseg/error.hpp"

namespace ctvseg {

namespace {
std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
  return std::filesystem::path(stem.string() + ext);
}
}  // namespace

void save_checkpoint(SegNet& net, const CheckpointMeta& meta, const std::filesystem::path& stem) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  torch::save(net, with_ext(stem, ".pt").string());
  nlohmann::ordered_json j;
  j["format"] = "ctvseg-checkpoint-1";
  j["config_hash"] = meta.net.hash();
  j["net"] = meta.net.to_json();
  j["seed"] = meta.seed;
  j["epoch"] = meta.epoch;
  j["extra"] = meta.extra;
  std::ofstream out(with_ext(stem, ".json"));
  out << j.dump(2) << '\n';
  if (!out) throw DataError("cannot write checkpoint sidecar " + with_ext(stem, ".json").string());
}

LoadedNet load_checkpoint(const std::filesystem::path& stem) {
  const auto sidecar = with_ext(stem, ".json");
  const auto weights = with_ext(stem, ".pt");
  std::ifstream in(sidecar);
  if (!in) throw DataError("missing checkpoint sidecar " + sidecar.string());
  if (!std::filesystem::exists(weights)) throw DataError("missing checkpoint weights " + weights.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad checkpoint sidecar " + sidecar.string() + ": " + e.what());
  }
  LoadedNet out;
  out.meta.net = NetConfig::from_json(j.at("net"));
  if (out.meta.net.hash() != j.value("config_hash", std::string()))
    throw DataError("checkpoint " + stem.string() + ": config hash mismatch");
  out.meta.seed = j.value("seed", std::uint64_t{0});
  out.meta.epoch = j.value("epoch", 0);
  out.meta.extra = j.value("extra", nlohmann::json::object());
  out.net = SegNet(out.meta.net);
  try {
    torch::load(out.net, weights.string());
  } catch (const c10::Error& e) {
    throw DataError("cannot load weights " + weights.string() + ": " + e.what_without_backtrace());
  }
  out.net->eval();
  return out;
}

}  // namespace ctvseg
