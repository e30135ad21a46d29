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

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctvseg/checkpoint.hpp"
#include "ctvseg/inputs.hpp"
#include "ctvseg/metrics.hpp"
#include "ctvseg/phantom.hpp"
#include "ctvseg/trainer.hpp"
#include "ctvseg/uncertainty.hpp"

namespace ctvseg {

struct PipelineConfig {
  VoiConfig voi = VoiConfig::defaults();
  int mcdo_samples = kDefaultMcdoSamples;  // CTV stage; 0 disables
  bool mcdo_oars = false;
  std::uint64_t mcdo_seed = 0;
  // Keep only the largest 6-connected component of each predicted organ and of the CTV.
  bool largest_component = true;

  nlohmann::ordered_json to_json() const;
  static PipelineConfig from_json(const nlohmann::json& j, PipelineConfig base);
};

/// Checkpoint stems. `in_dir` expects <root>/localizer/best, <root>/<Structure>/best
/// for each organ and <root>/ctv/best.
struct CheckpointSet {
  std::filesystem::path localizer;
  std::map<StructureId, std::filesystem::path> organs;
  std::filesystem::path ctv;

  static CheckpointSet in_dir(const std::filesystem::path& root);
};

struct StageLog {
  std::string stage;
  double ms = 0.0;
  std::string detail;
};

struct CaseResult {
  std::string case_id;
  StructureSet prediction;
  std::map<StructureId, UncertaintySummary> uncertainty;  // full grid
  std::map<StructureId, double> quality;
  std::map<StructureId, std::array<double, 3>> centroids;  // full-resolution voxel index
  std::vector<std::string> warnings;
  std::vector<StageLog> log;
  std::vector<EvalRow> rows;  // filled when truth is supplied
};

class Pipeline {
 public:
  Pipeline(const CheckpointSet& checkpoints, PipelineConfig cfg);

  /// Localize, segment organs, then segment the CTV from the predicted bladder
  /// and rectum. `organ_override` replaces the predicted organ masks fed to the
  /// CTV stage. `truth` adds evaluation rows.
  CaseResult infer(const Volume& ct, const std::string& case_id, const StructureSet* truth = nullptr,
                   const StructureSet* organ_override = nullptr);

  const PipelineConfig& config() const { return cfg_; }
  SegNet& organ_net(StructureId s) { return organs_.at(s); }
  SegNet& ctv_net() { return ctv_; }

 private:
  PipelineConfig cfg_;
  SegNet localizer_{nullptr};
  std::map<StructureId, SegNet> organs_;
  SegNet ctv_{nullptr};
};

// <dir>/prediction/, <dir>/uncertainty/<Structure>/, <dir>/result.json, <dir>/log.txt,
// and <dir>/eval.csv when rows exist.
void write_result(const CaseResult& r, const std::filesystem::path& dir);
// Prediction, uncertainty summaries, quality, centroids and warnings.
CaseResult read_result(const std::filesystem::path& dir);

/// Largest 6-connected component; empty stays empty.
Mask largest_component(const Mask& m);
// The two largest components merged; used for the bilateral femoral channel.
Mask largest_components(const Mask& m, int keep);

/// VOI prediction pasted into a full grid (zeros outside).
UncertaintySummary uncrop_summary(const UncertaintySummary& s, const Voi& voi, const Shape& grid);

struct AblationConfig {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<CtvVariant> variants{kCtvVariants.begin(), kCtvVariants.end()};
  TrainConfig train = TrainConfig::segmentation_defaults();
  VoiConfig voi = VoiConfig::defaults();
};

struct AblationPair {
  CtvVariant a, b;
  double mean_difference = 0.0;  // mean(a - b)
  TTestResult test;
};

struct AblationReport {
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> case_ids;
  // Test-case DSC per variant, seed-major: index = seed_index * cases + case_index.
  std::map<CtvVariant, std::vector<double>> dsc;
  std::vector<AblationPair> pairs;
  std::map<CtvVariant, double> train_seconds;

  double mean(CtvVariant v) const;
  const AblationPair& pair(CtvVariant a, CtvVariant b) const;
  std::string table() const;  // markdown
  nlohmann::ordered_json to_json() const;
  // ablation.json, ablation.csv (variant,seed,case,dsc) and ablation.md.
  void write(const std::filesystem::path& dir) const;
};

/// Trains every variant for every seed on the same split, then scores test
/// cases with truth-centroid VOIs and truth organ masks. Runs whose directory
/// already holds a matching report are reused. Paired t-tests run over
/// (seed, case) pairs.
AblationReport run_ablation(const Dataset& data, const AblationConfig& cfg, const std::filesystem::path& out_dir);

// Variant DSC of one trained CTV checkpoint on cases, truth organ masks and truth-centroid VOI.
std::vector<double> score_ctv(SegNet& net, const std::vector<PhantomCase>& cases, const VoiConfig& voi);

/// True when <dir> holds a finished run (report.json and best checkpoint)
/// trained with exactly `cfg`, `voi` and data fingerprint `data`.
bool has_matching_run(const std::filesystem::path& dir, const TrainConfig& cfg, const VoiConfig& voi,
                      const std::string& data);

/// Everything a CLI run reads from its config file (JSON):
/// {"pipeline": {...}, "train": {"localizer": {...}, "organ": {...}, "ctv": {...}},
///  "ablation": {"seeds": [...]}}. Missing keys keep defaults.
struct RunConfig {
  PipelineConfig pipeline{};
  TrainConfig localizer = TrainConfig::localizer_defaults();
  TrainConfig organ = TrainConfig::segmentation_defaults();
  TrainConfig ctv = TrainConfig::segmentation_defaults();
  std::vector<std::uint64_t> ablation_seeds{0, 1, 2};

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  nlohmann::ordered_json to_json() const;
  // Sets every training seed and the MCDO seed.
  void set_seed(std::uint64_t seed);
};

}  // namespace ctvseg
