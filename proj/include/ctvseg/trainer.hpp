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
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctvseg/inputs.hpp"
#include "ctvseg/phantom.hpp"
#include "ctvseg/preprocess.hpp"

namespace ctvseg {

struct TrainConfig {
  int epochs = 80;
  int l2_finetune_epochs = 10;  // localizer only
  int batch_size = 2;
  double learning_rate = 1e-3;
  std::vector<double> decay_at{0.6, 0.85};  // fractions of `epochs`
  double decay_factor = 0.5;
  std::uint64_t seed = 0;
  AugmentParams augment{};
  bool augment_enabled = true;
  double keep_prob_unlabeled = 0.3;
  int base_width = 16;
  int crop_jitter = 2;              // voxels, uniform per axis around the truth centroid
  std::vector<int> snapshot_epochs;  // saved as epoch_<n> alongside best
  bool quiet = false;

  // 50 epochs of 16-slice batches with a 32-wide 2D net.
  static TrainConfig localizer_defaults();
  // 80 epochs of 2-VOI batches; no square-root Dice phase.
  static TrainConfig segmentation_defaults();
  void validate() const;
  nlohmann::ordered_json to_json() const;
  // Missing keys keep the values of `base`.
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig base);
};

// Step decay; `epoch` is 1-based.
double learning_rate_at(const TrainConfig& cfg, int epoch);

struct EpochRecord {
  int epoch = 0;
  std::string loss_fn;
  double loss = 0.0;
  double val_dsc = 0.0;
  double val_recall = 0.0;
  double learning_rate = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::string model;
  std::string config_hash;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_dsc = -1.0;
  std::filesystem::path best_checkpoint;  // stem, without extension
  std::map<int, std::filesystem::path> snapshots;
  double wall_seconds = 0.0;

  nlohmann::ordered_json to_json() const;
  // report.json and epochs.csv (epoch,loss_fn,loss,val_dsc,val_recall,lr,seconds).
  void write(const std::filesystem::path& dir) const;
};

// Hash of the train and validation case ids, stored in checkpoint sidecars.
std::string data_fingerprint(const std::vector<PhantomCase>& train, const std::vector<PhantomCase>& val);

/// 2D localizer on in-plane downsampled slices. Epochs up to E - l2 use the
/// Dice loss, the rest the square-root Dice loss. Validation DSC and recall
/// are over coarse 3D masks, averaged over channels and cases.
TrainReport train_localizer(const std::vector<PhantomCase>& train, const std::vector<PhantomCase>& val,
                            const TrainConfig& cfg, const VoiConfig& voi, const std::filesystem::path& out_dir);

/// One organ net on truth-centroid VOIs (with jitter) after AHE.
TrainReport train_organ(StructureId s, const std::vector<PhantomCase>& train, const std::vector<PhantomCase>& val,
                        const TrainConfig& cfg, const VoiConfig& voi, const std::filesystem::path& out_dir);

/// CTV net. Anatomy-guided variants read the truth bladder and rectum masks.
TrainReport train_ctv(CtvVariant variant, const std::vector<PhantomCase>& train, const std::vector<PhantomCase>& val,
                      const TrainConfig& cfg, const VoiConfig& voi, const std::filesystem::path& out_dir);

}  // namespace ctvseg
