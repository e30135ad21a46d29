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
#include "ctvseg/losses.hpp"

#include <cmath>

namespace ctvseg {
namespace {

struct DiceSums {
  double overlap = 0.0;  // Σ w p q
  double denom = 0.0;    // Σ w p + Σ w q + s
};

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

DiceSums dice_sums(const LossBatch& b) {
  DiceSums s;
  for (std::size_t i = 0; i < b.p.size(); ++i) {
    const double w = b.weight(i);
    const double p = clamp_prob(b.p[i]);
    s.overlap += w * p * b.q[i];
    s.denom += w * p + w * b.q[i];
  }
  s.denom += kDiceSmoothing;
  return s;
}

struct SqrtDiceSums {
  double overlap = 0.0;  // Σ sqrt(p+ε) q
  double denom = 0.0;    // Σ sqrt(p+ε) + Σ q
};

SqrtDiceSums sqrt_dice_sums(const LossBatch& b, double eps) {
  SqrtDiceSums s;
  for (std::size_t i = 0; i < b.p.size(); ++i) {
    const double r = std::sqrt(std::clamp(b.p[i], 0.0, 1.0) + eps);
    s.overlap += r * b.q[i];
    s.denom += r + b.q[i];
  }
  return s;
}

void check_lengths(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) throw DataError(std::string(what) + ": shape mismatch");
}

}  // namespace

void LossBatch::validate() const {
  if (p.size() != q.size() || (!w.empty() && w.size() != p.size())) throw DataError("loss batch: shape mismatch");
  for (double v : q)
    if (v != 0.0 && v != 1.0) throw DataError("loss batch: targets must be binary");
  for (double v : w)
    if (!(v > 0.0)) throw DataError("loss batch: weights must be positive");
  for (double v : p)
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("loss batch: predictions must lie in [0, 1]");
}

double dice_loss(const LossBatch& b) {
  b.validate();
  const DiceSums s = dice_sums(b);
  return -2.0 * s.overlap / s.denom;
}

std::vector<double> dice_loss_grad(const LossBatch& b) {
  b.validate();
  const DiceSums s = dice_sums(b);
  std::vector<double> g(b.p.size());
  const double d2 = s.denom * s.denom;
  for (std::size_t j = 0; j < g.size(); ++j) g[j] = -2.0 * b.weight(j) * (b.q[j] * s.denom - s.overlap) / d2;
  return g;
}

double sqrt_dice_loss(const LossBatch& b, double epsilon) {
  b.validate();
  if (!(epsilon > 0.0)) throw UsageError("sqrt_dice_loss: epsilon must be positive");
  const SqrtDiceSums s = sqrt_dice_sums(b, epsilon);
  return -2.0 * s.overlap / s.denom;
}

std::vector<double> sqrt_dice_loss_grad(const LossBatch& b, double epsilon) {
  b.validate();
  if (!(epsilon > 0.0)) throw UsageError("sqrt_dice_loss_grad: epsilon must be positive");
  const SqrtDiceSums s = sqrt_dice_sums(b, epsilon);
  std::vector<double> g(b.p.size());
  const double d2 = s.denom * s.denom;
  for (std::size_t j = 0; j < g.size(); ++j) {
    const double inv_sqrt = 1.0 / std::sqrt(std::clamp(b.p[j], 0.0, 1.0) + epsilon);
    g[j] = -inv_sqrt * (b.q[j] * s.denom - s.overlap) / d2;
  }
  return g;
}

Volume boundary_weight_map(const Mask& mask, const LossConfig& cfg) {
  if (!(cfg.boundary_weight > 0.0 && cfg.interior_weight > 0.0)) throw UsageError("loss weights must be positive");
  const Shape& s = mask.shape();
  Volume w(s, mask.spacing(), static_cast<float>(cfg.interior_weight));
  for (std::int64_t z = 0; z < s.nz; ++z)
    for (std::int64_t y = 0; y < s.ny; ++y)
      for (std::int64_t x = 0; x < s.nx; ++x) {
        const bool self = mask(x, y, z) != 0;
        bool differs = false;
        const std::array<Index3, 6> nbrs = {Index3{x - 1, y, z}, Index3{x + 1, y, z}, Index3{x, y - 1, z},
                                            Index3{x, y + 1, z}, Index3{x, y, z - 1}, Index3{x, y, z + 1}};
        for (const auto& n : nbrs) {
          if (!s.contains(n)) continue;
          if ((mask(n.x, n.y, n.z) != 0) != self) {
            differs = true;
            break;
          }
        }
        if (differs) w(x, y, z) = static_cast<float>(cfg.boundary_weight);
      }
  return w;
}

double mse_loss(std::span<const double> pred, std::span<const double> target) {
  check_lengths(pred, target, "mse_loss");
  if (pred.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += (pred[i] - target[i]) * (pred[i] - target[i]);
  return acc / static_cast<double>(pred.size());
}

std::vector<double> mse_loss_grad(std::span<const double> pred, std::span<const double> target) {
  check_lengths(pred, target, "mse_loss_grad");
  std::vector<double> g(pred.size());
  const double n = static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) g[i] = 2.0 * (pred[i] - target[i]) / n;
  return g;
}

CompositeLoss composite_ctv_loss(std::span<const double> main_pred, std::span<const double> aux1_pred,
                                 std::span<const double> aux2_pred, std::span<const double> dist_pred,
                                 const Mask& truth, std::span<const double> dist_target, const LossConfig& cfg) {
  const std::size_t n = truth.size();
  if (main_pred.size() != n || aux1_pred.size() != n || aux2_pred.size() != n)
    throw DataError("composite_ctv_loss: prediction shape mismatch");
  std::vector<double> q(n);
  for (std::size_t i = 0; i < n; ++i) q[i] = truth[i] ? 1.0 : 0.0;
  const Volume wmap = boundary_weight_map(truth, cfg);

  CompositeLoss out;
  LossBatch main{{main_pred.begin(), main_pred.end()}, q, {wmap.raw().begin(), wmap.raw().end()}};
  LossBatch aux1{{aux1_pred.begin(), aux1_pred.end()}, q, {}};
  LossBatch aux2{{aux2_pred.begin(), aux2_pred.end()}, q, {}};
  out.main_dice = dice_loss(main);
  out.aux1_dice = dice_loss(aux1);
  out.aux2_dice = dice_loss(aux2);
  out.grad_main = dice_loss_grad(main);
  out.grad_aux1 = dice_loss_grad(aux1);
  out.grad_aux2 = dice_loss_grad(aux2);
  out.distance_mse = mse_loss(dist_pred, dist_target);
  out.grad_dist = mse_loss_grad(dist_pred, dist_target);
  out.value = out.main_dice + out.aux1_dice + out.aux2_dice + out.distance_mse;
  return out;
}

}  // namespace ctvseg
