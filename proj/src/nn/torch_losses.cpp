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
#include "ctvseg/torch_losses.hpp"

#include "ctvseg/error.hpp"

namespace ctvseg {

using torch::autograd::AutogradContext;
using torch::autograd::tensor_list;

namespace {

// Rows are independent Dice terms: inputs are {M, N} in float64.
struct DiceFn : torch::autograd::Function<DiceFn> {
  static torch::Tensor forward(AutogradContext* ctx, const torch::Tensor& p, const torch::Tensor& q,
                               const torch::Tensor& w) {
    const auto pc = p.clamp(kProbClamp, 1.0 - kProbClamp);
    const auto a = (w * pc * q).sum(1);
    const auto d = (w * pc).sum(1) + (w * q).sum(1) + kDiceSmoothing;
    ctx->save_for_backward({q, w, a, d});
    return -2.0 * a / d;
  }
  static tensor_list backward(AutogradContext* ctx, tensor_list grad) {
    const auto s = ctx->get_saved_variables();
    const auto &q = s[0], &w = s[1], &a = s[2], &d = s[3];
    const auto g = -2.0 * w * (q * d.unsqueeze(1) - a.unsqueeze(1)) / (d * d).unsqueeze(1);
    return {g * grad[0].unsqueeze(1), torch::Tensor(), torch::Tensor()};
  }
};

struct SqrtDiceFn : torch::autograd::Function<SqrtDiceFn> {
  static torch::Tensor forward(AutogradContext* ctx, const torch::Tensor& p, const torch::Tensor& q, double eps) {
    const auto r = torch::sqrt(p.clamp(0.0, 1.0) + eps);
    const auto a = (r * q).sum(1);
    const auto b = r.sum(1) + q.sum(1);
    ctx->save_for_backward({q, r, a, b});
    return -2.0 * a / b;
  }
  static tensor_list backward(AutogradContext* ctx, tensor_list grad) {
    const auto s = ctx->get_saved_variables();
    const auto &q = s[0], &r = s[1], &a = s[2], &b = s[3];
    const auto g = -(q * b.unsqueeze(1) - a.unsqueeze(1)) / (r * (b * b).unsqueeze(1));
    return {g * grad[0].unsqueeze(1), torch::Tensor(), torch::Tensor()};
  }
};

void check_pair(const torch::Tensor& p, const torch::Tensor& q, const char* what) {
  if (p.sizes() != q.sizes() || p.dim() < 3) throw DataError(std::string(what) + ": prediction/target shape mismatch");
}

torch::Tensor rows(const torch::Tensor& t) {
  return t.reshape({t.size(0) * t.size(1), -1}).to(torch::kFloat64);
}

// {B*C} terms back to a scalar: mean over B, sum over C.
torch::Tensor reduce(const torch::Tensor& terms, const torch::Tensor& like) {
  return terms.view({like.size(0), like.size(1)}).mean(0).sum().to(like.scalar_type());
}

}  // namespace

torch::Tensor dice_loss(const torch::Tensor& p, const torch::Tensor& q, const torch::Tensor& w) {
  check_pair(p, q, "dice_loss");
  const auto wr = w.defined() ? rows(w) : torch::ones_like(rows(q));
  if (w.defined() && w.sizes() != p.sizes()) throw DataError("dice_loss: weight shape mismatch");
  return reduce(DiceFn::apply(rows(p), rows(q), wr), p);
}

torch::Tensor sqrt_dice_loss(const torch::Tensor& p, const torch::Tensor& q, double epsilon) {
  check_pair(p, q, "sqrt_dice_loss");
  if (!(epsilon > 0.0)) throw UsageError("sqrt_dice_loss: epsilon must be positive");
  return reduce(SqrtDiceFn::apply(rows(p), rows(q), epsilon), p);
}

CtvLossTerms composite_ctv_loss(const NetOutputs& out, const CtvTargets& t) {
  CtvLossTerms r;
  auto main = dice_loss(out.main, t.truth, t.weights);
  r.main = main.item<double>();
  r.total = main;
  if (out.aux1.defined()) {
    auto a1 = dice_loss(out.aux1, t.truth);
    auto a2 = dice_loss(out.aux2, t.truth);
    r.aux1 = a1.item<double>();
    r.aux2 = a2.item<double>();
    r.total = r.total + a1 + a2;
  }
  if (out.dist.defined()) {
    if (!t.dist.defined()) throw DataError("composite_ctv_loss: multi-task output needs a distance target");
    auto m = torch::mse_loss(out.dist, t.dist);
    r.dist = m.item<double>();
    r.total = r.total + m;
  }
  return r;
}

}  // namespace ctvseg
