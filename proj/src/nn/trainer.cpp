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
#include "ctvseg/trainer.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>

#include "ctvseg/checkpoint.hpp"
#include "ctvseg/disttf.hpp"
#include "ctvseg/losses.hpp"
#include "ctvseg/metrics.hpp"
#include "ctvseg/tensor_util.hpp"
#include "ctvseg/torch_losses.hpp"

namespace ctvseg {

TrainConfig TrainConfig::localizer_defaults() {
  TrainConfig c;
  c.epochs = 50;
  c.batch_size = 16;
  c.base_width = 32;
  return c;
}

TrainConfig TrainConfig::segmentation_defaults() {
  TrainConfig c;
  c.l2_finetune_epochs = 0;
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw UsageError("train: epochs must be >= 1");
  if (l2_finetune_epochs < 0 || l2_finetune_epochs > epochs)
    throw UsageError("train: l2_finetune_epochs must be in [0, epochs]");
  if (batch_size < 1) throw UsageError("train: batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !(decay_factor > 0.0)) throw UsageError("train: rates must be positive");
  if (!(keep_prob_unlabeled > 0.0 && keep_prob_unlabeled <= 1.0))
    throw UsageError("train: keep_prob_unlabeled must be in (0, 1]");
  if (crop_jitter < 0) throw UsageError("train: crop_jitter must be >= 0");
  for (double f : decay_at)
    if (!(f > 0.0 && f < 1.0)) throw UsageError("train: decay_at fractions must be in (0, 1)");
  augment.validate();
}

nlohmann::ordered_json TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["epochs"] = epochs;
  j["l2_finetune_epochs"] = l2_finetune_epochs;
  j["batch_size"] = batch_size;
  j["learning_rate"] = learning_rate;
  j["decay_at"] = decay_at;
  j["decay_factor"] = decay_factor;
  j["seed"] = seed;
  j["augment"] = {{"enabled", augment_enabled},
                  {"max_rotation_deg", augment.max_rotation_deg},
                  {"scale_min", augment.scale_min},
                  {"scale_max", augment.scale_max},
                  {"flip_x", augment.flip_x}};
  j["keep_prob_unlabeled"] = keep_prob_unlabeled;
  j["base_width"] = base_width;
  j["crop_jitter"] = crop_jitter;
  j["snapshot_epochs"] = snapshot_epochs;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig c) {
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.l2_finetune_epochs = j.value("l2_finetune_epochs", c.l2_finetune_epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.decay_at = j.value("decay_at", c.decay_at);
    c.decay_factor = j.value("decay_factor", c.decay_factor);
    c.seed = j.value("seed", c.seed);
    if (j.contains("augment")) {
      const auto& a = j.at("augment");
      c.augment_enabled = a.value("enabled", c.augment_enabled);
      c.augment.max_rotation_deg = a.value("max_rotation_deg", c.augment.max_rotation_deg);
      c.augment.scale_min = a.value("scale_min", c.augment.scale_min);
      c.augment.scale_max = a.value("scale_max", c.augment.scale_max);
      c.augment.flip_x = a.value("flip_x", c.augment.flip_x);
    }
    c.keep_prob_unlabeled = j.value("keep_prob_unlabeled", c.keep_prob_unlabeled);
    c.base_width = j.value("base_width", c.base_width);
    c.crop_jitter = j.value("crop_jitter", c.crop_jitter);
    c.snapshot_epochs = j.value("snapshot_epochs", c.snapshot_epochs);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("bad training config: ") + e.what());
  }
  c.validate();
  return c;
}

double learning_rate_at(const TrainConfig& cfg, int epoch) {
  double lr = cfg.learning_rate;
  for (double f : cfg.decay_at)
    if (epoch > static_cast<int>(std::lround(f * cfg.epochs))) lr *= cfg.decay_factor;
  return lr;
}

nlohmann::ordered_json TrainReport::to_json() const {
  nlohmann::ordered_json j;
  j["model"] = model;
  j["config_hash"] = config_hash;
  j["best_epoch"] = best_epoch;
  j["best_val_dsc"] = best_val_dsc;
  j["best_checkpoint"] = best_checkpoint.string();
  j["wall_seconds"] = wall_seconds;
  for (const auto& [e, p] : snapshots) j["snapshots"][std::to_string(e)] = p.string();
  j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& r : epochs)
    j["epochs"].push_back({{"epoch", r.epoch},
                           {"loss_fn", r.loss_fn},
                           {"loss", r.loss},
                           {"val_dsc", r.val_dsc},
                           {"val_recall", r.val_recall},
                           {"lr", r.learning_rate},
                           {"seconds", r.seconds}});
  return j;
}

void TrainReport::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "report.json") << to_json().dump(2) << '\n';
  std::ofstream csv(dir / "epochs.csv");
  csv << "epoch,loss_fn,loss,val_dsc,val_recall,lr,seconds\n" << std::setprecision(10);
  for (const auto& r : epochs)
    csv << r.epoch << ',' << r.loss_fn << ',' << r.loss << ',' << r.val_dsc << ',' << r.val_recall << ','
        << r.learning_rate << ',' << r.seconds << '\n';
  if (!csv) throw DataError("cannot write " + (dir / "epochs.csv").string());
}

std::string data_fingerprint(const std::vector<PhantomCase>& train, const std::vector<PhantomCase>& val) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](std::string_view text) {
    for (unsigned char c : text) {
      h ^= c;
      h *= 1099511628211ull;
    }
  };
  for (const auto& c : train) mix(c.id + ",");
  mix("|");
  for (const auto& c : val) mix(c.id + ",");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

struct Batch {
  torch::Tensor x, y, w, dist;
};

struct Score {
  double dsc = 0.0, recall = 0.0;
};

struct Loop {
  std::string model;
  std::uint64_t tag = 0;  // decorrelates the random streams of different models
  SegNet net{nullptr};
  // Item indices visited this epoch, before shuffling.
  std::function<std::vector<std::size_t>(int epoch, Rng& rng)> items;
  std::function<Batch(const std::vector<std::size_t>& idx, Rng& rng)> batch;
  std::function<std::pair<torch::Tensor, std::string>(const NetOutputs&, const Batch&, int epoch)> loss;
  std::function<Score()> validate;
  nlohmann::json extra;
};

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

TrainReport run(Loop& loop, const TrainConfig& cfg, const std::filesystem::path& out_dir) {
  const auto start = std::chrono::steady_clock::now();
  std::filesystem::create_directories(out_dir);
  TrainReport report;
  report.model = loop.model;
  report.config_hash = loop.net->config().hash();
  torch::optim::Adam opt(loop.net->parameters(), torch::optim::AdamOptions(cfg.learning_rate));
  const std::uint64_t stream_seed = derive_seed(cfg.seed, loop.tag);
  CheckpointMeta meta{loop.net->config(), cfg.seed, 0, loop.extra};
  meta.extra["train"] = cfg.to_json();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = learning_rate_at(cfg, epoch);
    for (auto& g : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(g.options()).lr(rec.learning_rate);

    Rng rng(stream_seed, static_cast<std::uint64_t>(epoch));
    auto order = loop.items(epoch, rng);
    if (order.empty()) throw DataError(loop.model + ": no training items");
    shuffle(order, rng);
    loop.net->train();
    double total = 0.0;
    std::size_t steps = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                   order.begin() + static_cast<std::ptrdiff_t>(
                                                       std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size))));
      Rng brng = rng.split(b);
      const Batch batch = loop.batch(idx, brng);
      opt.zero_grad();
      const auto out = loop.net->forward(batch.x, {true, derive_seed(stream_seed, (static_cast<std::uint64_t>(epoch) << 32) | b)});
      auto [loss, name] = loop.loss(out, batch, epoch);
      loss.backward();
      opt.step();
      total += loss.item<double>();
      rec.loss_fn = name;
      ++steps;
    }
    rec.loss = total / static_cast<double>(steps);
    loop.net->eval();
    const Score s = loop.validate();
    rec.val_dsc = s.dsc;
    rec.val_recall = s.recall;
    meta.epoch = epoch;
    meta.extra["val_dsc"] = s.dsc;
    if (s.dsc > report.best_val_dsc) {
      report.best_val_dsc = s.dsc;
      report.best_epoch = epoch;
      report.best_checkpoint = out_dir / "best";
      save_checkpoint(loop.net, meta, report.best_checkpoint);
    }
    if (std::find(cfg.snapshot_epochs.begin(), cfg.snapshot_epochs.end(), epoch) != cfg.snapshot_epochs.end()) {
      const auto stem = out_dir / ("epoch_" + std::to_string(epoch));
      save_checkpoint(loop.net, meta, stem);
      report.snapshots[epoch] = stem;
    }
    rec.seconds = seconds_since(t0);
    report.epochs.push_back(rec);
    if (!cfg.quiet)
      std::clog << "[" << loop.model << "] epoch " << epoch << "/" << cfg.epochs << " " << rec.loss_fn
                << " loss=" << std::fixed << std::setprecision(4) << rec.loss << " val_dsc=" << rec.val_dsc
                << " val_recall=" << rec.val_recall << " lr=" << std::defaultfloat << rec.learning_rate << " "
                << std::setprecision(3) << rec.seconds << "s" << std::endl;
  }
  report.wall_seconds = seconds_since(start);
  report.write(out_dir);
  return report;
}

torch::Tensor stack(const std::vector<torch::Tensor>& v) { return torch::stack(v, 0); }

void require_cases(const std::vector<PhantomCase>& train, const std::vector<PhantomCase>& val, const char* what) {
  if (train.empty()) throw DataError(std::string(what) + ": empty training set");
  if (val.empty()) throw DataError(std::string(what) + ": empty validation set");
}

Voi jittered_voi(const Mask& m, const Shape& size, int jitter, Rng& rng) {
  auto c = centroid(m);
  for (auto& v : c) v += static_cast<double>(rng.uniform_int(-jitter, jitter));
  return voi_around(c, size);
}

StructureSet coarse_truth(const PhantomCase& c, int factor) {
  const Volume probe = downsample_xy(Volume(c.ct.shape(), c.ct.spacing()), factor);
  StructureSet s(probe.shape(), probe.spacing());
  for (const auto& [id, m] : c.truth.masks()) s.set(id, downsample_xy(m, factor));
  return s;
}

// Full-grid DSC and recall of a thresholded VOI prediction.
Score voi_score(const Volume& prob, const Voi& voi, const Mask& truth) {
  const Mask pred = uncrop(Mask(truth.shape(), truth.spacing()), binarize(prob), voi);
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    total += truth[i];
    hit += truth[i] && pred[i];
  }
  return {dsc(pred, truth), total ? static_cast<double>(hit) / static_cast<double>(total) : 1.0};
}

Score mean_score(const std::vector<Score>& v) {
  Score m;
  for (const auto& s : v) {
    m.dsc += s.dsc / static_cast<double>(v.size());
    m.recall += s.recall / static_cast<double>(v.size());
  }
  return m;
}

}  // namespace

TrainReport train_localizer(const std::vector<PhantomCase>& train, const std::vector<PhantomCase>& val,
                            const TrainConfig& cfg, const VoiConfig& voi, const std::filesystem::path& out_dir) {
  cfg.validate();
  require_cases(train, val, "train_localizer");
  const int f = voi.localizer_factor;

  std::vector<Slice2D> slices;
  for (std::size_t ci = 0; ci < train.size(); ++ci) {
    const auto img = localizer_input(downsample_xy(train[ci].ct, f));
    const auto lab = localizer_labels(coarse_truth(train[ci], f));
    for (std::int64_t z = 0; z < img.size(0); ++z) {
      Slice2D s;
      auto im = img[z][0].contiguous();
      auto lb = lab.select(1, z).contiguous();
      s.image.assign(im.data_ptr<float>(), im.data_ptr<float>() + im.numel());
      s.labels.assign(lb.data_ptr<float>(), lb.data_ptr<float>() + lb.numel());
      s.has_label = lb.max().item<float>() > 0.0f;
      s.case_index = static_cast<int>(ci);
      s.z = static_cast<int>(z);
      slices.push_back(std::move(s));
    }
  }
  const std::int64_t ny = localizer_input(downsample_xy(train[0].ct, f)).size(2);
  const std::int64_t nx = localizer_input(downsample_xy(train[0].ct, f)).size(3);
  const Spacing coarse_spacing = downsample_xy(train[0].ct, f).spacing();
  const std::int64_t plane = nx * ny;

  struct Val {
    torch::Tensor input, labels;
  };
  std::vector<Val> vals;
  for (const auto& c : val) vals.push_back({localizer_input(downsample_xy(c.ct, f)), localizer_labels(coarse_truth(c, f))});

  std::vector<Slice2D> epoch_slices;
  Loop loop;
  loop.model = "localizer";
  loop.tag = 0x10c;
  auto ncfg = localizer_config(cfg.base_width);
  loop.net = build_net(ncfg, derive_seed(cfg.seed, loop.tag));
  loop.extra = {{"kind", "localizer"}, {"voi", voi.to_json()}, {"data", data_fingerprint(train, val)}};
  loop.items = [&](int, Rng& rng) {
    epoch_slices = balance_slices(slices, cfg.keep_prob_unlabeled, rng);
    return iota(epoch_slices.size());
  };
  loop.batch = [&](const std::vector<std::size_t>& idx, Rng& rng) {
    std::vector<torch::Tensor> xs, ys;
    for (auto i : idx) {
      const Slice2D& s = epoch_slices[i];
      Volume img({nx, ny, 1}, coarse_spacing, s.image);
      std::vector<Mask> masks;
      for (int ch = 0; ch < kLocalizerChannels; ++ch) {
        Mask m({nx, ny, 1}, coarse_spacing);
        for (std::int64_t k = 0; k < plane; ++k) m[static_cast<std::size_t>(k)] = s.labels[static_cast<std::size_t>(ch * plane + k)] > 0.5f;
        masks.push_back(std::move(m));
      }
      if (cfg.augment_enabled) {
        auto a = augment(img, masks, cfg.augment, rng);
        img = std::move(a.volume);
        masks = std::move(a.masks);
      }
      xs.push_back(to_tensor(img).view({1, ny, nx}));
      std::vector<torch::Tensor> ch;
      for (const auto& m : masks) ch.push_back(to_tensor(m).view({ny, nx}));
      ys.push_back(torch::stack(ch, 0));
    }
    return Batch{stack(xs), stack(ys), {}, {}};
  };
  const int l1_epochs = cfg.epochs - cfg.l2_finetune_epochs;
  loop.loss = [&](const NetOutputs& out, const Batch& b, int epoch) -> std::pair<torch::Tensor, std::string> {
    if (epoch <= l1_epochs) return {dice_loss(out.main, b.y), "L1"};
    return {sqrt_dice_loss(out.main, b.y), "L2"};
  };
  loop.validate = [&]() {
    torch::NoGradGuard g;
    double d = 0.0, r = 0.0;
    int n = 0;
    for (const auto& v : vals) {
      const auto pred = (loop.net->forward(v.input).main >= 0.5f).to(torch::kFloat64).transpose(0, 1);
      const auto truth = v.labels.to(torch::kFloat64);
      for (int ch = 0; ch < kLocalizerChannels; ++ch) {
        const double inter = (pred[ch] * truth[ch]).sum().item<double>();
        const double ps = pred[ch].sum().item<double>(), ts = truth[ch].sum().item<double>();
        d += ps + ts > 0.0 ? 2.0 * inter / (ps + ts) : 1.0;
        r += ts > 0.0 ? inter / ts : 1.0;
        ++n;
      }
    }
    return Score{d / n, r / n};
  };
  return run(loop, cfg, out_dir);
}

TrainReport train_organ(StructureId s, const std::vector<PhantomCase>& train, const std::vector<PhantomCase>& val,
                        const TrainConfig& cfg, const VoiConfig& voi, const std::filesystem::path& out_dir) {
  cfg.validate();
  require_cases(train, val, "train_organ");
  const Shape size = voi.size(s);
  Loop loop;
  loop.model = std::string(to_string(s));
  loop.tag = 0x0a0 + static_cast<std::uint64_t>(s);
  loop.net = build_net(organ_config(s, cfg.base_width), derive_seed(cfg.seed, loop.tag));
  voi.validate(loop.net->config().divisor());
  loop.extra = {{"kind", "organ"}, {"structure", to_string(s)}, {"voi", voi.to_json()}, {"data", data_fingerprint(train, val)}};
  loop.items = [&](int, Rng&) { return iota(train.size()); };
  loop.batch = [&](const std::vector<std::size_t>& idx, Rng& rng) {
    std::vector<torch::Tensor> xs, ys;
    for (auto i : idx) {
      const auto& c = train[i];
      const Voi v = jittered_voi(c.truth.get(s), size, cfg.crop_jitter, rng);
      Volume ct = crop(c.ct, v);
      Mask m = crop(c.truth.get(s), v);
      if (cfg.augment_enabled) {
        auto a = augment(ct, {m}, cfg.augment, rng);
        ct = std::move(a.volume);
        m = std::move(a.masks[0]);
      }
      xs.push_back(organ_input(ct, voi.ahe));
      ys.push_back(to_tensor(m).unsqueeze(0));
    }
    return Batch{stack(xs), stack(ys), {}, {}};
  };
  loop.loss = [](const NetOutputs& out, const Batch& b, int) -> std::pair<torch::Tensor, std::string> {
    return {dice_loss(out.main, b.y), "L1"};
  };
  loop.validate = [&]() {
    std::vector<Score> scores;
    for (const auto& c : val) {
      const Mask& truth = c.truth.get(s);
      const Voi v = voi_around(centroid(truth), size);
      scores.push_back(voi_score(predict_probability(loop.net, organ_input(crop(c.ct, v), voi.ahe), c.ct.spacing()), v, truth));
    }
    return mean_score(scores);
  };
  return run(loop, cfg, out_dir);
}

TrainReport train_ctv(CtvVariant variant, const std::vector<PhantomCase>& train, const std::vector<PhantomCase>& val,
                      const TrainConfig& cfg, const VoiConfig& voi, const std::filesystem::path& out_dir) {
  cfg.validate();
  require_cases(train, val, "train_ctv");
  const bool guided = anatomy_guided(variant), mt = multi_task(variant);
  for (const auto* set : {&train, &val})
    for (const auto& c : *set)
      if (guided && (!c.truth.has(StructureId::Bladder) || !c.truth.has(StructureId::Rectum)))
        throw DataError("train_ctv: case " + c.id + " lacks organ masks for anatomy guidance");
  const Shape size = voi.size(StructureId::CTV);
  Loop loop;
  loop.model = std::string(to_string(variant));
  loop.tag = 0xc70;
  loop.net = build_net(agmtn_config(guided, mt, cfg.base_width), derive_seed(cfg.seed, loop.tag));
  voi.validate(loop.net->config().divisor());
  loop.extra = {{"kind", "ctv"}, {"variant", to_string(variant)}, {"voi", voi.to_json()}, {"data", data_fingerprint(train, val)}};
  loop.items = [&](int, Rng&) { return iota(train.size()); };
  loop.batch = [&](const std::vector<std::size_t>& idx, Rng& rng) {
    std::vector<torch::Tensor> xs, ys, ws, ds;
    for (auto i : idx) {
      const auto& c = train[i];
      const Voi v = jittered_voi(c.truth.get(StructureId::CTV), size, cfg.crop_jitter, rng);
      Volume ct = crop(c.ct, v);
      std::vector<Mask> masks{crop(c.truth.get(StructureId::CTV), v)};
      if (guided) {
        masks.push_back(crop(c.truth.get(StructureId::Bladder), v));
        masks.push_back(crop(c.truth.get(StructureId::Rectum), v));
      }
      if (cfg.augment_enabled) {
        auto a = augment(ct, masks, cfg.augment, rng);
        ct = std::move(a.volume);
        masks = std::move(a.masks);
      }
      xs.push_back(ctv_input(ct, guided ? &masks[1] : nullptr, guided ? &masks[2] : nullptr, guided, voi.ahe));
      ys.push_back(to_tensor(masks[0]).unsqueeze(0));
      ws.push_back(to_tensor(boundary_weight_map(masks[0])).unsqueeze(0));
      if (mt) {
        const double diag = physical_diagonal(ct.shape(), ct.spacing());
        ds.push_back(count_foreground(masks[0]) ? to_tensor(normalize_distance(distance_target(masks[0]), diag)).unsqueeze(0)
                                                : torch::ones_like(ys.back()));
      }
    }
    return Batch{stack(xs), stack(ys), stack(ws), mt ? stack(ds) : torch::Tensor()};
  };
  loop.loss = [mt](const NetOutputs& out, const Batch& b, int) -> std::pair<torch::Tensor, std::string> {
    return {composite_ctv_loss(out, {b.y, b.w, b.dist}).total, mt ? "composite" : "dice+aux"};
  };
  loop.validate = [&]() {
    std::vector<Score> scores;
    for (const auto& c : val) {
      const Mask& truth = c.truth.get(StructureId::CTV);
      const Voi v = voi_around(centroid(truth), size);
      const Mask bl = guided ? crop(c.truth.get(StructureId::Bladder), v) : Mask();
      const Mask re = guided ? crop(c.truth.get(StructureId::Rectum), v) : Mask();
      const auto x = ctv_input(crop(c.ct, v), guided ? &bl : nullptr, guided ? &re : nullptr, guided, voi.ahe);
      scores.push_back(voi_score(predict_probability(loop.net, x, c.ct.spacing()), v, truth));
    }
    return mean_score(scores);
  };
  return run(loop, cfg, out_dir);
}

}  // namespace ctvseg
