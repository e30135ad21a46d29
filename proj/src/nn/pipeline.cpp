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
#include "ctvseg/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include "ctvseg/mcdo.hpp"
#include "ctvseg/tensor_util.hpp"

namespace ctvseg {

nlohmann::ordered_json PipelineConfig::to_json() const {
  nlohmann::ordered_json j = voi.to_json();
  j["mcdo_samples"] = mcdo_samples;
  j["mcdo_oars"] = mcdo_oars;
  j["mcdo_seed"] = mcdo_seed;
  j["largest_component"] = largest_component;
  return j;
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j, PipelineConfig c) {
  c.voi = VoiConfig::from_json(j);
  try {
    c.mcdo_samples = j.value("mcdo_samples", c.mcdo_samples);
    c.mcdo_oars = j.value("mcdo_oars", c.mcdo_oars);
    c.mcdo_seed = j.value("mcdo_seed", c.mcdo_seed);
    c.largest_component = j.value("largest_component", c.largest_component);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("bad pipeline config: ") + e.what());
  }
  if (c.mcdo_samples < 0 || c.mcdo_samples == 1) throw UsageError("mcdo_samples must be 0 or >= 2");
  return c;
}

CheckpointSet CheckpointSet::in_dir(const std::filesystem::path& root) {
  CheckpointSet c;
  c.localizer = root / "localizer" / "best";
  for (auto s : kOrgans) c.organs[s] = root / std::string(to_string(s)) / "best";
  c.ctv = root / "ctv" / "best";
  return c;
}

Mask largest_components(const Mask& m, int keep) {
  const Components comp = label_components(m);
  if (comp.count <= keep) return m;
  std::vector<std::size_t> sizes(static_cast<std::size_t>(comp.count) + 1, 0);
  for (auto l : comp.labels.raw()) ++sizes[static_cast<std::size_t>(l)];
  std::vector<int> order(static_cast<std::size_t>(comp.count));
  std::iota(order.begin(), order.end(), 1);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sizes[a] > sizes[b]; });
  std::vector<std::uint8_t> kept(sizes.size(), 0);
  for (int i = 0; i < keep; ++i) kept[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
  Mask out(m.shape(), m.spacing());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = kept[static_cast<std::size_t>(comp.labels[i])];
  return out;
}

Mask largest_component(const Mask& m) { return largest_components(m, 1); }

UncertaintySummary uncrop_summary(const UncertaintySummary& s, const Voi& voi, const Shape& grid) {
  const Spacing& sp = s.mean.spacing();
  auto vol = [&](const Volume& v) { return uncrop(Volume(grid, sp), v, voi); };
  auto mask = [&](const Mask& m) { return uncrop(Mask(grid, sp), m, voi); };
  return {vol(s.mean),          vol(s.variance),      vol(s.lower),         vol(s.upper),
          mask(s.mean_contour), mask(s.lower_contour), mask(s.upper_contour), mask(s.band)};
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

SegNet load_net(const std::filesystem::path& stem, const char* role) {
  try {
    return load_checkpoint(stem).net;
  } catch (const DataError& e) {
    throw DataError(std::string(role) + " checkpoint: " + e.what());
  }
}

std::string fmt_index(const std::array<double, 3>& c) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(1) << "(" << c[0] << "," << c[1] << "," << c[2] << ")";
  return s.str();
}

}  // namespace

Pipeline::Pipeline(const CheckpointSet& ck, PipelineConfig cfg) : cfg_(std::move(cfg)) {
  localizer_ = load_net(ck.localizer, "localizer");
  if (localizer_->config().dims != 2 || localizer_->config().out_channels != kLocalizerChannels)
    throw DataError("localizer checkpoint has the wrong layout");
  int divisor = localizer_->config().divisor();
  for (auto s : kOrgans) {
    auto it = ck.organs.find(s);
    if (it == ck.organs.end()) throw DataError("missing checkpoint for " + std::string(to_string(s)));
    organs_.emplace(s, load_net(it->second, std::string(to_string(s)).c_str()));
    divisor = std::max(divisor, organs_.at(s)->config().divisor());
  }
  ctv_ = load_net(ck.ctv, "CTV");
  cfg_.voi.validate(std::max(divisor, ctv_->config().divisor()));
}

CaseResult Pipeline::infer(const Volume& ct, const std::string& case_id, const StructureSet* truth,
                           const StructureSet* organ_override) {
  CaseResult r;
  r.case_id = case_id;
  r.prediction = StructureSet(ct.shape(), ct.spacing());
  const int f = cfg_.voi.localizer_factor;
  const std::array<double, 3> grid_center{0.5 * static_cast<double>(ct.shape().nx - 1),
                                          0.5 * static_cast<double>(ct.shape().ny - 1),
                                          0.5 * static_cast<double>(ct.shape().nz - 1)};

  // Stage 1: coarse masks and centroids.
  auto t0 = Clock::now();
  const Volume coarse = downsample_xy(ct, f);
  torch::Tensor probs;
  {
    torch::NoGradGuard g;
    localizer_->eval();
    probs = localizer_->forward(localizer_input(coarse)).main.transpose(0, 1).contiguous();
  }
  auto channel_mask = [&](int ch) {
    return binarize(to_volume(probs[ch], coarse.shape(), coarse.spacing()));
  };
  auto to_full = [&](std::array<double, 3> c) {
    c[0] = c[0] * f + 0.5 * (f - 1);
    c[1] = c[1] * f + 0.5 * (f - 1);
    return c;
  };
  auto place = [&](StructureId s, const Mask& coarse_mask) {
    if (count_foreground(coarse_mask) == 0) {
      r.centroids[s] = grid_center;
      r.warnings.push_back("localizer found no " + std::string(to_string(s)) + "; using the grid center");
    } else {
      r.centroids[s] = to_full(centroid(coarse_mask));
    }
  };
  for (auto s : {StructureId::CTV, StructureId::Bladder, StructureId::Rectum, StructureId::PenileBulb})
    place(s, largest_component(channel_mask(localizer_channel(s))));
  {
    const Mask fem = largest_components(channel_mask(localizer_channel(StructureId::FemoralHeadL)), 2);
    auto [left, right] = split_bilateral(fem);
    place(StructureId::FemoralHeadL, left);
    place(StructureId::FemoralHeadR, right);
  }
  {
    std::ostringstream d;
    for (const auto& [s, c] : r.centroids) d << (d.tellp() ? " " : "") << to_string(s) << "=" << fmt_index(c);
    r.log.push_back({"localize", ms_since(t0), d.str()});
  }

  // Stage 2: organ VOIs.
  t0 = Clock::now();
  for (auto s : kOrgans) {
    const Voi voi = voi_around(r.centroids.at(s), cfg_.voi.size(s));
    const auto input = organ_input(crop(ct, voi), cfg_.voi.ahe);
    Mask m = binarize(predict_probability(organs_.at(s), input, ct.spacing()));
    if (cfg_.largest_component) m = largest_component(m);
    r.prediction.set(s, uncrop(Mask(ct.shape(), ct.spacing()), m, voi));
    if (cfg_.mcdo_oars && cfg_.mcdo_samples >= 2) {
      const auto stack = mcdo_sample(organs_.at(s), input, cfg_.mcdo_samples, derive_seed(cfg_.mcdo_seed, static_cast<std::uint64_t>(s)), ct.spacing());
      const auto summary = summarize(stack);
      if (auto q = contour_quality(stack, summary)) r.quality[s] = *q;
      r.uncertainty[s] = uncrop_summary(summary, voi, ct.shape());
    }
  }
  r.log.push_back({"organs", ms_since(t0), cfg_.mcdo_oars ? "mcdo" : "deterministic"});

  // Stage 3: CTV from the CT and the bladder and rectum masks.
  t0 = Clock::now();
  const Voi voi = voi_around(r.centroids.at(StructureId::CTV), cfg_.voi.size(StructureId::CTV));
  const StructureSet& organs = organ_override ? *organ_override : r.prediction;
  const bool guided = ctv_->config().in_channels == 3;
  const Mask bl = guided ? crop(organs.get(StructureId::Bladder), voi) : Mask();
  const Mask re = guided ? crop(organs.get(StructureId::Rectum), voi) : Mask();
  const auto input = ctv_input(crop(ct, voi), guided ? &bl : nullptr, guided ? &re : nullptr, guided, cfg_.voi.ahe);
  Mask ctv = binarize(predict_probability(ctv_, input, ct.spacing()));
  if (cfg_.largest_component) ctv = largest_component(ctv);
  r.prediction.set(StructureId::CTV, uncrop(Mask(ct.shape(), ct.spacing()), ctv, voi));
  if (cfg_.mcdo_samples >= 2) {
    const auto stack = mcdo_sample(ctv_, input, cfg_.mcdo_samples, derive_seed(cfg_.mcdo_seed, 0xc7), ct.spacing());
    const auto summary = summarize(stack);
    if (auto q = contour_quality(stack, summary)) r.quality[StructureId::CTV] = *q;
    else r.warnings.push_back("CTV mean contour is empty; quality undefined");
    r.uncertainty[StructureId::CTV] = uncrop_summary(summary, voi, ct.shape());
  }
  r.log.push_back({"ctv", ms_since(t0), std::string(ctv_->config().name) + " T=" + std::to_string(cfg_.mcdo_samples)});

  if (truth) r.rows = evaluate_case(r.prediction, *truth, r.quality, case_id, ctv_->config().name);
  return r;
}

void write_result(const CaseResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_structure_set(r.prediction, dir / "prediction");
  for (const auto& [s, u] : r.uncertainty) write_summary(u, dir / "uncertainty" / std::string(to_string(s)));
  nlohmann::ordered_json j;
  j["case"] = r.case_id;
  for (const auto& [s, c] : r.centroids) j["centroids"][std::string(to_string(s))] = c;
  for (const auto& [s, q] : r.quality) j["quality"][std::string(to_string(s))] = q;
  j["warnings"] = r.warnings;
  for (const auto& l : r.log) j["stages"].push_back({{"stage", l.stage}, {"ms", l.ms}, {"detail", l.detail}});
  std::ofstream(dir / "result.json") << j.dump(2) << '\n';
  std::ofstream log(dir / "log.txt");
  for (const auto& l : r.log)
    log << "stage=" << l.stage << " case=" << r.case_id << " ms=" << std::fixed << std::setprecision(1) << l.ms
        << " " << l.detail << '\n';
  if (!r.rows.empty()) {
    std::ofstream csv(dir / "eval.csv");
    write_eval_csv(csv, r.rows);
  }
}

CaseResult read_result(const std::filesystem::path& dir) {
  std::ifstream in(dir / "result.json");
  if (!in) throw DataError("missing " + (dir / "result.json").string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad result.json: " + std::string(e.what()));
  }
  CaseResult r;
  r.case_id = j.value("case", std::string());
  r.prediction = read_structure_set(dir / "prediction");
  if (j.contains("centroids"))
    for (const auto& [k, v] : j["centroids"].items()) r.centroids[parse_structure(k)] = v.get<std::array<double, 3>>();
  if (j.contains("quality"))
    for (const auto& [k, v] : j["quality"].items()) r.quality[parse_structure(k)] = v.get<double>();
  r.warnings = j.value("warnings", std::vector<std::string>{});
  if (std::filesystem::is_directory(dir / "uncertainty"))
    for (const auto& e : std::filesystem::directory_iterator(dir / "uncertainty"))
      r.uncertainty[parse_structure(e.path().filename().string())] = read_summary(e.path());
  return r;
}

std::vector<double> score_ctv(SegNet& net, const std::vector<PhantomCase>& cases, const VoiConfig& voi) {
  const bool guided = net->config().in_channels == 3;
  std::vector<double> out;
  for (const auto& c : cases) {
    const Mask& truth = c.truth.get(StructureId::CTV);
    const Voi v = voi_around(centroid(truth), voi.size(StructureId::CTV));
    const Mask bl = guided ? crop(c.truth.get(StructureId::Bladder), v) : Mask();
    const Mask re = guided ? crop(c.truth.get(StructureId::Rectum), v) : Mask();
    const auto x = ctv_input(crop(c.ct, v), guided ? &bl : nullptr, guided ? &re : nullptr, guided, voi.ahe);
    const Mask pred = binarize(predict_probability(net, x, c.ct.spacing()));
    out.push_back(dsc(uncrop(Mask(truth.shape(), truth.spacing()), pred, v), truth));
  }
  return out;
}

bool has_matching_run(const std::filesystem::path& dir, const TrainConfig& cfg, const VoiConfig& voi,
                      const std::string& data) {
  if (!std::filesystem::exists(dir / "report.json") || !std::filesystem::exists(dir / "best.pt")) return false;
  std::ifstream in(dir / "best.json");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception&) {
    return false;
  }
  const auto& extra = j.value("extra", nlohmann::json::object());
  auto train = nlohmann::json(cfg.to_json());
  auto stored = extra.value("train", nlohmann::json());
  return stored == train && extra.value("voi", nlohmann::json()) == nlohmann::json(voi.to_json()) &&
         extra.value("data", std::string()) == data;
}

double AblationReport::mean(CtvVariant v) const {
  const auto& d = dsc.at(v);
  return mean_sd(d).mean;
}

const AblationPair& AblationReport::pair(CtvVariant a, CtvVariant b) const {
  for (const auto& p : pairs)
    if (p.a == a && p.b == b) return p;
  throw UsageError("ablation: no comparison " + std::string(to_string(a)) + " vs " + std::string(to_string(b)));
}

std::string AblationReport::table() const {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4);
  s << "| variant | mean DSC | sd | n |\n|---|---|---|---|\n";
  for (const auto& [v, d] : dsc) {
    const auto m = mean_sd(d);
    s << "| " << to_string(v) << " | " << m.mean << " | " << m.sd << " | " << m.n << " |\n";
  }
  s << "\n| comparison | mean difference | t | p |\n|---|---|---|---|\n";
  for (const auto& p : pairs)
    s << "| " << to_string(p.a) << " vs " << to_string(p.b) << " | " << p.mean_difference << " | " << p.test.t
      << " | " << p.test.p << " |\n";
  return s.str();
}

nlohmann::ordered_json AblationReport::to_json() const {
  nlohmann::ordered_json j;
  j["seeds"] = seeds;
  j["cases"] = case_ids;
  for (const auto& [v, d] : dsc) {
    const auto m = mean_sd(d);
    j["variants"][std::string(to_string(v))] = {{"mean_dsc", m.mean}, {"sd", m.sd}, {"dsc", d}};
    if (train_seconds.contains(v)) j["variants"][std::string(to_string(v))]["train_seconds"] = train_seconds.at(v);
  }
  for (const auto& p : pairs)
    j["comparisons"].push_back({{"a", to_string(p.a)},
                                {"b", to_string(p.b)},
                                {"mean_difference", p.mean_difference},
                                {"t", p.test.t},
                                {"p", p.test.p},
                                {"df", p.test.df}});
  return j;
}

void AblationReport::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "ablation.json") << to_json().dump(2) << '\n';
  std::ofstream(dir / "ablation.md") << table();
  std::ofstream csv(dir / "ablation.csv");
  csv << "variant,seed,case,dsc\n" << std::setprecision(10);
  for (const auto& [v, d] : dsc)
    for (std::size_t i = 0; i < d.size(); ++i)
      csv << to_string(v) << ',' << seeds[i / case_ids.size()] << ',' << case_ids[i % case_ids.size()] << ',' << d[i]
          << '\n';
}

AblationReport run_ablation(const Dataset& data, const AblationConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.seeds.size() < 3) throw UsageError("ablation needs at least 3 seeds");
  if (cfg.variants.empty()) throw UsageError("ablation needs at least one variant");
  if (data.test.empty()) throw DataError("ablation: empty test split");
  AblationReport rep;
  rep.seeds = cfg.seeds;
  for (const auto& c : data.test) rep.case_ids.push_back(c.id);
  const std::string fp = data_fingerprint(data.train, data.val);
  for (auto seed : cfg.seeds)
    for (auto v : cfg.variants) {
      TrainConfig tc = cfg.train;
      tc.seed = seed;
      const auto dir = out_dir / std::string(to_string(v)) / ("seed_" + std::to_string(seed));
      if (!has_matching_run(dir, tc, cfg.voi, fp)) {
        const auto r = train_ctv(v, data.train, data.val, tc, cfg.voi, dir);
        rep.train_seconds[v] += r.wall_seconds;
      } else if (!tc.quiet) {
        std::clog << "[ablation] reusing " << dir.string() << std::endl;
      }
      auto net = load_checkpoint(dir / "best").net;
      const auto scores = score_ctv(net, data.test, cfg.voi);
      auto& dst = rep.dsc[v];
      dst.insert(dst.end(), scores.begin(), scores.end());
    }
  for (std::size_t i = 0; i < cfg.variants.size(); ++i)
    for (std::size_t k = 0; k < cfg.variants.size(); ++k) {
      if (i == k) continue;
      const auto a = cfg.variants[i], b = cfg.variants[k];
      AblationPair p{a, b, 0.0, paired_t_test(rep.dsc[a], rep.dsc[b])};
      for (std::size_t n = 0; n < rep.dsc[a].size(); ++n) p.mean_difference += rep.dsc[a][n] - rep.dsc[b][n];
      p.mean_difference /= static_cast<double>(rep.dsc[a].size());
      rep.pairs.push_back(p);
    }
  rep.write(out_dir);
  return rep;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  if (j.contains("pipeline")) c.pipeline = PipelineConfig::from_json(j.at("pipeline"), c.pipeline);
  if (j.contains("train")) {
    const auto& t = j.at("train");
    if (t.contains("localizer")) c.localizer = TrainConfig::from_json(t.at("localizer"), c.localizer);
    if (t.contains("organ")) c.organ = TrainConfig::from_json(t.at("organ"), c.organ);
    if (t.contains("ctv")) c.ctv = TrainConfig::from_json(t.at("ctv"), c.ctv);
  }
  if (j.contains("ablation")) {
    try {
      c.ablation_seeds = j.at("ablation").value("seeds", c.ablation_seeds);
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(std::string("bad ablation config: ") + e.what());
    }
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  j["pipeline"] = pipeline.to_json();
  j["train"]["localizer"] = localizer.to_json();
  j["train"]["organ"] = organ.to_json();
  j["train"]["ctv"] = ctv.to_json();
  j["ablation"]["seeds"] = ablation_seeds;
  return j;
}

void RunConfig::set_seed(std::uint64_t seed) {
  localizer.seed = organ.seed = ctv.seed = seed;
  pipeline.mcdo_seed = seed;
}

}  // namespace ctvseg
