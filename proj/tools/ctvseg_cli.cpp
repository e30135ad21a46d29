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
#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include "ctvseg/overlay.hpp"
#include "ctvseg/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ctvseg;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  bool quiet = false;
  int threads = 1;
};

RunConfig load_config(const std::string& path, const Globals& g) {
  RunConfig c = path.empty() ? RunConfig{} : RunConfig::load(path);
  if (g.seed) c.set_seed(*g.seed);
  c.localizer.quiet = c.organ.quiet = c.ctv.quiet = g.quiet;
  return c;
}

// A CT given as a MIVOL file or a case directory; truth comes along for case directories.
struct CtInput {
  Volume ct;
  std::optional<StructureSet> truth;
  std::string id;
};

CtInput read_ct(const fs::path& p) {
  CtInput in;
  if (fs::is_directory(p)) {
    if (!fs::exists(p / "ct.mivol")) throw DataError(p.string() + " holds no ct.mivol");
    in.ct = read_mivol(p / "ct.mivol");
    if (fs::exists(p / "truth")) in.truth = read_structure_set(p / "truth");
    in.id = p.filename().string();
  } else {
    in.ct = read_mivol(p);
    in.id = p.stem().string();
  }
  return in;
}

StructureSet read_truth(const fs::path& p) {
  return fs::exists(p / "truth" / "structures.json") ? read_structure_set(p / "truth") : read_structure_set(p);
}

const std::vector<PhantomCase>& split_of(const Dataset& d, const std::string& name) {
  if (name == "train") return d.train;
  if (name == "val") return d.val;
  if (name == "test") return d.test;
  throw UsageError("unknown split '" + name + "' (train, val, test)");
}

void print_summary(const std::vector<EvalRow>& rows) {
  std::cout << std::fixed << std::setprecision(4);
  for (const auto& [s, m] : summarize_rows(rows)) {
    std::cout << std::left << std::setw(14) << s << " DSC " << m.dsc.mean << " ± " << m.dsc.sd << "  ASD "
              << m.asd_mm.mean << " ± " << m.asd_mm.sd << " mm";
    if (m.quality.n) std::cout << "  quality " << m.quality.mean;
    std::cout << "  (n=" << m.dsc.n << ")\n";
  }
}

void write_eval(const std::vector<EvalRow>& rows, const fs::path& out) {
  fs::create_directories(out);
  std::ofstream csv(out / "eval.csv");
  write_eval_csv(csv, rows);
  nlohmann::ordered_json j;
  for (const auto& [s, m] : summarize_rows(rows))
    j[s] = {{"dsc_mean", m.dsc.mean}, {"dsc_sd", m.dsc.sd}, {"asd_mean_mm", m.asd_mm.mean},
            {"asd_sd_mm", m.asd_mm.sd}, {"n", m.dsc.n}};
  std::ofstream(out / "summary.json") << j.dump(2) << '\n';
}

void log_stages(const CaseResult& r, const Globals& g) {
  if (g.quiet) return;
  for (const auto& l : r.log)
    std::clog << "stage=" << l.stage << " case=" << r.case_id << " ms=" << std::fixed << std::setprecision(1) << l.ms
              << " " << l.detail << std::endl;
  for (const auto& w : r.warnings) std::clog << "warning: " << r.case_id << ": " << w << std::endl;
}

int run(int argc, char** argv) {
  CLI::App app{"Pelvic CTV and organ segmentation with anatomy-guided multi-task networks"};
  app.fallthrough();
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Master seed");
  app.add_flag("--quiet", g.quiet, "Suppress progress output");
  app.add_option("--threads", g.threads, "Intra-op threads (1 keeps runs bit-reproducible)")->check(CLI::PositiveNumber);

  // phantom gen
  auto* phantom = app.add_subcommand("phantom", "Synthetic phantom datasets");
  phantom->require_subcommand(1);
  auto* gen = phantom->add_subcommand("gen", "Generate a train/val/test phantom dataset");
  int n_train = 40, n_val = 10, n_test = 10;
  std::string out;
  gen->add_option("--n-train", n_train)->check(CLI::PositiveNumber);
  gen->add_option("--n-val", n_val)->check(CLI::PositiveNumber);
  gen->add_option("--n-test", n_test)->check(CLI::PositiveNumber);
  gen->add_option("--out", out)->required();

  // train
  auto* train = app.add_subcommand("train", "Train a network; checkpoints go to <out>/<model>/");
  train->require_subcommand(1);
  std::string config, data, variant = "AG-MTN", structure;
  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", config, "JSON run config");
    c->add_option("--data", data, "Phantom dataset directory")->required();
    c->add_option("--out", out, "Checkpoint root")->required();
  };
  auto* t_loc = train->add_subcommand("localizer", "2D localization network");
  add_common(t_loc);
  auto* t_org = train->add_subcommand("organ", "One organ network");
  t_org->add_option("structure", structure, "Bladder, Rectum, FemoralHeadL, FemoralHeadR or PenileBulb")->required();
  add_common(t_org);
  auto* t_ctv = train->add_subcommand("ctv", "CTV network");
  t_ctv->add_option("--variant", variant, "AG-MTN, MTN, AG-UNet or UNet");
  add_common(t_ctv);
  auto* t_all = train->add_subcommand("all", "Localizer, all organs, then the CTV network");
  t_all->add_option("--variant", variant, "CTV variant");
  add_common(t_all);

  // infer
  auto* infer = app.add_subcommand("infer", "Run the three-stage pipeline");
  std::string ct_path, checkpoints, truth_path, split = "test";
  std::optional<int> mcdo;
  bool mcdo_oars = false;
  infer->add_option("--ct", ct_path, "CT MIVOL file or case directory");
  infer->add_option("--data", data, "Dataset directory (runs every case of --split)");
  infer->add_option("--split", split, "Split for --data");
  infer->add_option("--checkpoints", checkpoints, "Checkpoint root")->required();
  infer->add_option("--config", config, "JSON run config");
  infer->add_option("--truth", truth_path, "Reference structure set for evaluation rows");
  infer->add_option("--out", out)->required();
  infer->add_option("--mcdo", mcdo, "MCDO samples for the CTV (0 disables)");
  infer->add_flag("--mcdo-oars", mcdo_oars, "Also sample the organ networks");

  // eval
  auto* eval = app.add_subcommand("eval", "Score predictions against references");
  std::string pred_path;
  eval->add_option("--pred", pred_path, "Result directory, or a directory of result directories")->required();
  eval->add_option("--truth", truth_path, "Structure set, case directory, or dataset split directory")->required();
  eval->add_option("--out", out)->required();

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Train and compare the four CTV variants");
  std::vector<std::uint64_t> seeds;
  ablate->add_option("--data", data)->required();
  ablate->add_option("--config", config);
  ablate->add_option("--seeds", seeds, "At least three seeds");
  ablate->add_option("--out", out)->required();

  // overlay
  auto* overlay = app.add_subcommand("overlay", "Render CTV overlay PNGs");
  std::string result_path;
  overlay->add_option("--ct", ct_path, "CT MIVOL file or case directory")->required();
  overlay->add_option("--result", result_path, "Result directory from infer")->required();
  overlay->add_option("--truth", truth_path, "Reference structure set");
  overlay->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code != 0) std::cerr << app.help();
    return code == 0 ? 0 : 1;
  }
  if (*seed_opt) g.seed = seed_value;
  torch::set_num_threads(g.threads);

  if (*gen) {
    const auto d = generate_dataset(g.seed.value_or(0), n_train, n_val, n_test);
    write_dataset(d, g.seed.value_or(0), out);
    if (!g.quiet)
      std::clog << "wrote " << d.train.size() + d.val.size() + d.test.size() << " cases to " << out << std::endl;
    return 0;
  }

  if (*train) {
    RunConfig rc = load_config(config, g);
    const Dataset d = read_dataset(data);
    const auto& voi = rc.pipeline.voi;
    auto train_loc = [&] { train_localizer(d.train, d.val, rc.localizer, voi, fs::path(out) / "localizer"); };
    auto train_org = [&](StructureId s) {
      if (s == StructureId::CTV) throw UsageError("use 'train ctv' for the CTV");
      train_organ(s, d.train, d.val, rc.organ, voi, fs::path(out) / std::string(to_string(s)));
    };
    auto train_c = [&] { train_ctv(parse_ctv_variant(variant), d.train, d.val, rc.ctv, voi, fs::path(out) / "ctv"); };
    if (*t_loc) train_loc();
    if (*t_org) train_org(parse_structure(structure));
    if (*t_ctv) train_c();
    if (*t_all) {
      train_loc();
      for (auto s : kOrgans) train_org(s);
      train_c();
    }
    return 0;
  }

  if (*infer) {
    RunConfig rc = load_config(config, g);
    if (mcdo) rc.pipeline.mcdo_samples = *mcdo;
    if (mcdo_oars) rc.pipeline.mcdo_oars = true;
    if (rc.pipeline.mcdo_samples == 1) throw UsageError("--mcdo needs 0 or at least 2 samples");
    Pipeline p(CheckpointSet::in_dir(checkpoints), rc.pipeline);
    std::vector<EvalRow> rows;
    auto one = [&](const Volume& ct, const std::string& id, const StructureSet* truth, const fs::path& dir) {
      const auto r = p.infer(ct, id, truth);
      log_stages(r, g);
      write_result(r, dir);
      rows.insert(rows.end(), r.rows.begin(), r.rows.end());
    };
    if (!data.empty()) {
      const Dataset d = read_dataset(data);
      for (const auto& c : split_of(d, split)) one(c.ct, c.id, &c.truth, fs::path(out) / c.id);
    } else if (!ct_path.empty()) {
      CtInput in = read_ct(ct_path);
      if (!truth_path.empty()) in.truth = read_truth(truth_path);
      one(in.ct, in.id, in.truth ? &*in.truth : nullptr, out);
    } else {
      throw UsageError("infer needs --ct or --data");
    }
    if (!rows.empty()) {
      write_eval(rows, out);
      if (!g.quiet) print_summary(rows);
    }
    return 0;
  }

  if (*eval) {
    std::vector<EvalRow> rows;
    auto score = [&](const fs::path& result_dir, const StructureSet& truth, const std::string& id) {
      const CaseResult r = read_result(result_dir);
      const auto rr = evaluate_case(r.prediction, truth, r.quality, id.empty() ? r.case_id : id);
      rows.insert(rows.end(), rr.begin(), rr.end());
    };
    const fs::path pred(pred_path), truth(truth_path);
    if (fs::exists(pred / "prediction")) {
      score(pred, read_truth(truth), "");
    } else {
      if (!fs::is_directory(pred)) throw DataError("no predictions under " + pred.string());
      std::vector<fs::path> cases;
      for (const auto& e : fs::directory_iterator(pred))
        if (fs::exists(e.path() / "prediction")) cases.push_back(e.path());
      std::sort(cases.begin(), cases.end());
      if (cases.empty()) throw DataError("no predictions under " + pred.string());
      for (const auto& c : cases) {
        const auto name = c.filename();
        fs::path t = truth / name;
        if (!fs::exists(t))
          for (const char* s : {"train", "val", "test"})
            if (fs::exists(truth / s / name)) t = truth / s / name;
        if (!fs::exists(t)) throw DataError("no reference for case " + name.string());
        score(c, read_truth(t), name.string());
      }
    }
    write_eval(rows, out);
    if (!g.quiet) print_summary(rows);
    return 0;
  }

  if (*ablate) {
    RunConfig rc = load_config(config, g);
    AblationConfig ac;
    ac.seeds = seeds.empty() ? rc.ablation_seeds : seeds;
    ac.train = rc.ctv;
    ac.voi = rc.pipeline.voi;
    const auto rep = run_ablation(read_dataset(data), ac, out);
    if (!g.quiet) std::cout << rep.table();
    return 0;
  }

  if (*overlay) {
    const CtInput in = read_ct(ct_path);
    const CaseResult r = read_result(result_path);
    auto it = r.uncertainty.find(StructureId::CTV);
    if (it == r.uncertainty.end()) throw DataError("result has no CTV uncertainty summary (run infer with --mcdo >= 2)");
    std::optional<Mask> truth;
    if (!truth_path.empty()) truth = read_truth(truth_path).get(StructureId::CTV);
    else if (in.truth && in.truth->has(StructureId::CTV)) truth = in.truth->get(StructureId::CTV);
    const auto files = emit_overlays(in.ct, it->second, truth ? &*truth : nullptr, out, r.case_id.empty() ? in.id : r.case_id);
    if (!g.quiet)
      for (const auto& f : files) std::cout << f.string() << '\n';
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const c10::Error& e) {
    std::cerr << "runtime failure: " << e.what_without_backtrace() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return 3;
  }
}
