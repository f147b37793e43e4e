// SPDX-FileCopyrightText: Copyright (c) 2026 The molflow Authors.
// SPDX-License-Identifier: Apache-2.0

#include "molflow/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <random>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "molflow/diagnostics.hpp"
#include "molflow/error.hpp"
#include "molflow/metrics.hpp"
#include "molflow/threads.hpp"
#include "molflow/train.hpp"

namespace molflow {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kResolved = "resolved-config.json";

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw ConfigError("write failed for '" + path.string() + "'");
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void make_out_dir(const std::string& out) {
  if (out.empty()) throw ConfigError("--out is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw ConfigError("cannot create output directory '" + out + "'");
}

Dataset read_dataset(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string(what) + " path is required");
  if (!fs::exists(path)) throw ConfigError(std::string(what) + " file '" + path + "' not found");
  return parse_dataset(fs::path(path));
}

// Flags override the config file; the file overrides built-in defaults.
class Resolver {
 public:
  Resolver(const CLI::App* app, json file, std::string command)
      : app_(app), file_(std::move(file)) {
    if (file_.is_null()) file_ = json::object();
    if (!file_.is_object()) throw ConfigError("config file: expected a JSON object");
    if (file_.contains("command") && file_.at("command") != command) {
      throw ConfigError("config file was written by '" + file_.at("command").get<std::string>() +
                        "', not '" + command + "'");
    }
  }

  template <class T>
  void fill(const std::string& flag, const std::string& key, T& value) const {
    if (app_->count(flag) > 0 || !file_.contains(key)) return;
    try {
      value = file_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }

  bool has(const std::string& key) const { return file_.contains(key); }
  const json& file() const { return file_; }

 private:
  const CLI::App* app_;
  json file_;
};

json load_optional(const std::string& path) { return path.empty() ? json() : read_json(path); }

std::size_t capped_threads(std::size_t requested) {
  return std::max<std::size_t>(1, std::min(requested, configured_threads()));
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string config;
  std::vector<std::string> templates;
  std::size_t conformers = 5;
  std::uint64_t seed = 0;
  std::string out;
};

int gen_data(const CLI::App* app, GenDataArgs a, std::ostream& out) {
  const Resolver r(app, load_optional(a.config), "gen-data");
  r.fill("--template", "templates", a.templates);
  r.fill("--conformers", "conformers", a.conformers);
  r.fill("--seed", "seed", a.seed);
  r.fill("--out", "out", a.out);
  if (a.templates.empty()) throw ConfigError("at least one --template is required");
  ToySpec spec;
  spec.templates = a.templates;
  spec.conformers = a.conformers;
  const Dataset data = generate_toy_dataset(spec, a.seed);
  make_out_dir(a.out);
  write_json(fs::path(a.out) / kResolved, {{"command", "gen-data"},
                                          {"templates", a.templates},
                                          {"conformers", a.conformers},
                                          {"seed", a.seed},
                                          {"out", a.out}});
  write_dataset(fs::path(a.out) / "dataset.jsonl", data);
  std::size_t total = 0;
  for (const Molecule& m : data) total += m.conformers.size();
  out << "wrote " << data.size() << " molecules, " << total << " conformers to "
      << (fs::path(a.out) / "dataset.jsonl").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::uint64_t seed = 0;
  std::size_t iterations = 0;
  std::size_t threads = 1;
};

int train_cmd(const CLI::App* app, TrainArgs a, std::ostream& out, std::ostream& err) {
  const json file = load_optional(a.config);
  // Either a bare training config or a resolved-config.json from an earlier run.
  const bool resolved = file.is_object() && file.contains("command");
  TrainConfig cfg = resolved ? TrainConfig::from_json(file.at("train"))
                             : (file.is_null() ? TrainConfig{} : TrainConfig::from_json(file));
  if (resolved) {
    const Resolver r(app, file, "train");
    r.fill("--data", "data", a.data);
    r.fill("--out", "out", a.out);
  }
  if (app->count("--seed") > 0) cfg.seed = a.seed;
  if (app->count("--iterations") > 0) cfg.iterations = a.iterations;
  if (app->count("--threads") > 0) cfg.threads = a.threads;
  cfg.threads = capped_threads(cfg.threads);
  cfg.validate();

  const Dataset data = read_dataset(a.data, "--data");
  make_out_dir(a.out);
  const fs::path dir(a.out);
  write_json(dir / kResolved,
             {{"command", "train"}, {"data", a.data}, {"out", a.out}, {"train", cfg.to_json()}});

  ConfFlowModel model(cfg.model, compute_feature_stats(data), cfg.seed);
  std::ofstream log(dir / "train_log.csv", std::ios::binary);
  if (!log) throw ConfigError("cannot write training log in '" + a.out + "'");
  write_log_header(log, cfg.log_wall_time);
  TrainHooks hooks;
  hooks.on_record = [&](const TrainRecord& rec) {
    write_log_row(log, rec, cfg.log_wall_time);
    log.flush();
  };
  hooks.on_checkpoint = [&](std::size_t it, const ConfFlowModel& m) {
    char name[64];
    std::snprintf(name, sizeof name, "checkpoint-%06zu.json", it);
    write_json(dir / name, checkpoint_json(m, it));
  };
  std::vector<TrainRecord> records;
  try {
    records = train(data, model, cfg, hooks);
  } catch (const DivergenceError& e) {
    err << "training diverged: " << e.what() << "\n";
    return kExitDivergence;
  }
  write_json(dir / "model.json", checkpoint_json(model, records.size()));
  if (records.empty()) {
    out << "0 iterations; wrote initial model\n";
  } else {
    out << std::setprecision(6) << "iterations " << records.size() << "  nll/dim "
        << records.front().nll_per_dim << " -> " << records.back().nll_per_dim << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct SampleArgs {
  std::string config;
  std::string model;
  std::string data;
  std::size_t per_molecule = 0;
  std::size_t times_reference = 2;
  std::uint64_t seed = 0;
  std::string out;
  std::size_t threads = 1;
};

int sample_cmd(const CLI::App* app, SampleArgs a, std::ostream& out, std::ostream& err) {
  const Resolver r(app, load_optional(a.config), "sample");
  r.fill("--model", "model", a.model);
  r.fill("--data", "data", a.data);
  r.fill("--seed", "seed", a.seed);
  r.fill("--out", "out", a.out);
  bool per_molecule = app->count("--per-molecule") > 0;
  const bool times_flag = app->count("--times-reference") > 0;
  if (!per_molecule && !times_flag) {
    if (r.has("per_molecule") && r.has("times_reference")) {
      throw ConfigError("config sets both per_molecule and times_reference");
    }
    per_molecule = r.has("per_molecule");
    r.fill("--per-molecule", "per_molecule", a.per_molecule);
    r.fill("--times-reference", "times_reference", a.times_reference);
  }
  if (per_molecule && a.per_molecule == 0) throw ConfigError("--per-molecule must be >= 1");
  if (!per_molecule && a.times_reference == 0) throw ConfigError("--times-reference must be >= 1");
  if (app->count("--threads") == 0) a.threads = configured_threads();
  const std::size_t threads = capped_threads(a.threads);

  if (a.model.empty()) throw ConfigError("--model is required");
  const ConfFlowModel model = load_checkpoint(a.model);
  const Dataset data = read_dataset(a.data, "--data");
  make_out_dir(a.out);
  const fs::path dir(a.out);
  json resolved = {{"command", "sample"}, {"model", a.model}, {"data", a.data},
                   {"seed", a.seed},      {"out", a.out},     {"solver", model.config().to_json()}};
  if (per_molecule) {
    resolved["per_molecule"] = a.per_molecule;
  } else {
    resolved["times_reference"] = a.times_reference;
  }
  write_json(dir / kResolved, resolved);

  std::mt19937_64 seeds(a.seed);
  Dataset generated;
  std::size_t skipped = 0, total = 0;
  for (const Molecule& m : data) {
    const std::size_t n = per_molecule ? a.per_molecule : a.times_reference * m.conformers.size();
    const std::uint64_t seed = seeds();
    if (n == 0) {
      err << "skipping '" << m.graph.id << "': no reference conformers to multiply\n";
      ++skipped;
      continue;
    }
    SampleOutcome s = sample(model, m.graph, n, seed, threads);
    if (!s.failures.empty()) {
      err << "skipping '" << m.graph.id << "': " << s.failures.size() << " of " << n
          << " draws failed; first: " << s.failures.front() << "\n";
      ++skipped;
      continue;
    }
    total += s.conformers.size();
    generated.push_back({m.graph, std::move(s.conformers)});
  }
  write_dataset(dir / "samples.jsonl", generated);
  out << "sampled " << total << " conformers for " << generated.size() << " molecules";
  if (skipped > 0) out << "; skipped " << skipped;
  out << "\n";
  return skipped > 0 ? kExitPartialSampling : kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string config;
  std::string generated;
  std::string reference;
  double delta = 0.5;
  bool heavy_only = true;
  bool all_atoms = false;
  bool mmd = false;
  std::uint64_t seed = 0;
  std::string out;
};

int eval_cmd(const CLI::App* app, EvalArgs a, std::ostream& out) {
  const Resolver r(app, load_optional(a.config), "eval");
  r.fill("--generated", "generated", a.generated);
  r.fill("--reference", "reference", a.reference);
  r.fill("--delta", "delta", a.delta);
  r.fill("--mmd", "mmd", a.mmd);
  r.fill("--seed", "seed", a.seed);
  r.fill("--out", "out", a.out);
  if (app->count("--all-atoms") > 0) {
    a.heavy_only = false;
  } else if (app->count("--heavy-only") == 0) {
    r.fill("--heavy-only", "heavy_only", a.heavy_only);
  }
  if (!(a.delta >= 0.0)) throw ConfigError("--delta must be >= 0");

  const Dataset gen = read_dataset(a.generated, "--generated");
  const Dataset ref = read_dataset(a.reference, "--reference");
  std::map<std::string, const Molecule*> by_id;
  for (const Molecule& m : gen) {
    if (!by_id.emplace(m.graph.id, &m).second) {
      throw ValidationError("duplicate generated molecule '" + m.graph.id + "'");
    }
  }
  if (gen.size() != ref.size()) {
    throw ValidationError("generated and reference hold " + std::to_string(gen.size()) + " vs " +
                          std::to_string(ref.size()) + " molecules");
  }
  for (const Molecule& m : ref) {
    if (by_id.count(m.graph.id) == 0) {
      throw ValidationError("molecule '" + m.graph.id + "' has no generated conformers");
    }
  }
  make_out_dir(a.out);
  const fs::path dir(a.out);
  write_json(dir / kResolved, {{"command", "eval"},
                               {"generated", a.generated},
                               {"reference", a.reference},
                               {"delta", a.delta},
                               {"heavy_only", a.heavy_only},
                               {"mmd", a.mmd},
                               {"seed", a.seed},
                               {"out", a.out}});

  std::vector<MoleculeScore> scores(ref.size());
  std::vector<MmdSection> mmd(a.mmd ? ref.size() : 0);
  parallel_for(ref.size(), configured_threads(), [&](std::size_t i) {
    const Molecule& rm = ref[i];
    const Molecule& gm = *by_id.at(rm.graph.id);
    if (gm.graph.atom_count() != rm.graph.atom_count()) {
      throw ValidationError("molecule '" + rm.graph.id + "': atom counts differ");
    }
    MoleculeScore& s = scores[i];
    s.id = rm.graph.id;
    s.generated = gm.conformers.size();
    s.reference = rm.conformers.size();
    const std::vector<bool> mask = heavy_mask(rm.graph);
    s.masked_atoms = a.heavy_only ? static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true))
                                  : rm.graph.atom_count();
    s.scores = score_ensembles(gm.conformers, rm.conformers, a.delta, a.heavy_only);
    if (a.mmd) {
      const DistanceSamples dg = distance_samples(rm.graph, gm.conformers, !a.heavy_only);
      const DistanceSamples dr = distance_samples(rm.graph, rm.conformers, !a.heavy_only);
      mmd[i] = {rm.graph.id, molflow::mmd(dg, dr, MmdVariant::Single, a.seed),
                molflow::mmd(dg, dr, MmdVariant::Pair, a.seed),
                molflow::mmd(dg, dr, MmdVariant::All, a.seed)};
    }
  });
  const ScoreReport report = score_dataset(std::move(scores), a.delta, a.heavy_only);
  json j = report_json(report, mmd);
  j["seed"] = a.seed;
  // Echo how the samples were drawn when the sampler's record sits beside them.
  const fs::path sampler = fs::path(a.generated).parent_path() / kResolved;
  if (fs::exists(sampler)) {
    try {
      const json s = read_json(sampler.string());
      if (s.value("command", "") == "sample") {
        j["sampling"] = {{"seed", s.at("seed")}, {"solver", s.at("solver")}};
      }
    } catch (const std::exception&) {
      // unreadable sampler record: report without it
    }
  }
  const std::string text = report_text(report, mmd);
  write_json(dir / "scores.json", j);
  write_text(dir / "scores.txt", text);
  out << text;
  return kExitOk;
}

// ---------------------------------------------------------------------------

int check_cmd(std::string level, const std::string& out_dir, std::ostream& out) {
  const CheckLevel lv = level == "full" ? CheckLevel::Full : CheckLevel::Fast;
  bool all = true;
  const std::vector<CheckResult> results = run_checks(lv, [&](const CheckResult& r) {
    out << format_check(r) << "\n" << std::flush;
    all = all && r.passed;
  });
  if (!out_dir.empty()) {
    make_out_dir(out_dir);
    write_json(fs::path(out_dir) / kResolved,
               {{"command", "check"}, {"level", level}, {"out", out_dir}});
    json arr = json::array();
    for (const CheckResult& r : results) {
      arr.push_back({{"name", r.name},
                     {"passed", r.passed},
                     {"measured", r.measured},
                     {"threshold", r.threshold},
                     {"seconds", r.seconds},
                     {"detail", r.detail}});
    }
    write_json(fs::path(out_dir) / "checks.json", arr);
  }
  out << (all ? "all checks passed" : "some checks FAILED") << "\n";
  return all ? kExitOk : kExitCheckFailed;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"molflow: graph-conditioned flow conformer generator"};
  app.require_subcommand(1);

  GenDataArgs g;
  CLI::App* gen = app.add_subcommand("gen-data", "write a toy JSON-lines dataset");
  gen->add_option("--config", g.config, "JSON file with defaults for these flags");
  gen->add_option("--template", g.templates, "template name, e.g. chain-6, ring-5, branched-7");
  gen->add_option("--conformers", g.conformers, "conformers per molecule");
  gen->add_option("--seed", g.seed);
  gen->add_option("--out", g.out, "output directory");

  TrainArgs t;
  CLI::App* tr = app.add_subcommand("train", "fit a model to a dataset");
  tr->add_option("--data", t.data, "JSON-lines dataset");
  tr->add_option("--config", t.config, "training config JSON or a resolved-config.json");
  tr->add_option("--out", t.out, "output directory");
  tr->add_option("--seed", t.seed);
  tr->add_option("--iterations", t.iterations);
  tr->add_option("--threads", t.threads);

  SampleArgs s;
  CLI::App* sa = app.add_subcommand("sample", "draw conformers for every molecule in a dataset");
  sa->add_option("--config", s.config, "JSON file with defaults for these flags");
  sa->add_option("--model", s.model, "checkpoint JSON");
  sa->add_option("--data", s.data, "JSON-lines dataset");
  CLI::Option* per = sa->add_option("--per-molecule", s.per_molecule, "samples per molecule");
  CLI::Option* times =
      sa->add_option("--times-reference", s.times_reference, "samples per reference conformer");
  per->excludes(times);
  sa->add_option("--seed", s.seed);
  sa->add_option("--out", s.out, "output directory");
  sa->add_option("--threads", s.threads);

  EvalArgs e;
  CLI::App* ev = app.add_subcommand("eval", "score generated against reference conformers");
  ev->add_option("--config", e.config, "JSON file with defaults for these flags");
  ev->add_option("--generated", e.generated);
  ev->add_option("--reference", e.reference);
  ev->add_option("--delta", e.delta, "RMSD threshold in Angstrom");
  CLI::Option* heavy = ev->add_flag("--heavy-only", e.heavy_only, "RMSD over heavy atoms (default)");
  CLI::Option* all = ev->add_flag("--all-atoms", e.all_atoms, "RMSD over all atoms");
  heavy->excludes(all);
  ev->add_flag("--mmd", e.mmd, "add distance-distribution MMD");
  ev->add_option("--seed", e.seed, "seed for the pair-MMD subsample");
  ev->add_option("--out", e.out, "output directory");

  std::string level = "fast";
  std::string check_out;
  CLI::App* ch = app.add_subcommand("check", "run the built-in invariant checks");
  ch->add_option("--level", level)->check(CLI::IsMember({"fast", "full"}));
  ch->add_option("--out", check_out, "optional output directory");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& pe) {
    const int code = app.exit(pe, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*gen) return gen_data(gen, g, out);
    if (*tr) return train_cmd(tr, t, out, err);
    if (*sa) return sample_cmd(sa, s, out, err);
    if (*ev) return eval_cmd(ev, e, out);
    if (*ch) return check_cmd(level, check_out, out);
  } catch (const DivergenceError& x) {
    err << "error: " << x.what() << "\n";
    return kExitDivergence;
  } catch (const molflow::ParseError& x) {
    err << "error: " << x.what() << "\n";
    return kExitInput;
  } catch (const ValidationError& x) {
    err << "error: " << x.what() << "\n";
    return kExitInput;
  } catch (const ConfigError& x) {
    err << "error: " << x.what() << "\n";
    return kExitInput;
  } catch (const EncodingError& x) {
    err << "error: " << x.what() << "\n";
    return kExitInput;
  } catch (const ShapeError& x) {
    err << "error: " << x.what() << "\n";
    return kExitInput;
  } catch (const fs::filesystem_error& x) {
    err << "error: " << x.what() << "\n";
    return kExitInput;
  } catch (const std::exception& x) {
    err << "internal error: " << x.what() << "\n";
    return kExitFailure;
  }
  return kExitInput;
}

}  // namespace molflow
