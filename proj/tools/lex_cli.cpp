// lex — command-line front end.
//
//   lex gen-data    --dataset s3 --out data/
//   lex fit-imputer --kind gmm --components 10 --data data/s3_rep0_train.csv --out imp/
//   lex train       --config run.json --out runs/a
//   lex eval        --run runs/a --data data/s3_rep0_test.csv
//   lex sweep       --config run.json --sweep rates --out sweeps/rates --jobs 4
//
// Exit codes: 0 ok, 2 usage / bad configuration, 3 I/O, 4 numerical abort.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lex/lex.hpp"

namespace fs = std::filesystem;
using lex::json;

namespace {

enum Exit : int { kOk = 0, kFailure = 1, kUsage = 2, kIo = 3, kNumerical = 4 };

std::uint64_t fnv1a_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::uint64_t h = 1469598103934665603ULL;
  char buf[1 << 14];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  return h;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw lex::IoError("cannot create output directory " + dir.string());
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw lex::IoError("cannot write " + p.string());
}

/// Indexes every regular file under `dir` (sorted, so reruns are byte-equal).
void write_manifest(const fs::path& dir, const std::string& command, const json& args) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(fs::relative(e.path(), dir));
  std::sort(files.begin(), files.end());
  json list = json::array();
  for (const auto& f : files) {
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a_file(dir / f)));
    list.push_back({{"path", f.generic_string()}, {"bytes", fs::file_size(dir / f)}, {"fnv1a64", hex}});
  }
  json m{{"format", "lex-manifest"}, {"command", command}, {"version", lex::train::version_stamp()},
         {"args", args}, {"files", list}};
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw lex::IoError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw lex::ParseError(p.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

struct GenData {
  std::string dataset = "s3";
  std::size_t n_train = 10000, n_test = 10000, replicates = 5;
  std::uint64_t seed = 0;
  double val_fraction = 0.2;
  std::string out;
};

int gen_data(const GenData& a) {
  const auto name = lex::synth::name_from_string(a.dataset);
  fs::path dir(a.out);
  ensure_dir(dir);
  for (std::size_t r = 0; r < a.replicates; ++r) {
    auto rep = lex::synth::gen_replicate(name, a.n_train, a.n_test, a.seed + r, a.val_fraction);
    const std::string stem = lex::synth::to_string(name) + "_rep" + std::to_string(r);
    lex::save_dataset(rep.train, (dir / (stem + "_train.csv")).string());
    lex::save_dataset(rep.test, (dir / (stem + "_test.csv")).string());
  }
  write_manifest(dir, "gen-data",
                 {{"dataset", lex::synth::to_string(name)}, {"n_train", a.n_train}, {"n_test", a.n_test},
                  {"replicates", a.replicates}, {"seed", a.seed}, {"val_fraction", a.val_fraction}});
  std::cout << "wrote " << a.replicates << " replicate(s) to " << dir.string() << "\n";
  return kOk;
}

struct FitImputer {
  std::string kind = "constant";
  std::size_t components = 10;
  double c = 0.0;
  std::uint64_t seed = 0;
  std::string data, out;
};

int fit_imputer(const FitImputer& a) {
  lex::impute::Spec spec;
  spec.kind = lex::impute::kind_from_string(a.kind);
  spec.components = a.components;
  spec.constant = a.c;
  spec.seed = a.seed;
  auto ds = lex::load_dataset(a.data);
  lex::impute::FitReport report;
  auto imp = lex::impute::Imputer::fit(spec, ds, &report);
  fs::path dir(a.out);
  ensure_dir(dir);
  write_text(dir / "imputer.json", imp.to_json().dump() + "\n");
  json rep{{"kind", a.kind},
           {"loglik_trace", report.loglik_trace},
           {"iterations", report.iterations},
           {"reseeds", report.reseeds},
           {"converged", report.converged},
           {"notes", report.notes}};
  rep["heldout_loglik"] = std::isfinite(report.heldout_loglik) ? json(report.heldout_loglik) : json(nullptr);
  write_text(dir / "fit_report.json", rep.dump(2) + "\n");
  write_manifest(dir, "fit-imputer",
                 {{"kind", a.kind}, {"components", a.components}, {"c", a.c}, {"seed", a.seed}, {"data", a.data}});
  std::cout << "fitted " << a.kind << " imputer on " << ds.size() << " rows\n";
  return kOk;
}

struct Train {
  std::string config, out, data, imputer;
};

int train_cmd(const Train& a) {
  auto rc = lex::config::load(a.config);
  lex::config::apply_seed_override(rc);
  fs::path dir(a.out);
  ensure_dir(dir);

  lex::Dataset train_ds;
  if (!a.data.empty()) {
    train_ds = lex::load_dataset(a.data, rc.lex.dim());
  } else {
    auto rep = lex::synth::gen_replicate(lex::synth::name_from_string(rc.data.name), rc.data.n_train, rc.data.n_test,
                                         rc.data.seed, rc.data.val_fraction);
    ensure_dir(dir / "data");
    lex::save_dataset(rep.train, (dir / "data" / "train.csv").string());
    lex::save_dataset(rep.test, (dir / "data" / "test.csv").string());
    train_ds = std::move(rep.train);
  }
  auto imp = a.imputer.empty() ? lex::impute::Imputer::fit(rc.lex.imputer, train_ds)
                               : lex::impute::Imputer::from_json(read_json(a.imputer));
  if (imp.kind() != rc.lex.imputer.kind)
    throw lex::ConfigError("imputer file kind '" + lex::impute::to_string(imp.kind()) + "' differs from the config");
  write_text(dir / "imputer.json", imp.to_json().dump() + "\n");

  lex::train::TrainOptions opt;
  opt.out_dir = dir.string();
  opt.on_epoch = [](std::size_t epoch, const lex::train::RunRecord& r) {
    const std::size_t e = epoch + 1;
    if (e == 1 || e % 10 == 0)
      std::cerr << "epoch " << e << "  loss " << r.loss.back() << "  bound " << r.bound.back() << "  rate "
                << r.expected_rate.back() << "\n";
  };
  auto out = lex::train::train<float>(rc, train_ds, imp, opt);
  write_text(dir / "run.json", out.record.to_json().dump(2) + "\n");
  write_manifest(dir, "train", {{"config", a.config}, {"data", a.data}, {"imputer", a.imputer}});
  std::cout << "trained " << rc.preset << " for " << rc.train.epochs << " epochs; record in "
            << (dir / "run.json").string() << "\n";
  return kOk;
}

struct Eval {
  std::string run, data, out;
  std::size_t masks = 100;
  std::uint64_t seed = 0;
};

int eval_cmd(const Eval& a) {
  fs::path run(a.run);
  auto record = lex::train::RunRecord::from_json(read_json(run / "run.json"));
  auto imp = lex::impute::Imputer::from_json(read_json(run / "imputer.json"));
  auto model = lex::train::load_checkpoint<float>((run / "checkpoints" / "final.ckpt").string(), record.config.lex);
  auto test = lex::load_dataset(a.data, record.config.lex.dim());
  lex::Rng rng = lex::make_stream(a.seed, "eval");
  auto m = lex::eval::evaluate_model(model, imp, test, a.masks, rng);
  fs::path dir = a.out.empty() ? run / "eval" : fs::path(a.out);
  ensure_dir(dir);
  auto j = m.to_json();
  write_text(dir / "metrics.json", j.dump(2) + "\n");
  write_manifest(dir, "eval", {{"run", a.run}, {"data", a.data}, {"masks", a.masks}, {"seed", a.seed}});
  std::cout << j.dump(2) << "\n";
  return kOk;
}

struct Sweep {
  std::string config, kind, out, presets;
  std::size_t jobs = 1, seeds = 5, masks = 100;
  std::vector<double> values;
};

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> v;
  std::stringstream ss(s);
  for (std::string t; std::getline(ss, t, ',');)
    if (!t.empty()) v.push_back(t);
  return v;
}

int sweep_cmd(const Sweep& a) {
  auto rc = lex::config::load(a.config);
  lex::config::apply_seed_override(rc);
  const auto kind = lex::eval::sweep_kind_from_string(a.kind);
  std::vector<double> xs = a.values;
  if (xs.empty()) {
    switch (kind) {
      case lex::eval::SweepKind::rates: xs = lex::eval::default_rates(); break;
      case lex::eval::SweepKind::constant: xs = lex::eval::default_constants(); break;
      case lex::eval::SweepKind::lambda: xs = lex::eval::default_lambdas(); break;
    }
  }
  auto presets = a.presets.empty() ? lex::eval::default_presets(kind) : split_commas(a.presets);
  std::vector<std::uint64_t> seeds;
  for (std::size_t s = 0; s < a.seeds; ++s) seeds.push_back(rc.train.seed + s);
  const auto cells = lex::eval::factorial(presets, xs, seeds);

  fs::path dir(a.out);
  ensure_dir(dir);
  std::size_t done = 0;
  lex::eval::SweepOptions opt{a.jobs, a.masks, dir.string(), [&](const lex::eval::CellResult& r) {
                                ++done;
                                std::cerr << "[" << done << "/" << cells.size() << "] " << r.cell.preset << " x="
                                          << r.cell.x << " seed=" << r.cell.seed
                                          << (r.ok ? "  tpr " + std::to_string(r.metrics.tpr) : "  FAILED: " + r.error)
                                          << "\n";
                              }};
  auto results = lex::eval::run_sweep<float>(rc, kind, cells, opt);
  {
    std::ofstream os(dir / "runs.csv");
    lex::eval::write_runs_csv(os, results, rc.data.name);
  }
  {
    std::ofstream os(dir / "aggregate.csv");
    lex::eval::write_aggregate_csv(os, lex::eval::aggregate(results, rc.data.name));
  }
  write_manifest(dir, "sweep", {{"config", a.config}, {"sweep", a.kind}, {"jobs", a.jobs}, {"seeds", a.seeds},
                                {"masks", a.masks}, {"presets", presets}, {"values", xs}});
  std::size_t failed = 0;
  for (const auto& r : results) failed += !r.ok;
  std::cout << results.size() << " runs (" << failed << " failed); aggregate in " << (dir / "aggregate.csv").string()
            << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LEX: instance-wise feature selection as a latent variable model"};
  app.require_subcommand(1);

  GenData g;
  auto* gen = app.add_subcommand("gen-data", "generate synthetic replicates (CSV)");
  gen->add_option("--dataset", g.dataset, "s1, s2 or s3")->check(CLI::IsMember({"s1", "s2", "s3", "S1", "S2", "S3"}));
  gen->add_option("--n-train", g.n_train)->check(CLI::PositiveNumber);
  gen->add_option("--n-test", g.n_test)->check(CLI::PositiveNumber);
  gen->add_option("--seed", g.seed);
  gen->add_option("--replicates", g.replicates)->check(CLI::PositiveNumber);
  gen->add_option("--val-fraction", g.val_fraction)->check(CLI::Range(0.0, 1.0));
  gen->add_option("--out", g.out)->required();

  FitImputer f;
  auto* fit = app.add_subcommand("fit-imputer", "fit an imputer on a train CSV");
  fit->add_option("--kind", f.kind)->required();
  fit->add_option("--components", f.components)->check(CLI::PositiveNumber);
  fit->add_option("--c", f.c, "constant for the constant imputer");
  fit->add_option("--seed", f.seed);
  fit->add_option("--data", f.data)->required();
  fit->add_option("--out", f.out)->required();

  Train t;
  auto* tr = app.add_subcommand("train", "train a model from a config file");
  tr->add_option("--config", t.config)->required();
  tr->add_option("--out", t.out)->required();
  tr->add_option("--data", t.data, "train CSV (default: generate from the config)");
  tr->add_option("--imputer", t.imputer, "fitted imputer JSON (default: fit from the config)");

  Eval e;
  auto* ev = app.add_subcommand("eval", "evaluate a trained run on a test CSV");
  ev->add_option("--run", e.run)->required();
  ev->add_option("--data", e.data)->required();
  ev->add_option("--masks", e.masks)->check(CLI::PositiveNumber);
  ev->add_option("--seed", e.seed);
  ev->add_option("--out", e.out, "output directory (default: <run>/eval)");

  Sweep s;
  auto* sw = app.add_subcommand("sweep", "run a selection-rate, constant or lambda sweep");
  sw->add_option("--config", s.config)->required();
  sw->add_option("--sweep", s.kind)->required()->check(CLI::IsMember({"rates", "constant", "lambda"}));
  sw->add_option("--out", s.out)->required();
  sw->add_option("--jobs", s.jobs)->check(CLI::PositiveNumber);
  sw->add_option("--seeds", s.seeds)->check(CLI::PositiveNumber);
  sw->add_option("--masks", s.masks)->check(CLI::PositiveNumber);
  sw->add_option("--presets", s.presets, "comma-separated preset list");
  sw->add_option("--values", s.values, "swept values, comma-separated (default: the standard grid)")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kUsage;
  }

  try {
    if (gen->parsed()) return gen_data(g);
    if (fit->parsed()) return fit_imputer(f);
    if (tr->parsed()) return train_cmd(t);
    if (ev->parsed()) return eval_cmd(e);
    if (sw->parsed()) return sweep_cmd(s);
  } catch (const lex::train::TrainingAborted& ex) {
    std::cerr << "numerical abort: " << ex.what() << "\n";
    std::cout << "diagnostics: " << ex.dump() << "\n";
    return kNumerical;
  } catch (const lex::NumericalError& ex) {
    std::cerr << "numerical error: " << ex.what() << "\n";
    return kNumerical;
  } catch (const lex::IoError& ex) {
    std::cerr << "i/o error: " << ex.what() << "\n";
    return kIo;
  } catch (const lex::ConfigError& ex) {
    std::cerr << "configuration error: " << ex.what() << "\n";
    return kUsage;
  } catch (const lex::ParseError& ex) {
    std::cerr << "parse error: " << ex.what() << "\n";
    return kUsage;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
