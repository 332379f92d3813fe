#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "oex/error.hpp"
#include "oex/gmm.hpp"
#include "oex/pipeline.hpp"
#include "oex/selftest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4 };

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> sets;
};

oex::RunConfig resolve_config(const Globals& g) {
  json doc = json::object();
  if (!g.config_path.empty()) {
    std::ifstream f(g.config_path);
    if (!f) throw oex::ConfigError("cannot open config '" + g.config_path + "'");
    doc = json::parse(f, nullptr, false);
    if (doc.is_discarded()) throw oex::ConfigError("config '" + g.config_path + "' is not valid JSON");
  }
  for (const auto& s : g.sets) oex::apply_override(doc, s);
  if (g.seed) oex::apply_override(doc, "seed=" + std::to_string(*g.seed));
  if (!g.out.empty()) doc["outputs"]["dir"] = g.out;
  return oex::run_config_from_json(doc);
}

fs::path ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw oex::DataError("cannot create '" + dir.string() + "': " + ec.message());
  return dir;
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw oex::DataError(std::string(what) + " '" + p.string() + "' does not exist");
}

int cmd_gen_data(const oex::RunConfig& cfg) {
  const fs::path dir = ensure_dir(cfg.out_dir);
  oex::Benchmark b = oex::generate_benchmark(cfg);
  oex::write_benchmark(b, dir);
  std::cout << "wrote " << b.id_train.size() << " train, " << b.id_test.size() << " test, " << b.aux.size()
            << " auxiliary outliers";
  for (const auto& [name, d] : b.ood) std::cout << ", " << d.size() << " ood_" << name;
  std::cout << " to " << dir.string() << "\n";
  return kOk;
}

int cmd_train(const oex::RunConfig& cfg, const std::string& data_dir, bool checkpoints) {
  const fs::path dir = ensure_dir(cfg.out_dir);
  oex::Benchmark b = oex::read_benchmark(data_dir.empty() ? dir : fs::path(data_dir));
  oex::RunConfig run = cfg;
  if (checkpoints) run.train.checkpoint_dir = ensure_dir(dir / "checkpoints");
  oex::TrainedModels m = oex::train_pipeline(run, b);
  oex::save_checkpoint(m.initial, dir / "model_init.json");
  oex::save_checkpoint(m.fine_tuned, dir / "model.json");
  oex::write_text(dir / "history.csv", oex::history_to_csv(m.history));

  if (m.history.empty()) {
    std::cout << "no training steps; checkpoint equals initialization\n";
    return kOk;
  }
  const int last = m.history.back().epoch;
  double ce = 0, total = 0, orig = 0, ext = 0;
  std::size_t count = 0, n_orig = 0, n_ext = 0;
  for (const auto& r : m.history) {
    if (r.epoch != last) continue;
    ce += r.ce;
    total += r.total;
    ++count;
    if (r.oe_original) orig += *r.oe_original, ++n_orig;
    if (r.oe_extrapolated) ext += *r.oe_extrapolated, ++n_ext;
  }
  std::cout << "method " << cfg.method << ", epoch " << last + 1 << ": ce " << ce / count << ", total " << total / count;
  if (n_orig) std::cout << ", outlier(original) " << orig / n_orig;
  if (n_ext) std::cout << ", outlier(extrapolated) " << ext / n_ext;
  std::cout << "\n";
  return kOk;
}

void print_reports(const std::vector<oex::DetectionReport>& reports) {
  for (const auto& r : reports) {
    std::cout << r.method << " / " << r.score << "  (id_acc " << r.id_accuracy << ")\n";
    for (const auto& rec : r.records) {
      std::cout << "  " << rec.ood_set << ": fpr95 " << rec.fpr95 << "  auroc " << rec.auroc << "  aupr " << rec.aupr
                << "\n";
    }
  }
}

int cmd_eval(const oex::RunConfig& cfg, const std::string& data_dir, const std::string& checkpoint) {
  const fs::path dir = ensure_dir(cfg.out_dir);
  const fs::path ckpt = checkpoint.empty() ? dir / "model.json" : fs::path(checkpoint);
  require_file(ckpt, "checkpoint");
  oex::MlpClassifier model = oex::load_checkpoint(ckpt);
  oex::Benchmark b = oex::read_benchmark(data_dir.empty() ? dir : fs::path(data_dir));
  auto reports = oex::evaluate_pipeline(cfg, model, b);
  oex::write_text(dir / "report.json", oex::reports_to_json(reports).dump(2) + "\n");
  oex::write_text(dir / "report.csv", oex::reports_to_csv(reports));
  print_reports(reports);
  return kOk;
}

int cmd_extrapolate(const oex::RunConfig& cfg, const std::string& checkpoint, const std::string& input,
                    const std::string& output, std::string samples, const std::vector<double>& epsilons) {
  require_file(checkpoint, "checkpoint");
  require_file(input, "input");
  oex::MlpClassifier model = oex::load_checkpoint(checkpoint);
  oex::Dataset in = oex::load_csv(input);
  const auto& grid = epsilons.empty() ? cfg.epsilon_grid : epsilons;
  for (double e : grid) {
    if (!(e >= 0.0)) throw oex::ConfigError("epsilon values must be >= 0");
  }
  oex::ExtrapolationDump dump = oex::extrapolation_dump(model, in.x, cfg.train.extrapolation, grid);
  oex::write_text(output, oex::extrapolation_rows_csv(dump));
  if (samples.empty()) {
    fs::path p(output);
    samples = (p.parent_path() / (p.stem().string() + "_samples.csv")).string();
  }
  oex::write_text(samples, oex::synthesized_csv(dump, grid));
  for (std::size_t k = 0; k < grid.size(); ++k) {
    double before = 0, after = 0;
    for (std::size_t i = 0; i < in.size(); ++i) {
      before += dump.rows[k * in.size() + i].score_before;
      after += dump.rows[k * in.size() + i].score_after;
    }
    const double n = static_cast<double>(std::max<std::size_t>(in.size(), 1));
    std::cout << "epsilon " << grid[k] << ": mean energy score " << before / n << " -> " << after / n << "\n";
  }
  return kOk;
}

int cmd_theory(const oex::RunConfig& cfg, unsigned threads) {
  const fs::path dir = ensure_dir(cfg.out_dir);
  const auto& t = cfg.theory;
  oex::gmm::VerifyResult res = oex::gmm::verify_bound(t.spec, t.params, t.trials, oex::derive_seed(cfg.seed, "theory"),
                                                      threads);
  std::ostringstream csv;
  csv << "trial,ratio,rhs,margin,satisfied\n";
  for (const auto& r : res.trials) {
    csv << r.trial << ',' << oex::format_double(r.ratio) << ',' << oex::format_double(r.rhs) << ','
        << oex::format_double(r.margin) << ',' << (r.satisfied ? 1 : 0) << '\n';
  }
  oex::write_text(dir / "theory.csv", csv.str());

  double mu_norm = 0;
  for (double v : t.spec.mu) mu_norm += v * v;
  mu_norm = std::sqrt(mu_norm);
  std::ostringstream sweep;
  sweep << "tau,rhs\n";
  for (double tau : t.tau_grid) {
    const double rhs = oex::gmm::bound_rhs(mu_norm, t.spec.sigma, static_cast<double>(t.params.n),
                                           static_cast<double>(t.spec.mu.size()), t.params.alpha_c, tau);
    sweep << oex::format_double(tau) << ',' << oex::format_double(rhs) << '\n';
  }
  oex::write_text(dir / "theory_tau.csv", sweep.str());

  std::size_t violations = 0;
  for (const auto& r : res.trials) violations += r.satisfied ? 0 : 1;
  std::cout << "trials " << res.trials.size() << ", violations " << violations << ", violation fraction "
            << res.violation_fraction << "\n";
  return kOk;
}

int cmd_gradcheck(std::size_t cases, std::uint64_t seed, const std::string& fault) {
  std::optional<oex::ad::Op> op;
  if (!fault.empty()) {
    op = oex::parse_op(fault);
    if (!op) throw oex::ConfigError("unknown primitive '" + fault + "'");
  }
  oex::GradcheckSummary s = oex::run_gradcheck_suite(cases, seed, 1e-6, op);
  std::cout << s.cases.size() << " cases, max relative error " << s.max_rel_error << " (" << s.worst_case << ")\n";
  if (!s.passed()) {
    std::cout << "FAIL: " << s.failures << " cases exceed 1e-6\n";
    return kNumeric;
  }
  std::cout << "max relative error < 1e-6\n";
  return kOk;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& output) {
  std::vector<oex::DetectionReport> all;
  for (const auto& path : inputs) {
    require_file(path, "report");
    std::ifstream f(path);
    json j = json::parse(f, nullptr, false);
    if (j.is_discarded()) throw oex::DataError("report '" + path + "' is not valid JSON");
    try {
      auto reports = oex::reports_from_json(j);
      all.insert(all.end(), reports.begin(), reports.end());
    } catch (const json::exception& e) {
      throw oex::DataError("report '" + path + "': " + e.what());
    }
  }
  const std::string csv = oex::reports_to_csv(all);
  if (output.empty()) {
    std::cout << csv;
  } else {
    oex::write_text(output, csv);
    std::cout << "wrote " << all.size() << " report blocks to " << output << "\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Outlier exposure workbench"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "JSON run configuration");
  app.add_option("--seed", g.seed, "Top-level seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--set", g.sets, "Override a config key, KEY=VALUE")->take_all()->allow_extra_args(false);

  auto* gen = app.add_subcommand("gen-data", "Generate the 2-D benchmark");

  std::string data_dir;
  bool checkpoints = false;
  auto* train = app.add_subcommand("train", "Pretrain and fine-tune a classifier");
  train->add_option("--data", data_dir, "Directory with the generated data (default: output dir)");
  train->add_flag("--checkpoints", checkpoints, "Write a checkpoint after every epoch");

  std::string checkpoint;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--data", data_dir, "Directory with the generated data (default: output dir)");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint (default: <out>/model.json)");

  std::string input, output, samples;
  std::vector<double> epsilons;
  auto* extra = app.add_subcommand("extrapolate", "Extrapolate outliers under a checkpoint");
  extra->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
  extra->add_option("--input", input, "Input CSV")->required();
  extra->add_option("--output", output, "Per-row CSV")->required();
  extra->add_option("--samples", samples, "Synthesized samples CSV");
  extra->add_option("--epsilon", epsilons, "Epsilon values (default: config grid)");

  unsigned threads = 1;
  auto* theory = app.add_subcommand("theory-verify", "Check the FPR bound on Gaussian mixtures");
  theory->add_option("--threads", threads, "Worker threads")->check(CLI::Range(1u, 256u));

  std::size_t cases = 100;
  std::uint64_t gc_seed = 0;
  std::string fault;
  auto* gradcheck = app.add_subcommand("gradcheck", "Autodiff finite-difference self-test");
  gradcheck->add_option("--cases", cases, "Number of random cases");
  gradcheck->add_option("--gc-seed", gc_seed, "Seed for the random cases");
  gradcheck->add_option("--inject-fault", fault, "Corrupt the backward rule of one primitive");

  std::vector<std::string> report_inputs;
  auto* report = app.add_subcommand("report", "Merge report.json files into one CSV");
  report->add_option("inputs", report_inputs, "report.json files")->required();
  report->add_option("--output", output, "CSV path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (gradcheck->parsed()) return cmd_gradcheck(cases, gc_seed, fault);
    if (report->parsed()) return cmd_report(report_inputs, output);
    const oex::RunConfig cfg = resolve_config(g);
    if (gen->parsed()) return cmd_gen_data(cfg);
    if (train->parsed()) return cmd_train(cfg, data_dir, checkpoints);
    if (eval->parsed()) return cmd_eval(cfg, data_dir, checkpoint);
    if (extra->parsed()) return cmd_extrapolate(cfg, checkpoint, input, output, samples, epsilons);
    if (theory->parsed()) return cmd_theory(cfg, threads);
  } catch (const oex::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const oex::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const oex::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
