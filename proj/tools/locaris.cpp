// locaris: simulate datasets, run experiments, re-render reports.

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "locaris/error.hpp"
#include "locaris/experiment.hpp"

namespace fs = std::filesystem;

namespace {

enum class Verbosity { Quiet, Normal, Verbose };

void print_summary(const std::vector<locaris::EvalReport>& reports, Verbosity v) {
  if (v == Verbosity::Quiet) return;
  std::cout << std::left << std::setw(18) << "kind" << std::setw(14) << "condition" << std::setw(8) << "method"
            << std::setw(12) << "environment" << std::setw(10) << "modality" << std::setw(14) << "dropped"
            << std::setw(9) << "fraction" << std::setw(6) << "bits" << std::right << std::setw(9) << "MAE"
            << std::setw(9) << "RMSE" << std::setw(9) << "P95" << '\n';
  for (const auto& r : reports) {
    if (v == Verbosity::Normal && !r.run.seed_mean && r.run.seed) continue;
    const auto& f = r.run;
    std::cout << std::left << std::setw(18) << f.kind << std::setw(14) << f.condition << std::setw(8) << f.method
              << std::setw(12) << f.environment << std::setw(10) << f.modality << std::setw(14)
              << (f.dropped_aps.empty() ? "-" : f.dropped_aps) << std::setw(9)
              << (f.fraction ? locaris::format_double(*f.fraction) : "-") << std::setw(6)
              << (f.quant_bits ? std::to_string(*f.quant_bits) : "-") << std::right << std::fixed
              << std::setprecision(3) << std::setw(9) << r.errors.mae << std::setw(9) << r.errors.rmse
              << std::setw(9) << r.errors.p95 << '\n';
  }
}

int jobs_override(int flag_value) {
  if (const char* env = std::getenv("LOCARIS_JOBS")) {
    try {
      const int v = std::stoi(env);
      if (v >= 1) return v;
    } catch (const std::exception&) {
    }
    std::cerr << "warning: ignoring invalid LOCARIS_JOBS='" << env << "'\n";
  }
  return flag_value;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Indoor localization from Wi-Fi telemetry prompts"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output_dir;
  std::string report_dir;
  int jobs = 0;
  bool verbose = false;
  bool quiet = false;

  auto* simulate = app.add_subcommand("simulate", "Write simulated train/test CSV files");
  simulate->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  simulate->add_option("-o,--output", output_dir, "Override the output directory");

  auto* run = app.add_subcommand("run", "Run the experiment described by a config or manifest");
  run->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("-o,--output", output_dir, "Override the output directory");
  run->add_option("-j,--jobs", jobs, "Conditions run in parallel (LOCARIS_JOBS overrides)")->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "Re-render results.csv from a run's report.json");
  report->add_option("dir", report_dir, "Run output directory")->required()->check(CLI::ExistingDirectory);

  for (auto* sub : {simulate, run, report}) {
    sub->add_flag("-v,--verbose", verbose, "Print every row, not only seed means");
    sub->add_flag("-q,--quiet", quiet, "Print nothing on success");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  const Verbosity verbosity = quiet ? Verbosity::Quiet : verbose ? Verbosity::Verbose : Verbosity::Normal;

  try {
    if (report->parsed()) {
      print_summary(locaris::rerender_report(report_dir), verbosity);
      return 0;
    }
    auto cfg = locaris::ExperimentConfig::load(config_path);
    if (!output_dir.empty()) cfg.output_dir = output_dir;
    if (simulate->parsed()) {
      for (const auto& p : locaris::simulate_environments(cfg)) {
        if (verbosity != Verbosity::Quiet) std::cout << p.string() << '\n';
      }
      return 0;
    }
    cfg.jobs = jobs_override(jobs > 0 ? jobs : cfg.jobs);
    const auto result = locaris::run_experiment(cfg);
    print_summary(result.reports, verbosity);
    if (verbosity != Verbosity::Quiet) std::cout << "results: " << (cfg.output_dir / "results.csv").string() << '\n';
    return 0;
  } catch (const locaris::Error& e) {
    std::cerr << "error [" << locaris::errc_name(e.code()) << "]: " << e.what() << '\n';
    return locaris::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
