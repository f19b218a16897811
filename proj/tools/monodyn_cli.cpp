// monodyn: fit gradient functions of monotone trajectories, run simulation studies.
// Exit codes: 0 success, 1 computation failure, 2 usage or input error.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "monodyn/io.hpp"

namespace {

using namespace monodyn;
namespace fs = std::filesystem;

constexpr int kOk = 0, kComputeFailure = 1, kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check_output_path(const std::string& p) {
  if (p.empty()) return;
  const fs::path parent = fs::absolute(fs::path(p)).parent_path();
  if (!fs::is_directory(parent)) throw UsageError("output directory does not exist: " + parent.string());
  if (fs::is_directory(p)) throw UsageError("output path is a directory: " + p);
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot open output file: " + path);
  f << text;
}

std::vector<io::Series> read_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read input file: " + path);
  return io::parse_csv(in);
}

io::SubjectOutput fit_one(const io::Series& s, const io::RunConfig& rc, bool two_stage) {
  io::SubjectOutput out;
  out.subject = s.subject;
  try {
    if (s.t.size() < 10) throw InsufficientData("fewer than 10 observations");
    out.time_map = io::TimeMap::spanning(s.t);
    const Dataset data = io::to_unit_dataset(s, out.time_map);
    const FitConfig cfg = rc.fit_config();
    if (two_stage) {
      auto ts = two_stage_only(data, cfg, *rc.M);
      out.delta = ts.delta;
      out.x_hat0 = ts.x_hat0;
      out.x_hat1 = ts.x_hat1;
      out.model = std::move(ts.model);
    } else {
      auto fit = select_M(data, cfg);
      out.delta = fit.delta;
      out.x_hat0 = fit.x_hat0;
      out.x_hat1 = fit.x_hat1;
      out.cv_score = fit.cv_score;
      out.sigma2 = fit.sigma2_hat;
      out.convergence = fit.convergence;
      out.candidates = fit.candidates;
      out.covariance = fit.covariance;
      out.model = std::move(fit.model);
    }
  } catch (const Error& e) {
    out.error = e.what();
    out.model.reset();
  }
  return out;
}

int cmd_fit(const io::RunConfig& rc, bool two_stage) {
  const auto series = read_input(rc.input);
  const auto outputs = parallel_map<io::SubjectOutput>(series.size(), rc.threads,
                                                       [&](std::size_t i) { return fit_one(series[i], rc, two_stage); });
  std::size_t ok = 0;
  for (const auto& o : outputs) {
    if (o.error.empty())
      ++ok;
    else
      std::cerr << "subject " << o.subject << ": " << o.error << "\n";
  }
  std::ostringstream text;
  if (rc.format == "csv") {
    io::write_prediction_csv(text, outputs, rc.grid);
  } else {
    io::ordered_json doc;
    doc["version"] = io::kSchemaVersion;
    doc["method"] = two_stage ? "two-stage" : "one-step";
    doc["config"] = io::to_json(rc);
    doc["per_subject"] = io::ordered_json::array();
    for (const auto& o : outputs) doc["per_subject"].push_back(io::to_json(o, rc.grid));
    text << doc.dump(2) << "\n";
  }
  emit(rc.out, text.str());
  if (!rc.table.empty()) {
    std::ostringstream t;
    io::write_prediction_csv(t, outputs, rc.grid);
    emit(rc.table, t.str());
  }
  return ok > 0 ? kOk : kComputeFailure;
}

int cmd_simulate(const io::RunConfig& rc) {
  const auto res = run_study(rc.sim_spec(), rc.fit_config(), rc.threads);
  std::ostringstream csv;
  io::write_replicate_csv(csv, res.reports);
  if (rc.format == "csv") {
    emit(rc.out, csv.str());
  } else {
    io::ordered_json doc;
    doc["version"] = io::kSchemaVersion;
    doc["method"] = "simulate";
    doc["config"] = io::to_json(rc);
    doc["summary"] = io::to_json(res);
    emit(rc.out, doc.dump(2) + "\n");
  }
  if (!rc.table.empty()) emit(rc.table, csv.str());
  return res.summary.failures < res.summary.replicates ? kOk : kComputeFailure;
}

int cmd_rates(const io::RunConfig& rc) {
  const auto res = rate_sweep(rc.sim_spec(), rc.fit_config(), rc.n_list, rc.c, 3, rc.replicates, rc.threads, rc.M);
  std::ostringstream csv;
  io::write_replicate_csv(csv, res.reports);
  if (rc.format == "csv") {
    emit(rc.out, csv.str());
  } else {
    io::ordered_json doc;
    doc["version"] = io::kSchemaVersion;
    doc["method"] = "rates";
    doc["config"] = io::to_json(rc);
    doc["rates"] = io::to_json(res);
    emit(rc.out, doc.dump(2) + "\n");
  }
  if (!rc.table.empty()) emit(rc.table, csv.str());
  return kOk;
}

void validate(io::RunConfig& rc, const CLI::App& sub) {
  const auto* rep_opt = sub.get_option_no_throw("--replicates");
  const bool user_replicates = rep_opt && rep_opt->count() > 0;
  if (rc.command == "fit" && rc.candidate_Ms.empty()) rc.candidate_Ms = {4, 5, 6, 7};
  if ((rc.command == "simulate" || rc.command == "rates") && rc.candidate_Ms.empty()) rc.candidate_Ms = {3, 4, 5};
  if (rc.command == "two-stage") {
    if (!rc.M) {
      std::cerr << "warning: --M not given; using M = 6 without cross-validation\n";
      rc.M = 6;
    }
    rc.candidate_Ms = {*rc.M};
  }
  if (rc.command == "rates") {
    if (rc.n_list.empty()) rc.n_list = {200, 400, 800, 1600, 3200};
    if (!user_replicates) rc.replicates = 30;
    if (rc.n_list.size() < 4) throw UsageError("--n-list needs at least 4 values");
    for (std::size_t i = 1; i < rc.n_list.size(); ++i)
      if (rc.n_list[i] <= rc.n_list[i - 1]) throw UsageError("--n-list must be strictly increasing");
  }
  if (rc.n_min > rc.n_max) throw UsageError("--n-min must not exceed --n-max");
  if (rc.n_min < 10) throw UsageError("--n-min must be at least 10");
  if (rc.order < 3) throw UsageError("--order must be at least 3");
  if (!(rc.h > 0.0 && rc.h <= 0.1)) throw UsageError("--h must lie in (0, 0.1]");
  if (!(rc.sigma >= 0.0)) throw UsageError("--sigma must be >= 0");
  if (rc.replicates < 1) throw UsageError("--replicates must be >= 1");
  if (rc.grid < 2) throw UsageError("--grid must be >= 2");
  if (rc.delta && !(*rc.delta > 0.0 && *rc.delta < 0.5)) throw UsageError("--delta must lie in (0, 0.5)");
  if (std::none_of(rc.candidate_Ms.begin(), rc.candidate_Ms.end(), [&](int m) { return m >= rc.order; }))
    throw UsageError("at least one candidate M must be at least the spline order");
  if (rc.M && *rc.M < rc.order) throw UsageError("--M must be at least the spline order");
  check_output_path(rc.out);
  check_output_path(rc.table);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Estimate the gradient function g of x' = g(x) from noisy monotone trajectories"};
  app.set_help_flag("--help", "Print this help message and exit");
  app.require_subcommand(1);
  io::RunConfig rc;

  auto common = [&](CLI::App* s) {
    s->add_option("--seed", rc.seed, "Seed for all randomness")->capture_default_str();
    s->add_option("--h", rc.h, "RK4 step size")->capture_default_str();
    s->add_option("--order", rc.order, "Spline order (4 = cubic)")->capture_default_str();
    s->add_option("--delta", rc.delta, "Trimming fraction in (0, 0.5); default leaves 5% in each tail");
    s->add_option("--out", rc.out, "Output file (default stdout)");
    s->add_option("--table", rc.table, "Also write the CSV table to this file");
    s->add_option("--format", rc.format, "Output format")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
    s->add_option("--threads", rc.threads, "Worker threads (0 = all cores)");
  };

  auto* fit = app.add_subcommand("fit", "Fit each subject of a subject,t,y CSV with M chosen by approximate LOO");
  fit->add_option("input", rc.input, "Input CSV")->required()->check(CLI::ExistingFile);
  fit->add_option("--M-candidates", rc.candidate_Ms, "Candidate numbers of basis functions (default 4,5,6,7)")->delimiter(',');
  fit->add_option("--grid", rc.grid, "Points in the reported g grid")->capture_default_str();
  common(fit);

  auto* two = app.add_subcommand("two-stage", "Presmooth-then-regress estimate with a fixed M");
  two->add_option("input", rc.input, "Input CSV")->required()->check(CLI::ExistingFile);
  two->add_option("--M", rc.M, "Number of basis functions (default 6)");
  two->add_option("--grid", rc.grid, "Points in the reported g grid")->capture_default_str();
  common(two);

  auto* sim = app.add_subcommand("simulate", "Seeded simulation study, one-step vs two-stage");
  sim->add_option("--replicates", rc.replicates, "Number of replicates")->capture_default_str();
  sim->add_option("--sigma", rc.sigma, "Noise standard deviation")->capture_default_str();
  sim->add_option("--n-min", rc.n_min, "Smallest sample size")->capture_default_str();
  sim->add_option("--n-max", rc.n_max, "Largest sample size")->capture_default_str();
  sim->add_option("--M-candidates", rc.candidate_Ms, "Candidate M values (default 3,4,5)")->delimiter(',');
  common(sim);

  auto* rates = app.add_subcommand("rates", "Empirical convergence-rate sweep of mean ISE against n");
  rates->add_option("--n-list", rc.n_list, "Increasing sample sizes (default 200,400,800,1600,3200)")->delimiter(',');
  rates->add_option("--replicates", rc.replicates, "Replicates per sample size (default 30)");
  rates->add_option("--sigma", rc.sigma, "Noise standard deviation")->capture_default_str();
  rates->add_option("--c", rc.c, "Constant in M = ceil(c n^(1/9))")->capture_default_str();
  rates->add_option("--M", rc.M, "Fixed M instead of the growth rule");
  common(rates);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }

  CLI::App* active = app.get_subcommands().front();
  rc.command = active->get_name();
  try {
    validate(rc, *active);
    if (rc.command == "fit") return cmd_fit(rc, false);
    if (rc.command == "two-stage") return cmd_fit(rc, true);
    if (rc.command == "simulate") return cmd_simulate(rc);
    return cmd_rates(rc);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kComputeFailure;
  }
}
