#pragma once

/// Input parsing and JSON/CSV output for the command-line front end.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "monodyn/errors.hpp"
#include "monodyn/estimator.hpp"
#include "monodyn/sim.hpp"

namespace monodyn::io {

using nlohmann::ordered_json;

inline constexpr const char* kSchemaVersion = "1.0";

/// One subject's observations in original time units, file order.
struct Series {
  std::string subject;
  std::vector<double> t;
  std::vector<double> y;
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double number(const std::string& s, std::size_t line, const char* what) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end || !std::isfinite(v))
    throw ParseError("line " + std::to_string(line) + ": invalid " + what + " value '" + s + "'", line);
  return v;
}

}  // namespace detail

/// Long CSV with header containing t and y and optionally subject (any column order).
/// Subjects keep first-appearance order; rows without a subject column form one series "1".
inline std::vector<Series> parse_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (!detail::trim(line).empty()) {
      header = detail::split(line);
      break;
    }
  }
  if (header.empty()) throw ParseError("empty input: header 'subject,t,y' required", std::max<std::size_t>(line_no, 1));
  int ci_subject = -1, ci_t = -1, ci_y = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto& h = header[i];
    int* slot = h == "subject" ? &ci_subject : h == "t" ? &ci_t : h == "y" ? &ci_y : nullptr;
    if (!slot) throw ParseError("line " + std::to_string(line_no) + ": unknown column '" + h + "'", line_no);
    if (*slot >= 0) throw ParseError("line " + std::to_string(line_no) + ": duplicate column '" + h + "'", line_no);
    *slot = static_cast<int>(i);
  }
  if (ci_t < 0 || ci_y < 0) throw ParseError("line " + std::to_string(line_no) + ": header must name columns t and y", line_no);
  std::vector<Series> out;
  std::map<std::string, std::size_t> index;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split(line);
    if (cells.size() != header.size())
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) + " fields, got " +
                           std::to_string(cells.size()),
                       line_no);
    const std::string subject = ci_subject >= 0 ? cells[ci_subject] : "1";
    if (subject.empty()) throw ParseError("line " + std::to_string(line_no) + ": empty subject", line_no);
    const double t = detail::number(cells[ci_t], line_no, "t");
    const double y = detail::number(cells[ci_y], line_no, "y");
    auto [it, fresh] = index.try_emplace(subject, out.size());
    if (fresh) out.push_back(Series{subject, {}, {}});
    out[it->second].t.push_back(t);
    out[it->second].y.push_back(y);
  }
  if (out.empty()) throw ParseError("no data rows after header", line_no);
  return out;
}

/// t_original = offset + scale * u, u in [0, 1].
struct TimeMap {
  double offset = 0.0;
  double scale = 1.0;

  static TimeMap spanning(const std::vector<double>& t) {
    const auto [lo, hi] = std::minmax_element(t.begin(), t.end());
    if (t.empty() || !(*hi > *lo)) throw InvalidArgument("time map: need at least two distinct times");
    return {*lo, *hi - *lo};
  }
  double to_unit(double t) const { return std::clamp((t - offset) / scale, 0.0, 1.0); }
  double to_original(double u) const { return offset + scale * u; }
};

inline Dataset to_unit_dataset(const Series& s, const TimeMap& map) {
  std::vector<double> u(s.t.size());
  std::transform(s.t.begin(), s.t.end(), u.begin(), [&](double t) { return map.to_unit(t); });
  return Dataset::from_unsorted(std::move(u), s.y, s.subject);
}

struct RunConfig {
  std::string command;
  std::string input;
  std::string out;
  std::string table;
  std::string format = "json";
  std::optional<double> delta;
  std::vector<int> candidate_Ms;
  int order = 4;
  std::uint64_t seed = 1;
  double h = kDefaultStep;
  int replicates = 100;
  double sigma = 0.01;
  int n_min = 60;
  int n_max = 100;
  std::optional<int> M;
  std::vector<int> n_list;
  double c = 2.0;
  int grid = 200;
  unsigned threads = 0;

  FitConfig fit_config() const {
    FitConfig f;
    f.delta = delta;
    f.candidate_Ms = candidate_Ms;
    f.order = order;
    f.h = h;
    f.rng_seed = seed;
    return f;
  }
  SimSpec sim_spec() const {
    SimSpec s;
    s.sigma = sigma;
    s.n_min = n_min;
    s.n_max = n_max;
    s.replicates = replicates;
    s.rng_seed = seed;
    return s;
  }
};

inline ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["command"] = c.command;
  j["input"] = c.input;
  j["out"] = c.out;
  j["table"] = c.table;
  j["format"] = c.format;
  j["delta"] = c.delta ? ordered_json(*c.delta) : ordered_json(nullptr);
  j["M_candidates"] = c.candidate_Ms;
  j["order"] = c.order;
  j["seed"] = c.seed;
  j["h"] = c.h;
  j["replicates"] = c.replicates;
  j["sigma"] = c.sigma;
  j["n_min"] = c.n_min;
  j["n_max"] = c.n_max;
  j["M"] = c.M ? ordered_json(*c.M) : ordered_json(nullptr);
  j["n_list"] = c.n_list;
  j["c"] = c.c;
  j["grid"] = c.grid;
  j["threads"] = c.threads;
  return j;
}

inline RunConfig run_config_from_json(const ordered_json& j) {
  RunConfig c;
  c.command = j.at("command").get<std::string>();
  c.input = j.at("input").get<std::string>();
  c.out = j.at("out").get<std::string>();
  c.table = j.at("table").get<std::string>();
  c.format = j.at("format").get<std::string>();
  if (!j.at("delta").is_null()) c.delta = j.at("delta").get<double>();
  c.candidate_Ms = j.at("M_candidates").get<std::vector<int>>();
  c.order = j.at("order").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.h = j.at("h").get<double>();
  c.replicates = j.at("replicates").get<int>();
  c.sigma = j.at("sigma").get<double>();
  c.n_min = j.at("n_min").get<int>();
  c.n_max = j.at("n_max").get<int>();
  if (!j.at("M").is_null()) c.M = j.at("M").get<int>();
  c.n_list = j.at("n_list").get<std::vector<int>>();
  c.c = j.at("c").get<double>();
  c.grid = j.at("grid").get<int>();
  c.threads = j.at("threads").get<unsigned>();
  return c;
}

inline ordered_json number_or_null(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

inline ordered_json to_json(const ConvergenceReport& r) {
  return {{"iterations", r.iterations},
          {"final_lambda", r.final_lambda},
          {"grad_norm", r.grad_norm},
          {"status", to_string(r.status)}};
}

/// Everything reported for one fitted subject.
struct SubjectOutput {
  std::string subject;
  std::string error;  ///< nonempty when the subject failed
  std::optional<GradientModel> model;
  std::optional<Eigen::MatrixXd> covariance;
  TimeMap time_map;
  double delta = 0.0;
  double x_hat0 = 0.0;
  double x_hat1 = 0.0;
  std::optional<double> cv_score;
  std::optional<double> sigma2;
  std::optional<ConvergenceReport> convergence;
  std::vector<CandidateReport> candidates;
};

struct GridPoint {
  double x, g;
  std::optional<double> se;
};

inline std::vector<GridPoint> g_grid(const SubjectOutput& s, int n) {
  std::vector<GridPoint> out;
  if (!s.model) return out;
  for (int i = 0; i < n; ++i) {
    const double x = n == 1 ? s.x_hat0 : s.x_hat0 + (s.x_hat1 - s.x_hat0) * i / (n - 1);
    GridPoint p{x, s.model->value(x), std::nullopt};
    if (s.covariance && s.covariance->allFinite()) {
      const Eigen::VectorXd phi = eval_basis(s.model->basis(), x, 0);
      p.se = std::sqrt(std::max(0.0, phi.dot(*s.covariance * phi)));
    }
    out.push_back(p);
  }
  return out;
}

/// Fitted trajectory on [delta, 1 - delta], times reported in original units.
inline std::vector<std::pair<double, double>> traj_grid(const SubjectOutput& s, int n) {
  std::vector<std::pair<double, double>> out;
  if (!s.model) return out;
  const auto sol = solve_trajectory(*s.model, s.delta, 1.0 - s.delta, s.x_hat0);
  for (int i = 0; i < n; ++i) {
    const double u = s.delta + (1.0 - 2.0 * s.delta) * i / (n - 1);
    out.emplace_back(s.time_map.to_original(u), sol.at(u));
  }
  return out;
}

inline ordered_json to_json(const SubjectOutput& s, int grid) {
  ordered_json j;
  j["subject"] = s.subject;
  j["status"] = s.error.empty() ? "ok" : "failed";
  j["error"] = s.error.empty() ? ordered_json(nullptr) : ordered_json(s.error);
  j["time_map"] = {{"offset", s.time_map.offset}, {"scale", s.time_map.scale}};
  if (!s.model) return j;
  const auto& b = s.model->basis();
  j["M"] = b.size();
  j["order"] = b.order();
  j["beta"] = std::vector<double>(s.model->beta().data(), s.model->beta().data() + b.size());
  j["knots"] = b.knots();
  j["domain"] = {b.lo(), b.hi()};
  j["delta"] = s.delta;
  j["endpoints"] = {s.x_hat0, s.x_hat1};
  j["cv_score"] = s.cv_score ? number_or_null(*s.cv_score) : ordered_json(nullptr);
  j["sigma2"] = s.sigma2 ? number_or_null(*s.sigma2) : ordered_json(nullptr);
  j["convergence"] = s.convergence ? to_json(*s.convergence) : ordered_json(nullptr);
  ordered_json cands = ordered_json::array();
  for (const auto& c : s.candidates)
    cands.push_back({{"M", c.M},
                     {"cv_score", number_or_null(c.cv_score)},
                     {"loss", number_or_null(c.loss)},
                     {"init", c.init_method},
                     {"status", c.error.empty() ? c.status : "failed"},
                     {"error", c.error.empty() ? ordered_json(nullptr) : ordered_json(c.error)}});
  j["candidates"] = cands;
  ordered_json gg = ordered_json::array();
  for (const auto& p : g_grid(s, grid))
    gg.push_back({{"x", p.x}, {"g", p.g}, {"se", p.se ? number_or_null(*p.se) : ordered_json(nullptr)}});
  j["g_grid"] = gg;
  ordered_json tg = ordered_json::array();
  for (const auto& [t, x] : traj_grid(s, 101)) tg.push_back({{"t", t}, {"x", x}});
  j["traj_grid"] = tg;
  return j;
}

inline void write_prediction_csv(std::ostream& os, const std::vector<SubjectOutput>& subjects, int grid) {
  os << "subject,x,g,se\n";
  os.precision(17);
  for (const auto& s : subjects)
    for (const auto& p : g_grid(s, grid)) {
      os << s.subject << ',' << p.x << ',' << p.g << ',';
      if (p.se) os << *p.se;
      os << '\n';
    }
}

inline void write_replicate_csv(std::ostream& os, const std::vector<ReplicateReport>& reps) {
  os << "seed,n,chosen_M,ise_onestep,ise_twostage,status\n";
  os.precision(17);
  auto num = [&](double v) -> std::ostream& {
    if (std::isfinite(v)) os << v;
    return os;
  };
  for (const auto& r : reps) {
    os << r.seed << ',' << r.n << ',' << r.chosen_M << ',';
    num(r.ise_onestep) << ',';
    num(r.ise_twostage) << ',' << (r.ok ? r.status : "failed") << '\n';
  }
}

inline ordered_json to_json(const Quartiles& q) {
  return {{"q1", number_or_null(q.q1)}, {"median", number_or_null(q.median)}, {"q3", number_or_null(q.q3)}};
}

inline ordered_json to_json(const StudyResult& r) {
  ordered_json hist = ordered_json::object();
  for (const auto& [m, count] : r.summary.m_histogram) hist[std::to_string(m)] = count;
  ordered_json reps = ordered_json::array();
  for (const auto& x : r.reports)
    reps.push_back({{"index", x.index},
                    {"seed", x.seed},
                    {"n", x.n},
                    {"chosen_M", x.chosen_M},
                    {"ise_onestep", number_or_null(x.ise_onestep)},
                    {"ise_twostage", number_or_null(x.ise_twostage)},
                    {"ise_onestep_true_range", number_or_null(x.ise_onestep_true_range)},
                    {"ise_twostage_true_range", number_or_null(x.ise_twostage_true_range)},
                    {"x0_error", number_or_null(x.x0_error)},
                    {"x1_error", number_or_null(x.x1_error)},
                    {"status", x.ok ? x.status : "failed"},
                    {"error", x.error.empty() ? ordered_json(nullptr) : ordered_json(x.error)}});
  return {{"replicates", r.summary.replicates},
          {"failures", r.summary.failures},
          {"ise_onestep", to_json(r.summary.ise_onestep)},
          {"ise_twostage", to_json(r.summary.ise_twostage)},
          {"m_histogram", hist},
          {"onestep_better", r.summary.onestep_better},
          {"per_replicate", reps}};
}

inline ordered_json to_json(const RateResult& r) {
  ordered_json pts = ordered_json::array();
  for (const auto& p : r.points)
    pts.push_back({{"n", p.n},
                   {"M", p.M},
                   {"mean_ise", number_or_null(p.mean_ise)},
                   {"successes", p.successes},
                   {"replicates", p.replicates}});
  return {{"slope", number_or_null(r.slope)}, {"stderr", number_or_null(r.slope_se)}, {"points", pts}};
}

}  // namespace monodyn::io
