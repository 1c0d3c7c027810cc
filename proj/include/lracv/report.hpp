#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lracv/errors.hpp"
#include "lracv/glm.hpp"
#include "lracv/solver.hpp"

namespace lracv {

// Version stamp written into every JSON report.
inline constexpr int kSchemaVersion = 1;

using Json = nlohmann::ordered_json;

class StopWatch {
 public:
  using Clock = std::chrono::steady_clock;
  StopWatch() : t0_(Clock::now()) {}
  double seconds() const { return std::chrono::duration<double>(Clock::now() - t0_).count(); }
  void reset() { t0_ = Clock::now(); }

 private:
  Clock::time_point t0_;
};

struct StageTiming {
  std::string stage;
  double seconds = 0;
};

// Mean of |approx - exact| / |exact| over paired values, as a percentage.
inline double mean_percent_error(const std::vector<double>& approx,
                                 const std::vector<double>& exact) {
  if (approx.size() != exact.size() || approx.empty()) {
    throw ConfigError("mean_percent_error: length mismatch or empty input");
  }
  double acc = 0;
  for (std::size_t i = 0; i < approx.size(); ++i) {
    const double denom = std::max(std::abs(exact[i]), 1e-300);
    acc += std::abs(approx[i] - exact[i]) / denom;
  }
  return 100.0 * acc / static_cast<double>(approx.size());
}

// Full machine-readable result of an `acv` / `exact-cv` / `bounds` run.
// Per-point columns are parallel arrays of length N; optional blocks are
// empty when the producing stage did not run. Non-finite values serialize
// as JSON null.
struct AcvReport {
  std::string command;
  std::string method;     // ns | ij | both | exact
  std::string family;
  double lambda = 0;
  std::string qn_source;  // exact | sketch | neumann | none
  std::int64_t n = 0;
  std::int64_t d = 0;
  std::int64_t k = -1;    // sketch size, -1 when unused
  std::uint64_t seed = 0;
  std::string err_metric;
  Json config;            // echo of the resolved run configuration

  std::vector<double> ns_predictions;
  std::vector<double> ij_predictions;
  std::vector<double> qn;
  std::vector<double> eta;

  std::vector<double> mn;
  std::vector<double> en;
  std::vector<double> ns_bound;
  std::vector<double> ij_bound;
  std::vector<double> err_lo;
  std::vector<double> err_hi;
  std::vector<std::string> fallback_reason;  // "" when not in the fallback set

  std::vector<std::int64_t> fallback;
  std::vector<std::int64_t> exact_indices;
  std::vector<double> exact_predictions;
  std::vector<double> exact_errs;

  Json summary = Json::object();
  std::vector<StageTiming> timings;
  Json error = Json();  // {stage, message} when a stage aborted
};

namespace detail {

inline Json finite_or_null(double v) {
  if (std::isfinite(v)) return Json(v);
  return Json();
}

inline Json number_array(const std::vector<double>& v) {
  Json arr = Json::array();
  for (double x : v) arr.push_back(finite_or_null(x));
  return arr;
}

}  // namespace detail

inline Json to_json(const AcvReport& r) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["command"] = r.command;
  j["method"] = r.method;
  j["family"] = r.family;
  j["lambda"] = r.lambda;
  j["qn_source"] = r.qn_source;
  j["n"] = r.n;
  j["d"] = r.d;
  j["k"] = r.k;
  j["seed"] = r.seed;
  j["err_metric"] = r.err_metric;
  j["config"] = r.config.is_null() ? Json::object() : r.config;

  Json per_point = Json::object();
  auto put = [&](const char* name, const std::vector<double>& v) {
    if (!v.empty()) per_point[name] = detail::number_array(v);
  };
  put("ns_prediction", r.ns_predictions);
  put("ij_prediction", r.ij_predictions);
  put("qn", r.qn);
  put("eta", r.eta);
  put("mn", r.mn);
  put("en", r.en);
  put("ns_bound", r.ns_bound);
  put("ij_bound", r.ij_bound);
  put("err_lo", r.err_lo);
  put("err_hi", r.err_hi);
  if (!r.fallback_reason.empty()) per_point["fallback_reason"] = r.fallback_reason;
  j["per_point"] = per_point;

  j["fallback"] = r.fallback;
  Json exact = Json::object();
  exact["indices"] = r.exact_indices;
  exact["predictions"] = detail::number_array(r.exact_predictions);
  exact["errs"] = detail::number_array(r.exact_errs);
  j["exact_refit"] = exact;

  j["summary"] = r.summary;
  Json timings = Json::array();
  for (const auto& t : r.timings) {
    timings.push_back(Json{{"stage", t.stage}, {"seconds", t.seconds}});
  }
  j["timings"] = timings;
  if (!r.error.is_null()) j["error"] = r.error;
  return j;
}

inline void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
  if (!out.good()) throw IoError("short write to '" + path + "'");
}

inline void write_report(const std::string& path, const AcvReport& report) {
  write_json_file(path, to_json(report));
}

inline void write_fit_report(const std::string& path, const FitState& fit, GlmFamily family,
                             double fit_seconds, double tol) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["command"] = "fit";
  j["family"] = to_string(family);
  j["lambda"] = fit.lambda;
  j["tol"] = tol;
  j["grad_norm"] = fit.grad_norm;
  j["iterations"] = fit.iterations;
  j["theta_hat"] = std::vector<double>(fit.theta_hat.data(),
                                       fit.theta_hat.data() + fit.theta_hat.size());
  j["timings"] = Json::array({Json{{"stage", "fit"}, {"seconds", fit_seconds}}});
  write_json_file(path, j);
}

// One row of the benchmark table: a method evaluated at one operating point.
// k applies to the sketch method, s/m to the Neumann baseline; -1 marks an
// inapplicable column. `extrapolated` is set on exact-CV totals estimated
// from a subset (per-fold time x N).
struct BenchRow {
  std::string method;
  std::int64_t k = -1;
  std::int64_t s = -1;
  std::int64_t m = -1;
  double wall_seconds = 0;
  double mean_percent_error = 0;
  bool extrapolated = false;
};

inline void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "method,k,s,m,wall_seconds,mean_percent_error,extrapolated\n";
  char buf[64];
  for (const auto& row : rows) {
    out << row.method << ',';
    if (row.k >= 0) out << row.k;
    out << ',';
    if (row.s >= 0) out << row.s;
    out << ',';
    if (row.m >= 0) out << row.m;
    out << ',';
    std::snprintf(buf, sizeof(buf), "%.9g", row.wall_seconds);
    out << buf << ',';
    std::snprintf(buf, sizeof(buf), "%.17g", row.mean_percent_error);
    out << buf << ',' << (row.extrapolated ? "true" : "false") << '\n';
  }
  if (!out.good()) throw IoError("short write to '" + path + "'");
}

}  // namespace lracv
