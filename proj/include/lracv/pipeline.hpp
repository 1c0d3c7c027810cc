#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lracv/bounds.hpp"
#include "lracv/data_io.hpp"
#include "lracv/exact.hpp"
#include "lracv/neumann.hpp"
#include "lracv/parallel.hpp"
#include "lracv/report.hpp"
#include "lracv/sketch.hpp"
#include "lracv/solver.hpp"

namespace lracv {

enum class Method { ns, ij, both };

inline Method method_from_string(const std::string& s) {
  if (s == "ns") return Method::ns;
  if (s == "ij") return Method::ij;
  if (s == "both") return Method::both;
  throw ConfigError("unknown method '" + s + "' (expected ns|ij|both)");
}

inline std::string to_string(Method m) {
  switch (m) {
    case Method::ns: return "ns";
    case Method::ij: return "ij";
    default: return "both";
  }
}

enum class QnChoice { exact, sketch, neumann };

inline QnChoice qn_choice_from_string(const std::string& s) {
  if (s == "exact") return QnChoice::exact;
  if (s == "sketch") return QnChoice::sketch;
  if (s == "neumann") return QnChoice::neumann;
  throw ConfigError("unknown qn source '" + s + "' (expected exact|sketch|neumann)");
}

inline std::string to_string(QnChoice c) {
  switch (c) {
    case QnChoice::exact: return "exact";
    case QnChoice::sketch: return "sketch";
    default: return "neumann";
  }
}

// Resolved configuration of one end-to-end run.
struct RunConfig {
  GlmFamily family = GlmFamily::poisson;
  double lambda = 1.0;
  Method method = Method::ns;
  QnChoice qn_source = QnChoice::exact;
  std::int64_t k = -1;  // sketch size; -1 selects automatically
  int power = 1;
  std::optional<double> nu;     // stabilization shift override
  int neumann_s = 10;
  int neumann_m = 1;
  std::uint64_t seed = 0;
  ErrMetric metric = ErrMetric::squared_of_mean;
  FallbackPolicy policy{};
  bool reroute_fallback = true;  // refit fallback points exactly
  std::int64_t exact_subset = 0;  // comparator subset size (0 = off)
  double fit_tol = 1e-10;
  double cv_tol = 1e-12;
  int threads = 0;  // 0 = default cap; 1 = serial
  std::string save_sketch_path;
  std::string load_sketch_path;
};

inline void validate_config(const RunConfig& cfg, const Dataset& data) {
  if (!(cfg.lambda > 0)) throw ConfigError("lambda must be > 0");
  if (cfg.qn_source == QnChoice::sketch) {
    if (cfg.k != -1 && (cfg.k < 1 || cfg.k > data.d())) {
      throw ConfigError("sketch size K must be in [1, D] or auto");
    }
    if (cfg.power < 1) throw ConfigError("power must be >= 1");
    if (cfg.nu && !(*cfg.nu > 0)) throw ConfigError("nu must be > 0");
  } else if (!cfg.load_sketch_path.empty() || !cfg.save_sketch_path.empty()) {
    throw ConfigError("sketch file paths require --qn sketch");
  }
  if (cfg.qn_source == QnChoice::neumann && (cfg.neumann_s < 1 || cfg.neumann_m < 1)) {
    throw ConfigError("Neumann S and M must be >= 1");
  }
  if (cfg.exact_subset < 0 || cfg.exact_subset > data.n()) {
    throw ConfigError("exact subset size must be in [0, N]");
  }
  if (!(cfg.fit_tol > 0) || !(cfg.cv_tol > 0)) throw ConfigError("tolerances must be > 0");
}

inline Json config_echo(const RunConfig& cfg) {
  Json j;
  j["family"] = to_string(cfg.family);
  j["lambda"] = cfg.lambda;
  j["method"] = to_string(cfg.method);
  j["qn_source"] = to_string(cfg.qn_source);
  j["k"] = cfg.k;
  j["power"] = cfg.power;
  j["nu"] = cfg.nu ? Json(*cfg.nu) : Json();
  j["neumann_s"] = cfg.neumann_s;
  j["neumann_m"] = cfg.neumann_m;
  j["seed"] = cfg.seed;
  j["err_metric"] = to_string(cfg.metric);
  switch (cfg.policy.kind) {
    case FallbackPolicy::Kind::none: j["policy"] = "none"; break;
    case FallbackPolicy::Kind::top_j: j["policy"] = "top:" + std::to_string(cfg.policy.j); break;
    case FallbackPolicy::Kind::threshold:
      j["policy"] = "tau:" + std::to_string(cfg.policy.tau);
      break;
  }
  j["reroute_fallback"] = cfg.reroute_fallback;
  j["exact_subset"] = cfg.exact_subset;
  j["fit_tol"] = cfg.fit_tol;
  j["cv_tol"] = cfg.cv_tol;
  j["threads"] = cfg.threads;
  return j;
}

// Runs fit -> quadratic forms -> predictions -> certified bounds ->
// fallback selection -> exact refits -> summary, recording per-stage wall
// times. A stage failure persists the partial report (when a path is given)
// and rethrows with the stage name prefixed.
inline AcvReport run_acv(const Dataset& data, const RunConfig& cfg,
                         const std::string& report_path = {},
                         const std::string& command = "acv") {
  validate_config(cfg, data);
  const int threads = resolve_threads(cfg.threads);

  AcvReport rep;
  rep.command = command;
  rep.method = to_string(cfg.method);
  rep.family = to_string(cfg.family);
  rep.lambda = cfg.lambda;
  rep.qn_source = to_string(cfg.qn_source);
  rep.n = data.n();
  rep.d = data.d();
  rep.seed = cfg.seed;
  rep.err_metric = to_string(cfg.metric);
  rep.config = config_echo(cfg);

  StopWatch total;
  std::string stage = "config";
  const auto persist_partial = [&](const std::string& message) {
    rep.error = Json{{"stage", stage}, {"message", message}};
    rep.timings.push_back({"total", total.seconds()});
    if (!report_path.empty()) {
      try {
        write_report(report_path, rep);
      } catch (const Error&) {
        // best-effort persistence of the partial report
      }
    }
  };

  try {
    stage = "fit";
    StopWatch w;
    SolverOptions fit_opts;
    fit_opts.tol = cfg.fit_tol;
    const FitState fit_state = fit(data, cfg.family, cfg.lambda, fit_opts);
    rep.timings.push_back({"fit", w.seconds()});

    stage = "qn";
    w.reset();
    QnSet qn;
    bool divergent = false;
    if (cfg.qn_source == QnChoice::exact) {
      qn = exact_qn(fit_state, data, threads);
    } else if (cfg.qn_source == QnChoice::sketch) {
      HessianSketch sketch;
      bool have_qn = false;
      if (!cfg.load_sketch_path.empty()) {
        sketch = load_sketch(cfg.load_sketch_path);
        if (sketch.eigvecs.rows() != data.d()) {
          throw ConfigError("loaded sketch dimension " +
                            std::to_string(sketch.eigvecs.rows()) +
                            " does not match dataset D = " + std::to_string(data.d()));
        }
      } else if (cfg.k == -1) {
        AutoKResult auto_res = choose_k_auto(data, fit_state, cfg.seed, cfg.nu, cfg.power,
                                             threads);
        sketch = std::move(auto_res.sketch);
        qn = std::move(auto_res.qn);
        have_qn = true;
      } else {
        sketch = build_sketch(data, fit_state, static_cast<int>(cfg.k), cfg.seed, cfg.nu,
                              cfg.power);
      }
      if (!have_qn) qn = qn_from_sketch(sketch, data, fit_state, threads);
      rep.k = sketch.k;
      rep.summary["nu_used"] = sketch.nu;
      if (!cfg.save_sketch_path.empty()) save_sketch(cfg.save_sketch_path, sketch);
    } else {
      NeumannResult nr = neumann_qn(fit_state, data,
                                    NeumannConfig{cfg.neumann_s, cfg.neumann_m, cfg.seed});
      qn = std::move(nr.qn);
      divergent = nr.divergent;
      rep.summary["neumann_divergent"] = divergent;
    }
    rep.qn.assign(qn.q.data(), qn.q.data() + qn.q.size());
    rep.eta.assign(qn.eta.data(), qn.eta.data() + qn.eta.size());
    rep.timings.push_back({"qn", w.seconds()});

    stage = "predict";
    w.reset();
    Predictions ns;
    Eigen::VectorXd ij;
    const bool want_ns = cfg.method != Method::ij;
    const bool want_ij = cfg.method != Method::ns;
    if (want_ns) {
      ns = ns_predict(fit_state, qn);
      rep.ns_predictions.assign(ns.values.data(), ns.values.data() + ns.values.size());
    }
    if (want_ij) {
      ij = ij_predict(fit_state, qn);
      rep.ij_predictions.assign(ij.data(), ij.data() + ij.size());
    }
    rep.timings.push_back({"predict", w.seconds()});

    // The interval/fallback columns follow one method: ij when requested
    // alone, ns otherwise.
    const bool primary_is_ij = cfg.method == Method::ij;
    const Eigen::VectorXd& primary_pred = primary_is_ij ? ij : ns.values;

    stage = "bounds";
    w.reset();
    const bool certified = cfg.qn_source != QnChoice::neumann;
    Eigen::VectorXd primary_bound;
    if (certified) {
      const std::vector<PerPointBounds> pb =
          certified_error_bounds(fit_state, data, cfg.family, qn, threads);
      const Eigen::Index n = data.n();
      rep.mn.resize(n);
      rep.en.resize(n);
      rep.ns_bound.resize(n);
      rep.ij_bound.resize(n);
      rep.err_lo.resize(n);
      rep.err_hi.resize(n);
      primary_bound.resize(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        rep.mn[i] = pb[i].m_n;
        rep.en[i] = pb[i].e_n;
        rep.ns_bound[i] = pb[i].ns_bound;
        rep.ij_bound[i] = pb[i].ij_bound;
        primary_bound[i] = primary_is_ij ? pb[i].ij_bound : pb[i].ns_bound;
        const ErrInterval iv =
            err_interval(primary_pred[i], primary_bound[i], cfg.metric, data.y()[i]);
        rep.err_lo[i] = iv.lo;
        rep.err_hi[i] = iv.hi;
      }
    }
    rep.timings.push_back({"bounds", w.seconds()});

    stage = "fallback";
    w.reset();
    rep.fallback_reason.assign(static_cast<std::size_t>(data.n()), "");
    if (certified) {
      rep.fallback = std::vector<std::int64_t>();
      const std::vector<Eigen::Index> selected = fallback_select(primary_bound, cfg.policy);
      for (const Eigen::Index idx : selected) {
        rep.fallback.push_back(idx);
        rep.fallback_reason[static_cast<std::size_t>(idx)] =
            std::isfinite(primary_bound[idx]) ? "policy" : "infinite_bound";
      }
    }
    if (want_ns) {
      for (const Eigen::Index idx : ns.pole_indices) {
        rep.fallback_reason[static_cast<std::size_t>(idx)] = "denominator";
        if (std::find(rep.fallback.begin(), rep.fallback.end(), idx) == rep.fallback.end()) {
          rep.fallback.push_back(idx);
        }
      }
      std::sort(rep.fallback.begin(), rep.fallback.end());
    }
    rep.timings.push_back({"fallback", w.seconds()});

    stage = "exact_refit";
    w.reset();
    std::vector<std::pair<std::int64_t, std::pair<double, double>>> exact_merged;
    if (cfg.reroute_fallback && !rep.fallback.empty()) {
      std::vector<Eigen::Index> fb(rep.fallback.begin(), rep.fallback.end());
      const ExactCvResult ex =
          exact_loocv(data, cfg.family, cfg.lambda, cfg.metric, fb, &fit_state, cfg.cv_tol,
                      threads);
      for (std::size_t j = 0; j < ex.indices.size(); ++j) {
        const Eigen::Index idx = ex.indices[j];
        exact_merged.push_back({idx, {ex.predictions[j], ex.errs[j]}});
        if (!rep.err_lo.empty()) {
          rep.err_lo[idx] = ex.errs[j];  // rerouted point: interval collapses
          rep.err_hi[idx] = ex.errs[j];  // to the measured exact value
        }
        if (rep.fallback_reason[static_cast<std::size_t>(idx)] == "denominator") {
          if (want_ns) rep.ns_predictions[static_cast<std::size_t>(idx)] = ex.predictions[j];
        }
      }
    }
    if (cfg.exact_subset > 0) {
      CounterRng subset_rng(cfg.seed, 0x737562736574ULL);
      const auto picks = sample_without_replacement(data.n(), cfg.exact_subset, subset_rng);
      std::vector<Eigen::Index> subset(picks.begin(), picks.end());
      const ExactCvResult ex =
          exact_loocv(data, cfg.family, cfg.lambda, cfg.metric, subset, &fit_state, cfg.cv_tol,
                      threads);
      std::vector<double> exact_vals(ex.predictions.data(),
                                     ex.predictions.data() + ex.predictions.size());
      if (want_ns) {
        std::vector<double> approx;
        for (const Eigen::Index idx : ex.indices) approx.push_back(ns.values[idx]);
        rep.summary["percent_error_ns"] = mean_percent_error(approx, exact_vals);
      }
      if (want_ij) {
        std::vector<double> approx;
        for (const Eigen::Index idx : ex.indices) approx.push_back(ij[idx]);
        rep.summary["percent_error_ij"] = mean_percent_error(approx, exact_vals);
      }
      rep.summary["mean_err_exact_subset"] = ex.mean_err;
      for (std::size_t j = 0; j < ex.indices.size(); ++j) {
        exact_merged.push_back({ex.indices[j], {ex.predictions[j], ex.errs[j]}});
      }
    }
    std::sort(exact_merged.begin(), exact_merged.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    exact_merged.erase(std::unique(exact_merged.begin(), exact_merged.end(),
                                   [](const auto& a, const auto& b) {
                                     return a.first == b.first;
                                   }),
                       exact_merged.end());
    for (const auto& [idx, pe] : exact_merged) {
      rep.exact_indices.push_back(idx);
      rep.exact_predictions.push_back(pe.first);
      rep.exact_errs.push_back(pe.second);
    }
    rep.timings.push_back({"exact_refit", w.seconds()});

    stage = "summary";
    if (!rep.err_lo.empty()) {
      double lo_acc = 0, hi_acc = 0;
      std::int64_t kept = 0, excluded = 0;
      for (std::size_t i = 0; i < rep.err_hi.size(); ++i) {
        if (std::isfinite(rep.err_hi[i])) {
          lo_acc += rep.err_lo[i];
          hi_acc += rep.err_hi[i];
          ++kept;
        } else {
          ++excluded;  // vacuous and not rerouted; reported separately
        }
      }
      rep.summary["mean_err_lo"] = kept > 0 ? lo_acc / static_cast<double>(kept) : 0.0;
      rep.summary["mean_err_hi"] = kept > 0 ? hi_acc / static_cast<double>(kept) : 0.0;
      rep.summary["excluded_infinite"] = excluded;
    }
    rep.summary["n_fallback"] = static_cast<std::int64_t>(rep.fallback.size());
    rep.timings.push_back({"total", total.seconds()});

    if (!report_path.empty()) write_report(report_path, rep);
    return rep;
  } catch (const ConfigError& e) {
    persist_partial(e.what());
    throw ConfigError(stage + " stage: " + e.what());
  } catch (const DataError& e) {
    persist_partial(e.what());
    throw DataError(stage + " stage: " + e.what());
  } catch (const SolverError& e) {
    persist_partial(e.what());
    throw SolverError(stage + " stage: " + e.what(), e.last_grad_norm);
  } catch (const NumericalError& e) {
    persist_partial(e.what());
    throw NumericalError(stage + " stage: " + e.what());
  } catch (const IoError& e) {
    persist_partial(e.what());
    throw IoError(stage + " stage: " + e.what());
  }
}

// Exact LOOCV as a standalone command: refits over the subset (or all rows),
// reports per-point predictions and errors.
inline AcvReport run_exact_cv(const Dataset& data, const RunConfig& cfg,
                              const std::string& report_path = {}) {
  if (!(cfg.lambda > 0)) throw ConfigError("lambda must be > 0");
  if (cfg.exact_subset < 0 || cfg.exact_subset > data.n()) {
    throw ConfigError("exact subset size must be in [0, N]");
  }
  const int threads = resolve_threads(cfg.threads);
  AcvReport rep;
  rep.command = "exact-cv";
  rep.method = "exact";
  rep.family = to_string(cfg.family);
  rep.lambda = cfg.lambda;
  rep.qn_source = "none";
  rep.n = data.n();
  rep.d = data.d();
  rep.seed = cfg.seed;
  rep.err_metric = to_string(cfg.metric);
  rep.config = config_echo(cfg);

  StopWatch total;
  StopWatch w;
  const FitState fit_state = [&] {
    SolverOptions opts;
    opts.tol = cfg.fit_tol;
    return fit(data, cfg.family, cfg.lambda, opts);
  }();
  rep.timings.push_back({"fit", w.seconds()});

  w.reset();
  std::vector<Eigen::Index> subset;
  if (cfg.exact_subset > 0) {
    CounterRng subset_rng(cfg.seed, 0x737562736574ULL);
    const auto picks = sample_without_replacement(data.n(), cfg.exact_subset, subset_rng);
    subset.assign(picks.begin(), picks.end());
  }
  const ExactCvResult ex = exact_loocv(data, cfg.family, cfg.lambda, cfg.metric, subset,
                                       &fit_state, cfg.cv_tol, threads);
  rep.timings.push_back({"exact_refit", w.seconds()});

  rep.exact_indices.assign(ex.indices.begin(), ex.indices.end());
  rep.exact_predictions.assign(ex.predictions.data(),
                               ex.predictions.data() + ex.predictions.size());
  rep.exact_errs.assign(ex.errs.data(), ex.errs.data() + ex.errs.size());
  rep.summary["mean_err_exact"] = ex.mean_err;
  rep.summary["folds"] = static_cast<std::int64_t>(ex.indices.size());
  rep.timings.push_back({"total", total.seconds()});
  if (!report_path.empty()) write_report(report_path, rep);
  return rep;
}

// Benchmark configuration: which operating points to time.
struct BenchConfig {
  RunConfig run;                 // family/lambda/method/seed/tolerances
  std::vector<int> k_grid;       // sketch sizes to time (empty = skip)
  std::vector<int> s_grid;       // Neumann depths (empty = skip baseline)
  std::vector<int> m_grid = {2, 5};
  bool with_exact_qn = false;    // time the dense factorization path too
  std::int64_t subset = 20;      // comparator subset for percent error
};

// Times each requested operating point and reports percent error against
// exact CV on a fixed comparator subset. The exact-CV row extrapolates the
// per-fold cost to all N folds when a subset was used.
inline std::vector<BenchRow> run_bench(const Dataset& data, const BenchConfig& bench) {
  const RunConfig& cfg = bench.run;
  if (!(cfg.lambda > 0)) throw ConfigError("lambda must be > 0");
  if (bench.subset < 1 || bench.subset > data.n()) {
    throw ConfigError("bench subset must be in [1, N]");
  }
  const int threads = resolve_threads(cfg.threads);
  const bool use_ij = cfg.method == Method::ij;

  SolverOptions fit_opts;
  fit_opts.tol = cfg.fit_tol;
  const FitState fit_state = fit(data, cfg.family, cfg.lambda, fit_opts);

  CounterRng subset_rng(cfg.seed, 0x737562736574ULL);
  const auto picks = sample_without_replacement(data.n(), bench.subset, subset_rng);
  const std::vector<Eigen::Index> subset(picks.begin(), picks.end());

  StopWatch w;
  const ExactCvResult ex = exact_loocv(data, cfg.family, cfg.lambda, cfg.metric, subset,
                                       &fit_state, cfg.cv_tol, threads);
  const double exact_seconds = w.seconds();
  std::vector<double> exact_vals(ex.predictions.data(),
                                 ex.predictions.data() + ex.predictions.size());

  const auto percent_error_on_subset = [&](const Eigen::VectorXd& all_predictions) {
    std::vector<double> approx;
    approx.reserve(subset.size());
    for (const Eigen::Index idx : subset) approx.push_back(all_predictions[idx]);
    return mean_percent_error(approx, exact_vals);
  };
  const auto predict_with = [&](const QnSet& qn) {
    return use_ij ? ij_predict(fit_state, qn) : ns_predict(fit_state, qn).values;
  };

  std::vector<BenchRow> rows;
  {
    BenchRow row;
    row.method = "exact_cv";
    row.extrapolated = bench.subset < data.n();
    row.wall_seconds = row.extrapolated
                           ? exact_seconds / static_cast<double>(bench.subset) *
                                 static_cast<double>(data.n())
                           : exact_seconds;
    row.mean_percent_error = 0;
    rows.push_back(row);
  }

  if (bench.with_exact_qn) {
    w.reset();
    const QnSet qn = exact_qn(fit_state, data, threads);
    const Eigen::VectorXd pred = predict_with(qn);
    BenchRow row;
    row.method = "exact_qn";
    row.wall_seconds = w.seconds();
    row.mean_percent_error = percent_error_on_subset(pred);
    rows.push_back(row);
  }

  for (const int k : bench.k_grid) {
    w.reset();
    const HessianSketch sketch =
        build_sketch(data, fit_state, k, cfg.seed, cfg.nu, cfg.power);
    const QnSet qn = qn_from_sketch(sketch, data, fit_state, threads);
    const Eigen::VectorXd pred = predict_with(qn);
    BenchRow row;
    row.method = "sketch";
    row.k = k;
    row.wall_seconds = w.seconds();
    row.mean_percent_error = percent_error_on_subset(pred);
    rows.push_back(row);
  }

  if (!bench.s_grid.empty()) {
    const auto sweep = neumann_sweep(fit_state, data, bench.s_grid, bench.m_grid, cfg.seed);
    for (const auto& point : sweep) {
      QnSet qn;
      qn.q = point.q;
      qn.eta = Eigen::VectorXd::Constant(data.n(), kInf);
      qn.source = QnSource::neumann;
      const Eigen::VectorXd pred = predict_with(qn);
      BenchRow row;
      row.method = "neumann";
      row.s = point.s;
      row.m = point.m;
      row.wall_seconds = point.seconds;
      row.mean_percent_error = percent_error_on_subset(pred);
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace lracv
