#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lracv/lracv.hpp"
#include "support/oracles.hpp"

using lracv::AcvReport;
using lracv::BenchConfig;
using lracv::Dataset;
using lracv::ErrMetric;
using lracv::FallbackPolicy;
using lracv::FitState;
using lracv::GlmFamily;
using lracv::Json;
using lracv::Method;
using lracv::QnChoice;
using lracv::RunConfig;
using lracv::SyntheticSpec;

namespace {

std::string temp_path(const char* name) {
  return std::string(std::getenv("TMPDIR") ? std::getenv("TMPDIR") : "/tmp") + "/" + name;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Exact (bitwise) comparison of a report column against a reference vector.
int mismatches(const std::vector<double>& got, const Eigen::VectorXd& want) {
  if (static_cast<Eigen::Index>(got.size()) != want.size()) return 1 << 20;
  int bad = 0;
  for (Eigen::Index i = 0; i < want.size(); ++i) {
    const double g = got[static_cast<std::size_t>(i)];
    if (!(g == want[i]) && !(std::isinf(g) && std::isinf(want[i]) && g * want[i] > 0)) ++bad;
  }
  return bad;
}

Dataset small_alr(GlmFamily family, Eigen::Index n, Eigen::Index d, Eigen::Index rank,
                  double tail, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.family = family;
  spec.n = n;
  spec.d = d;
  spec.rank = rank;
  spec.tail_std = tail;
  spec.theta_seed = seed;
  spec.data_seed = seed + 1;
  return lracv::gen_synthetic(spec).data;
}

Json report_json_without_timings(const AcvReport& rep) {
  Json j = lracv::to_json(rep);
  j.erase("timings");
  return j;
}

}  // namespace

TEST_CASE("end-to-end run matches the hand-wired stage composition", "[pipeline]") {
  const Dataset data = small_alr(GlmFamily::poisson, 60, 24, 6, 0.01, 3);

  RunConfig cfg;
  cfg.family = GlmFamily::poisson;
  cfg.lambda = 0.8;
  cfg.method = Method::both;
  cfg.qn_source = QnChoice::sketch;
  cfg.k = 8;
  cfg.seed = 9;
  cfg.metric = ErrMetric::squared_of_mean;
  cfg.policy = FallbackPolicy{FallbackPolicy::Kind::top_j, 3, lracv::kInf};
  cfg.reroute_fallback = true;
  cfg.exact_subset = 5;
  cfg.threads = 1;
  const AcvReport rep = lracv::run_acv(data, cfg);

  // Recompose the run from the individual library calls.
  lracv::SolverOptions fit_opts;
  fit_opts.tol = cfg.fit_tol;
  const FitState fs = lracv::fit(data, cfg.family, cfg.lambda, fit_opts);
  const lracv::HessianSketch sketch =
      lracv::build_sketch(data, fs, 8, cfg.seed, std::nullopt, 1);
  const lracv::QnSet qn = lracv::qn_from_sketch(sketch, data, fs, 1);
  const lracv::Predictions ns = lracv::ns_predict(fs, qn);
  const Eigen::VectorXd ij = lracv::ij_predict(fs, qn);
  const auto pb = lracv::certified_error_bounds(fs, data, cfg.family, qn, 1);

  CHECK(rep.n == 60);
  CHECK(rep.d == 24);
  CHECK(rep.k == 8);
  CHECK(rep.qn_source == "sketch");
  CHECK(rep.summary.at("nu_used").get<double>() == sketch.nu);
  CHECK(mismatches(rep.qn, qn.q) == 0);
  CHECK(mismatches(rep.eta, qn.eta) == 0);
  CHECK(mismatches(rep.ij_predictions, ij) == 0);

  const Eigen::Index n = data.n();
  Eigen::VectorXd mn(n), en(n), ns_bound(n), ij_bound(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    mn[i] = pb[static_cast<std::size_t>(i)].m_n;
    en[i] = pb[static_cast<std::size_t>(i)].e_n;
    ns_bound[i] = pb[static_cast<std::size_t>(i)].ns_bound;
    ij_bound[i] = pb[static_cast<std::size_t>(i)].ij_bound;
  }
  CHECK(mismatches(rep.mn, mn) == 0);
  CHECK(mismatches(rep.en, en) == 0);
  CHECK(mismatches(rep.ns_bound, ns_bound) == 0);
  CHECK(mismatches(rep.ij_bound, ij_bound) == 0);

  // Fallback set: policy selection on the ns bound column plus pole reroutes.
  std::vector<std::int64_t> expected_fallback;
  for (const Eigen::Index idx : lracv::fallback_select(ns_bound, cfg.policy)) {
    expected_fallback.push_back(idx);
  }
  for (const Eigen::Index idx : ns.pole_indices) {
    if (std::find(expected_fallback.begin(), expected_fallback.end(), idx) ==
        expected_fallback.end()) {
      expected_fallback.push_back(idx);
    }
  }
  std::sort(expected_fallback.begin(), expected_fallback.end());
  CHECK(rep.fallback == expected_fallback);
  CHECK(rep.summary.at("n_fallback").get<std::int64_t>() ==
        static_cast<std::int64_t>(expected_fallback.size()));

  // Exact refits: fallback set plus the seeded comparator subset, merged.
  std::vector<Eigen::Index> fb(expected_fallback.begin(), expected_fallback.end());
  const lracv::ExactCvResult ex_fb =
      lracv::exact_loocv(data, cfg.family, cfg.lambda, cfg.metric, fb, &fs, cfg.cv_tol, 1);
  lracv::CounterRng subset_rng(cfg.seed, 0x737562736574ULL);
  const auto picks = lracv::sample_without_replacement(n, cfg.exact_subset, subset_rng);
  const std::vector<Eigen::Index> subset(picks.begin(), picks.end());
  const lracv::ExactCvResult ex_sub =
      lracv::exact_loocv(data, cfg.family, cfg.lambda, cfg.metric, subset, &fs, cfg.cv_tol, 1);

  std::vector<std::pair<std::int64_t, std::pair<double, double>>> merged;
  for (std::size_t j = 0; j < ex_fb.indices.size(); ++j) {
    merged.push_back({ex_fb.indices[j], {ex_fb.predictions[j], ex_fb.errs[j]}});
  }
  for (std::size_t j = 0; j < ex_sub.indices.size(); ++j) {
    merged.push_back({ex_sub.indices[j], {ex_sub.predictions[j], ex_sub.errs[j]}});
  }
  std::sort(merged.begin(), merged.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  merged.erase(std::unique(merged.begin(), merged.end(),
                           [](const auto& a, const auto& b) { return a.first == b.first; }),
               merged.end());
  REQUIRE(rep.exact_indices.size() == merged.size());
  int bad = 0;
  for (std::size_t j = 0; j < merged.size(); ++j) {
    if (rep.exact_indices[j] != merged[j].first) ++bad;
    if (!(rep.exact_predictions[j] == merged[j].second.first)) ++bad;
    if (!(rep.exact_errs[j] == merged[j].second.second)) ++bad;
  }
  CHECK(bad == 0);

  // Error intervals: the primary (ns) interval per point, with rerouted
  // points collapsed to the measured exact error.
  Eigen::VectorXd err_lo(n), err_hi(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const lracv::ErrInterval iv =
        lracv::err_interval(ns.values[i], ns_bound[i], cfg.metric, data.y()[i]);
    err_lo[i] = iv.lo;
    err_hi[i] = iv.hi;
  }
  for (std::size_t j = 0; j < ex_fb.indices.size(); ++j) {
    err_lo[ex_fb.indices[j]] = ex_fb.errs[j];
    err_hi[ex_fb.indices[j]] = ex_fb.errs[j];
  }
  CHECK(mismatches(rep.err_lo, err_lo) == 0);
  CHECK(mismatches(rep.err_hi, err_hi) == 0);

  // ns predictions are raw values except pole reroutes (exact substitution).
  Eigen::VectorXd expect_ns = ns.values;
  for (const Eigen::Index idx : ns.pole_indices) {
    for (std::size_t j = 0; j < ex_fb.indices.size(); ++j) {
      if (ex_fb.indices[j] == idx) expect_ns[idx] = ex_fb.predictions[j];
    }
  }
  CHECK(mismatches(rep.ns_predictions, expect_ns) == 0);

  // Comparator-subset percent errors use the raw approximations.
  std::vector<double> exact_vals(ex_sub.predictions.data(),
                                 ex_sub.predictions.data() + ex_sub.predictions.size());
  std::vector<double> approx_ns, approx_ij;
  for (const Eigen::Index idx : ex_sub.indices) {
    approx_ns.push_back(ns.values[idx]);
    approx_ij.push_back(ij[idx]);
  }
  CHECK(rep.summary.at("percent_error_ns").get<double>() ==
        lracv::mean_percent_error(approx_ns, exact_vals));
  CHECK(rep.summary.at("percent_error_ij").get<double>() ==
        lracv::mean_percent_error(approx_ij, exact_vals));
  CHECK(rep.summary.at("mean_err_exact_subset").get<double>() == ex_sub.mean_err);

  // Interval means over points with finite upper ends.
  double lo_acc = 0, hi_acc = 0;
  std::int64_t kept = 0, excluded = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::isfinite(err_hi[i])) {
      lo_acc += err_lo[i];
      hi_acc += err_hi[i];
      ++kept;
    } else {
      ++excluded;
    }
  }
  REQUIRE(kept > 0);  // rerouted points always carry finite measured errors
  CHECK(rep.summary.at("mean_err_lo").get<double>() == lo_acc / static_cast<double>(kept));
  CHECK(rep.summary.at("mean_err_hi").get<double>() == hi_acc / static_cast<double>(kept));
  CHECK(rep.summary.at("excluded_infinite").get<std::int64_t>() == excluded);
}

TEST_CASE("reruns and thread counts do not change report values", "[pipeline]") {
  const Dataset data = small_alr(GlmFamily::logistic, 50, 12, 4, 0.02, 21);
  RunConfig cfg;
  cfg.family = GlmFamily::logistic;
  cfg.lambda = 0.5;
  cfg.method = Method::both;
  cfg.qn_source = QnChoice::sketch;
  cfg.k = 6;
  cfg.seed = 2;
  cfg.exact_subset = 4;
  cfg.policy = FallbackPolicy{FallbackPolicy::Kind::top_j, 2, lracv::kInf};
  cfg.threads = 1;

  const AcvReport first = lracv::run_acv(data, cfg);
  const AcvReport second = lracv::run_acv(data, cfg);
  cfg.threads = 3;
  const AcvReport threaded = lracv::run_acv(data, cfg);

  const Json a = report_json_without_timings(first);
  const Json b = report_json_without_timings(second);
  Json c = report_json_without_timings(threaded);
  CHECK(a.dump() == b.dump());
  // The thread count is echoed in the config block; values must still agree.
  c["config"]["threads"] = 1;
  CHECK(a.dump() == c.dump());
}

TEST_CASE("report file carries the full schema", "[pipeline][report]") {
  const Dataset data = small_alr(GlmFamily::poisson, 40, 10, 3, 0.01, 5);
  RunConfig cfg;
  cfg.family = GlmFamily::poisson;
  cfg.lambda = 1.0;
  cfg.method = Method::both;
  cfg.qn_source = QnChoice::sketch;
  cfg.k = 4;
  cfg.seed = 11;
  cfg.exact_subset = 3;
  cfg.threads = 1;
  const std::string path = temp_path("pipeline_schema.json");
  lracv::run_acv(data, cfg, path);

  const Json j = Json::parse(slurp(path));
  CHECK(j.at("schema_version").get<int>() == 1);
  CHECK(j.at("command").get<std::string>() == "acv");
  CHECK(j.at("method").get<std::string>() == "both");
  CHECK(j.at("family").get<std::string>() == "poisson");
  CHECK(j.at("lambda").get<double>() == 1.0);
  CHECK(j.at("qn_source").get<std::string>() == "sketch");
  CHECK(j.at("n").get<std::int64_t>() == 40);
  CHECK(j.at("d").get<std::int64_t>() == 10);
  CHECK(j.at("k").get<std::int64_t>() == 4);
  CHECK(j.at("seed").get<std::uint64_t>() == 11);
  CHECK(j.at("err_metric").get<std::string>() == "squared");
  CHECK(j.at("config").is_object());
  CHECK(j.at("config").at("lambda").get<double>() == 1.0);
  CHECK(j.at("config").at("policy").get<std::string>() == "none");

  const Json& pp = j.at("per_point");
  for (const char* key : {"ns_prediction", "ij_prediction", "qn", "eta", "mn", "en",
                          "ns_bound", "ij_bound", "err_lo", "err_hi", "fallback_reason"}) {
    INFO("per_point key: " << key);
    REQUIRE(pp.contains(key));
    CHECK(pp.at(key).is_array());
    CHECK(pp.at(key).size() == 40);
  }
  CHECK(j.at("fallback").is_array());

  const Json& ex = j.at("exact_refit");
  REQUIRE(ex.at("indices").is_array());
  CHECK(ex.at("indices").size() == ex.at("predictions").size());
  CHECK(ex.at("indices").size() == ex.at("errs").size());
  CHECK(ex.at("indices").size() >= 3);  // at least the comparator subset

  const Json& summary = j.at("summary");
  for (const char* key : {"nu_used", "percent_error_ns", "percent_error_ij",
                          "mean_err_exact_subset", "mean_err_lo", "mean_err_hi",
                          "excluded_infinite", "n_fallback"}) {
    INFO("summary key: " << key);
    CHECK(summary.contains(key));
  }

  std::vector<std::string> stages;
  for (const auto& t : j.at("timings")) {
    stages.push_back(t.at("stage").get<std::string>());
    CHECK(t.at("seconds").get<double>() >= 0.0);
  }
  const std::vector<std::string> want = {"fit",      "qn",          "predict", "bounds",
                                         "fallback", "exact_refit", "total"};
  CHECK(stages == want);
  CHECK(!j.contains("error"));
  std::remove(path.c_str());
}

TEST_CASE("uncertified quadratic forms leave bound columns out and eta null",
          "[pipeline][report]") {
  const Dataset data = small_alr(GlmFamily::gaussian, 30, 8, 3, 0.05, 7);
  RunConfig cfg;
  cfg.family = GlmFamily::gaussian;
  cfg.lambda = 0.9;
  cfg.method = Method::ns;
  cfg.qn_source = QnChoice::neumann;
  cfg.neumann_s = 5;
  cfg.neumann_m = 2;
  cfg.seed = 13;
  cfg.threads = 1;
  const std::string path = temp_path("pipeline_neumann.json");
  const AcvReport rep = lracv::run_acv(data, cfg, path);

  CHECK(rep.qn_source == "neumann");
  CHECK(rep.mn.empty());
  CHECK(rep.ns_bound.empty());
  CHECK(rep.err_lo.empty());
  for (const double e : rep.eta) CHECK(std::isinf(e));

  const Json j = Json::parse(slurp(path));
  const Json& pp = j.at("per_point");
  CHECK(pp.contains("ns_prediction"));
  CHECK(pp.contains("qn"));
  REQUIRE(pp.contains("eta"));
  for (const auto& v : pp.at("eta")) CHECK(v.is_null());  // infinity -> null
  CHECK(!pp.contains("mn"));
  CHECK(!pp.contains("en"));
  CHECK(!pp.contains("ns_bound"));
  CHECK(!pp.contains("ij_bound"));
  CHECK(!pp.contains("err_lo"));
  CHECK(!pp.contains("err_hi"));
  CHECK(j.at("summary").contains("neumann_divergent"));
  CHECK(j.at("summary").at("neumann_divergent").is_boolean());
  // Clipped-to-cap q keeps the Newton-step denominator away from zero, so no
  // pole reroutes exist and the fallback set is empty.
  CHECK(j.at("fallback").empty());
  CHECK(j.at("summary").at("n_fallback").get<std::int64_t>() == 0);
  std::remove(path.c_str());
}

TEST_CASE("stage failure persists a partial report and rethrows with the stage",
          "[pipeline][report]") {
  Eigen::MatrixXd x(4, 2);
  x << 1, 0, 0, 1, 1, 1, 0.5, -0.5;
  Eigen::VectorXd y(4);
  y << 1, -1, 2, 0;  // -1 is outside the Poisson response domain
  const Dataset data = Dataset::from_dense(std::move(x), std::move(y));

  RunConfig cfg;
  cfg.family = GlmFamily::poisson;
  cfg.lambda = 1.0;
  cfg.threads = 1;
  const std::string path = temp_path("pipeline_partial.json");
  CHECK_THROWS_MATCHES(lracv::run_acv(data, cfg, path), lracv::DataError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::StartsWith("fit stage:")));

  const Json j = Json::parse(slurp(path));
  REQUIRE(j.contains("error"));
  CHECK(j.at("error").at("stage").get<std::string>() == "fit");
  CHECK(!j.at("error").at("message").get<std::string>().empty());
  CHECK(j.at("schema_version").get<int>() == 1);
  CHECK(j.at("per_point").empty());
  REQUIRE(j.at("timings").size() == 1);
  CHECK(j.at("timings")[0].at("stage").get<std::string>() == "total");
  std::remove(path.c_str());
}

TEST_CASE("configuration validation rejects inconsistent requests", "[pipeline]") {
  const Dataset data = small_alr(GlmFamily::gaussian, 20, 6, 3, 0.0, 19);
  RunConfig cfg;
  cfg.family = GlmFamily::gaussian;
  cfg.threads = 1;

  auto expect_config_error = [&](RunConfig bad) {
    CHECK_THROWS_AS(lracv::run_acv(data, bad), lracv::ConfigError);
  };

  RunConfig bad = cfg;
  bad.lambda = 0.0;
  expect_config_error(bad);

  bad = cfg;
  bad.qn_source = QnChoice::sketch;
  bad.k = 0;
  expect_config_error(bad);

  bad = cfg;
  bad.qn_source = QnChoice::sketch;
  bad.k = 7;  // D = 6
  expect_config_error(bad);

  bad = cfg;
  bad.qn_source = QnChoice::sketch;
  bad.k = 2;
  bad.power = 0;
  expect_config_error(bad);

  bad = cfg;
  bad.qn_source = QnChoice::sketch;
  bad.k = 2;
  bad.nu = 0.0;
  expect_config_error(bad);

  bad = cfg;
  bad.qn_source = QnChoice::neumann;
  bad.neumann_s = 0;
  expect_config_error(bad);

  bad = cfg;
  bad.exact_subset = 21;  // N = 20
  expect_config_error(bad);

  bad = cfg;
  bad.fit_tol = 0.0;
  expect_config_error(bad);

  bad = cfg;  // sketch file path without the sketch source
  bad.save_sketch_path = temp_path("never_written.sketch");
  expect_config_error(bad);

  CHECK(lracv::method_from_string("ns") == Method::ns);
  CHECK(lracv::method_from_string("ij") == Method::ij);
  CHECK(lracv::method_from_string("both") == Method::both);
  CHECK_THROWS_AS(lracv::method_from_string("nsij"), lracv::ConfigError);
  CHECK(lracv::qn_choice_from_string("exact") == QnChoice::exact);
  CHECK(lracv::qn_choice_from_string("sketch") == QnChoice::sketch);
  CHECK(lracv::qn_choice_from_string("neumann") == QnChoice::neumann);
  CHECK_THROWS_AS(lracv::qn_choice_from_string("dense"), lracv::ConfigError);
}

TEST_CASE("standalone exact CV command reproduces the library refits", "[pipeline]") {
  const Dataset data = small_alr(GlmFamily::logistic, 18, 5, 3, 0.02, 23);
  RunConfig cfg;
  cfg.family = GlmFamily::logistic;
  cfg.lambda = 0.7;
  cfg.metric = ErrMetric::logistic_loss;
  cfg.exact_subset = 0;  // all rows
  cfg.threads = 1;
  const AcvReport rep = lracv::run_exact_cv(data, cfg);

  lracv::SolverOptions opts;
  opts.tol = cfg.fit_tol;
  const FitState fs = lracv::fit(data, cfg.family, cfg.lambda, opts);
  const lracv::ExactCvResult ex =
      lracv::exact_loocv(data, cfg.family, cfg.lambda, cfg.metric, {}, &fs, cfg.cv_tol, 1);

  CHECK(rep.command == "exact-cv");
  CHECK(rep.qn_source == "none");
  REQUIRE(rep.exact_indices.size() == 18);
  int bad = 0;
  for (std::size_t i = 0; i < rep.exact_indices.size(); ++i) {
    if (rep.exact_indices[i] != static_cast<std::int64_t>(i)) ++bad;
    if (!(rep.exact_predictions[i] == ex.predictions[static_cast<Eigen::Index>(i)])) ++bad;
    if (!(rep.exact_errs[i] == ex.errs[static_cast<Eigen::Index>(i)])) ++bad;
  }
  CHECK(bad == 0);
  CHECK(rep.summary.at("mean_err_exact").get<double>() == ex.mean_err);
  CHECK(rep.summary.at("folds").get<std::int64_t>() == 18);
}

TEST_CASE("sketch container round-trips through the pipeline", "[pipeline][sketch]") {
  const Dataset data = small_alr(GlmFamily::poisson, 50, 16, 5, 0.01, 29);
  RunConfig cfg;
  cfg.family = GlmFamily::poisson;
  cfg.lambda = 1.2;
  cfg.qn_source = QnChoice::sketch;
  cfg.k = 6;
  cfg.seed = 31;
  cfg.threads = 1;
  const std::string path = temp_path("pipeline_roundtrip.sketch");

  RunConfig save_cfg = cfg;
  save_cfg.save_sketch_path = path;
  const AcvReport saved = lracv::run_acv(data, save_cfg);

  RunConfig load_cfg = cfg;
  load_cfg.k = -1;  // ignored: the loaded sketch fixes K
  load_cfg.load_sketch_path = path;
  const AcvReport loaded = lracv::run_acv(data, load_cfg);

  CHECK(loaded.k == saved.k);
  CHECK(loaded.qn == saved.qn);
  CHECK(loaded.eta == saved.eta);
  CHECK(loaded.ns_predictions == saved.ns_predictions);

  // A sketch built for one width cannot be applied to another dataset.
  const Dataset other = small_alr(GlmFamily::poisson, 30, 9, 3, 0.01, 37);
  RunConfig bad = load_cfg;
  CHECK_THROWS_MATCHES(lracv::run_acv(other, bad), lracv::ConfigError,
                       Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring(
                           "does not match dataset D")));
  std::remove(path.c_str());
}

TEST_CASE("automatic sketch-size selection is plumbed through", "[pipeline][sketch]") {
  const Dataset data = small_alr(GlmFamily::gaussian, 80, 16, 4, 0.0, 41);
  RunConfig cfg;
  cfg.family = GlmFamily::gaussian;
  cfg.lambda = 0.6;
  cfg.qn_source = QnChoice::sketch;
  cfg.k = -1;
  cfg.seed = 43;
  cfg.threads = 1;
  const AcvReport rep = lracv::run_acv(data, cfg);

  lracv::SolverOptions opts;
  opts.tol = cfg.fit_tol;
  const FitState fs = lracv::fit(data, cfg.family, cfg.lambda, opts);
  const lracv::AutoKResult expect =
      lracv::choose_k_auto(data, fs, cfg.seed, std::nullopt, 1, 1);

  CHECK(rep.k == expect.k);
  CHECK(rep.k >= 1);
  CHECK(rep.k <= 16);
  CHECK(mismatches(rep.qn, expect.qn.q) == 0);
  CHECK(mismatches(rep.eta, expect.qn.eta) == 0);
}

TEST_CASE("benchmark rows follow the column conventions", "[pipeline][bench]") {
  const Dataset data = small_alr(GlmFamily::gaussian, 24, 6, 3, 0.02, 47);
  BenchConfig bench;
  bench.run.family = GlmFamily::gaussian;
  bench.run.lambda = 0.8;
  bench.run.seed = 3;
  bench.run.threads = 1;
  bench.k_grid = {2, 4};
  bench.s_grid = {3};
  bench.m_grid = {2, 5};
  bench.with_exact_qn = true;
  bench.subset = 6;
  const auto rows = lracv::run_bench(data, bench);

  REQUIRE(rows.size() == 6);  // exact_cv, exact_qn, 2 sketches, 2 Neumann points
  CHECK(rows[0].method == "exact_cv");
  CHECK(rows[0].extrapolated);  // subset of 6 out of 24 folds
  CHECK(rows[0].k == -1);
  CHECK(rows[0].s == -1);
  CHECK(rows[0].m == -1);
  CHECK(rows[0].mean_percent_error == 0.0);
  CHECK(rows[0].wall_seconds > 0.0);

  CHECK(rows[1].method == "exact_qn");
  CHECK(rows[1].k == -1);
  CHECK(!rows[1].extrapolated);

  CHECK(rows[2].method == "sketch");
  CHECK(rows[2].k == 2);
  CHECK(rows[3].method == "sketch");
  CHECK(rows[3].k == 4);

  CHECK(rows[4].method == "neumann");
  CHECK(rows[4].s == 3);
  CHECK(rows[4].m == 2);
  CHECK(rows[5].method == "neumann");
  CHECK(rows[5].s == 3);
  CHECK(rows[5].m == 5);

  for (const auto& row : rows) {
    INFO("row method: " << row.method);
    CHECK(row.wall_seconds >= 0.0);
    CHECK(std::isfinite(row.mean_percent_error));
    CHECK(row.mean_percent_error >= 0.0);
  }

  // Full-population subset reports measured (not extrapolated) wall time.
  BenchConfig full = bench;
  full.subset = 24;
  full.k_grid = {2};
  full.s_grid = {};
  full.with_exact_qn = false;
  const auto full_rows = lracv::run_bench(data, full);
  REQUIRE(full_rows.size() == 2);
  CHECK(!full_rows[0].extrapolated);
}

TEST_CASE("benchmark CSV writes one row per operating point", "[pipeline][bench]") {
  std::vector<lracv::BenchRow> rows(3);
  rows[0].method = "exact_cv";
  rows[0].wall_seconds = 1.5;
  rows[0].mean_percent_error = 0.0;
  rows[0].extrapolated = true;
  rows[1].method = "sketch";
  rows[1].k = 16;
  rows[1].wall_seconds = 0.25;
  rows[1].mean_percent_error = 2.5;
  rows[2].method = "neumann";
  rows[2].s = 10;
  rows[2].m = 2;
  rows[2].wall_seconds = 0.125;
  rows[2].mean_percent_error = 12.5;

  const std::string path = temp_path("pipeline_bench.csv");
  lracv::write_bench_csv(path, rows);
  const std::string want =
      "method,k,s,m,wall_seconds,mean_percent_error,extrapolated\n"
      "exact_cv,,,,1.5,0,true\n"
      "sketch,16,,,0.25,2.5,false\n"
      "neumann,,10,2,0.125,12.5,false\n";
  CHECK(slurp(path) == want);
  std::remove(path.c_str());
}

TEST_CASE("mean percent error averages relative deviations", "[pipeline][report]") {
  CHECK(lracv::mean_percent_error({1.1, 2.0}, {1.0, 2.0}) ==
        Catch::Approx(5.0).margin(1e-12));
  CHECK(lracv::mean_percent_error({3.0}, {3.0}) == 0.0);
  CHECK_THROWS_AS(lracv::mean_percent_error({1.0}, {1.0, 2.0}), lracv::ConfigError);
  CHECK_THROWS_AS(lracv::mean_percent_error({}, {}), lracv::ConfigError);
  // Zero exact values fall back to a tiny denominator instead of dividing by 0.
  const double guarded = lracv::mean_percent_error({1.0}, {0.0});
  CHECK(std::isfinite(guarded));
  CHECK(guarded > 1e10);
}
