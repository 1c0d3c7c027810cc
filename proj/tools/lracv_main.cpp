// Command-line front end: gen | fit | acv | exact-cv | bounds | bench.
// Exit codes: 0 success, 2 configuration/data error, 3 numerical failure,
// 4 I/O failure.

#include <CLI11.hpp>
#include <charconv>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "lracv/lracv.hpp"

namespace {

using namespace lracv;

// Strict numeric parses for flag text; partial matches like '12abc' are rejected.
std::int64_t parse_int_flag(const std::string& text, const char* what) {
  std::int64_t value = 0;
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw ConfigError(std::string(what) + " must be an integer, got '" + text + "'");
  }
  return value;
}

double parse_double_flag(const std::string& text, const char* what) {
  try {
    std::size_t used = 0;
    const double value = std::stod(text, &used);
    if (used == text.size()) return value;
  } catch (const std::exception&) {
  }
  throw ConfigError(std::string(what) + " must be a number, got '" + text + "'");
}

FallbackPolicy parse_policy(const std::string& text) {
  FallbackPolicy policy;
  if (text.empty() || text == "none") return policy;
  if (text.rfind("top:", 0) == 0) {
    policy.kind = FallbackPolicy::Kind::top_j;
    policy.j = static_cast<int>(parse_int_flag(text.substr(4), "policy top:J"));
    if (policy.j < 0) throw ConfigError("policy top:J needs J >= 0");
    return policy;
  }
  if (text.rfind("tau:", 0) == 0) {
    policy.kind = FallbackPolicy::Kind::threshold;
    policy.tau = parse_double_flag(text.substr(4), "policy tau:X");
    if (!(policy.tau >= 0)) throw ConfigError("policy tau:X needs X >= 0");
    return policy;
  }
  throw ConfigError("unknown policy '" + text + "' (expected none|top:J|tau:X)");
}

// Grid syntax: comma list `1,5,10` or range `start:stop:step`.
std::vector<int> parse_grid(const std::string& text) {
  std::vector<int> grid;
  if (text.empty()) return grid;
  if (text.find(':') != std::string::npos) {
    int start = 0, stop = 0, step = 1;
    if (std::sscanf(text.c_str(), "%d:%d:%d", &start, &stop, &step) != 3 || step < 1) {
      throw ConfigError("bad grid range '" + text + "' (expected start:stop:step)");
    }
    for (int v = start; v <= stop; v += step) grid.push_back(v);
    return grid;
  }
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t next = text.find(',', pos);
    if (next == std::string::npos) next = text.size();
    grid.push_back(static_cast<int>(parse_int_flag(text.substr(pos, next - pos), "grid entry")));
    pos = next + 1;
  }
  return grid;
}

Dataset load_input(const std::string& path, GlmFamily family, std::int64_t csv_label) {
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0) {
    return load_csv(path, csv_label, family);
  }
  return load_libsvm(path, family);
}

struct CommonFlags {
  std::string input;
  std::string family = "poisson";
  double lambda = 1.0;
  std::int64_t csv_label = 0;
  int threads = 0;
  bool serial = false;

  void attach(CLI::App* cmd, bool with_lambda = true) {
    cmd->add_option("--input", input,
                    "dataset path (.libsvm/.txt sparse, .csv dense with a header row)")
        ->required();
    cmd->add_option("--family", family, "glm family: logistic|poisson|gaussian");
    if (with_lambda) cmd->add_option("--lambda", lambda, "l2 regularization strength");
    cmd->add_option("--csv-label", csv_label, "label column for CSV inputs (default 0)");
    cmd->add_option("--threads", threads, "thread cap (default: LRACV_THREADS or hardware)");
    cmd->add_flag("--serial", serial, "single-threaded, bitwise-reproducible mode");
  }

  int resolved_threads() const { return serial ? 1 : threads; }
};

int dispatch(int argc, char** argv) {
  CLI::App app{"approximate leave-one-out cross-validation with certified error bounds"};
  app.require_subcommand(1);

  // ---- gen ----
  auto* gen = app.add_subcommand("gen", "generate a synthetic approximately-low-rank dataset");
  std::string gen_family = "poisson", gen_out;
  SyntheticSpec spec;
  std::uint64_t gen_seed = 1;
  gen->add_option("--family", gen_family, "glm family");
  gen->add_option("--n", spec.n, "number of rows")->required();
  gen->add_option("--d", spec.d, "number of features")->required();
  gen->add_option("--rank", spec.rank, "head rank R")->required();
  gen->add_option("--tail-std", spec.tail_std, "std of entries beyond rank (0 = exact rank)");
  gen->add_option("--seed", gen_seed, "seed for theta* and data");
  gen->add_flag("--rotate", spec.rotate, "apply a random orthogonal rotation");
  gen->add_option("--out", gen_out, "output path (libsvm format)")->required();

  // ---- fit ----
  auto* fit_cmd = app.add_subcommand("fit", "fit the regularized GLM and write fit.json");
  CommonFlags fit_flags;
  fit_flags.attach(fit_cmd);
  double fit_tol = 1e-10;
  std::string fit_out = "fit.json";
  fit_cmd->add_option("--tol", fit_tol, "gradient-norm stopping tolerance");
  fit_cmd->add_option("--output", fit_out, "report path");

  // ---- acv / bounds (same flags; bounds emphasizes the certificate columns) ----
  const auto add_acv_like = [&](const char* name, const char* desc) {
    auto* cmd = app.add_subcommand(name, desc);
    return cmd;
  };
  auto* acv = add_acv_like("acv", "approximate LOOCV with certified per-point bounds");
  auto* bounds_cmd = add_acv_like("bounds", "certified bounds with a fallback policy");
  struct AcvFlags {
    CommonFlags common;
    std::string method = "ns", qn = "exact", k = "auto", policy = "none";
    std::string err = "squared", output = "acv.json";
    std::string save_sketch, load_sketch;
    std::uint64_t seed = 0;
    double nu = 0;
    int power = 1;
    int neumann_s = 10, neumann_m = 1;
    std::int64_t exact_subset = 0;
    double fit_tol = 1e-10, cv_tol = 1e-12;
    bool no_reroute = false;
  };
  AcvFlags acv_flags[2];
  CLI::App* acv_cmds[2] = {acv, bounds_cmd};
  for (int i = 0; i < 2; ++i) {
    auto& f = acv_flags[i];
    auto* cmd = acv_cmds[i];
    f.common.attach(cmd);
    cmd->add_option("--method", f.method, "prediction rule: ns|ij|both");
    cmd->add_option("--qn", f.qn, "quadratic-form source: exact|sketch|neumann");
    cmd->add_option("--k", f.k, "sketch size K, or 'auto'");
    cmd->add_option("--power", f.power, "subspace-iteration passes for the test matrix");
    cmd->add_option("--nu", f.nu, "stabilization shift override (default: scaled machine eps)");
    cmd->add_option("--S", f.neumann_s, "Neumann recursion depth");
    cmd->add_option("--M", f.neumann_m, "Neumann averaged repetitions");
    cmd->add_option("--seed", f.seed, "seed for sketch/baseline/subset draws");
    cmd->add_option("--err", f.err, "error metric: squared|logistic|absolute");
    cmd->add_option("--policy", f.policy, "fallback policy: none|top:J|tau:X");
    cmd->add_option("--exact-subset", f.exact_subset,
                    "size of the exact-CV comparator subset (0 = off)");
    cmd->add_flag("--no-reroute", f.no_reroute, "skip exact refits of fallback points");
    cmd->add_option("--fit-tol", f.fit_tol, "solver tolerance for the main fit");
    cmd->add_option("--cv-tol", f.cv_tol, "solver tolerance for exact refits");
    cmd->add_option("--save-sketch", f.save_sketch, "write the sketch container here");
    cmd->add_option("--load-sketch", f.load_sketch, "reuse a saved sketch container");
    cmd->add_option("--output", f.output, "report path");
  }

  // ---- exact-cv ----
  auto* exact_cmd = app.add_subcommand("exact-cv", "exact leave-one-out refits");
  CommonFlags exact_flags;
  exact_flags.attach(exact_cmd);
  std::int64_t exact_subset = 0;
  std::uint64_t exact_seed = 0;
  std::string exact_err = "squared", exact_out = "exact_cv.json";
  double exact_fit_tol = 1e-10, exact_cv_tol = 1e-12;
  exact_cmd->add_option("--subset", exact_subset, "random subset size (0 = all rows)");
  exact_cmd->add_option("--seed", exact_seed, "subset seed");
  exact_cmd->add_option("--err", exact_err, "error metric");
  exact_cmd->add_option("--fit-tol", exact_fit_tol, "solver tolerance for the main fit");
  exact_cmd->add_option("--cv-tol", exact_cv_tol, "solver tolerance for refits");
  exact_cmd->add_option("--output", exact_out, "report path");

  // ---- bench ----
  auto* bench_cmd = app.add_subcommand("bench", "error-vs-time benchmark table");
  CommonFlags bench_flags;
  bench_flags.attach(bench_cmd);
  std::string bench_method = "ij", bench_k_grid, bench_s_grid, bench_m_grid = "2,5";
  std::string bench_baseline, bench_out = "bench.csv", bench_err = "squared";
  std::int64_t bench_subset = 20;
  std::uint64_t bench_seed = 0;
  bool bench_with_exact_qn = false;
  bench_cmd->add_option("--method", bench_method, "prediction rule timed: ns|ij");
  bench_cmd->add_option("--k-grid", bench_k_grid, "sketch sizes, e.g. 25,50,100");
  bench_cmd->add_option("--baseline", bench_baseline, "extra baseline: neumann");
  bench_cmd->add_option("--S-grid", bench_s_grid, "Neumann depths, e.g. 1:200:5");
  bench_cmd->add_option("--M", bench_m_grid, "Neumann repetition counts, e.g. 2,5");
  bench_cmd->add_flag("--with-exact-qn", bench_with_exact_qn,
                      "also time the dense factorization path");
  bench_cmd->add_option("--exact-subset", bench_subset, "comparator subset size");
  bench_cmd->add_option("--seed", bench_seed, "seed for subset and sketches");
  bench_cmd->add_option("--err", bench_err, "error metric");
  bench_cmd->add_option("--out", bench_out, "CSV output path");

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    spec.family = family_from_string(gen_family);
    spec.theta_seed = gen_seed;
    spec.data_seed = gen_seed + 0x9e3779b97f4a7c15ULL;
    const SyntheticData synth = gen_synthetic(spec);
    save_libsvm(gen_out, synth.data);
    std::printf("wrote %lld x %lld %s dataset to %s\n",
                static_cast<long long>(synth.data.n()),
                static_cast<long long>(synth.data.d()), gen_family.c_str(), gen_out.c_str());
    return 0;
  }

  if (fit_cmd->parsed()) {
    const GlmFamily family = family_from_string(fit_flags.family);
    const Dataset data = load_input(fit_flags.input, family, fit_flags.csv_label);
    SolverOptions opts;
    opts.tol = fit_tol;
    StopWatch w;
    const FitState fs = fit(data, family, fit_flags.lambda, opts);
    write_fit_report(fit_out, fs, family, w.seconds(), fit_tol);
    std::printf("fit: %d iterations, grad_norm %.3e -> %s\n", fs.iterations, fs.grad_norm,
                fit_out.c_str());
    return 0;
  }

  for (int i = 0; i < 2; ++i) {
    if (!acv_cmds[i]->parsed()) continue;
    const auto& f = acv_flags[i];
    RunConfig cfg;
    cfg.family = family_from_string(f.common.family);
    cfg.lambda = f.common.lambda;
    cfg.method = method_from_string(f.method);
    cfg.qn_source = qn_choice_from_string(f.qn);
    if (f.k != "auto") cfg.k = parse_int_flag(f.k, "sketch size K");
    cfg.power = f.power;
    if (f.nu > 0) cfg.nu = f.nu;
    cfg.neumann_s = f.neumann_s;
    cfg.neumann_m = f.neumann_m;
    cfg.seed = f.seed;
    cfg.metric = metric_from_string(f.err);
    cfg.policy = parse_policy(f.policy);
    cfg.reroute_fallback = !f.no_reroute;
    cfg.exact_subset = f.exact_subset;
    cfg.fit_tol = f.fit_tol;
    cfg.cv_tol = f.cv_tol;
    cfg.threads = f.common.resolved_threads();
    cfg.save_sketch_path = f.save_sketch;
    cfg.load_sketch_path = f.load_sketch;
    const Dataset data = load_input(f.common.input, cfg.family, f.common.csv_label);
    const AcvReport rep = run_acv(data, cfg, f.output, i == 0 ? "acv" : "bounds");
    std::printf("%s: N=%lld D=%lld qn=%s fallback=%zu -> %s\n", rep.command.c_str(),
                static_cast<long long>(rep.n), static_cast<long long>(rep.d),
                rep.qn_source.c_str(), rep.fallback.size(), f.output.c_str());
    return 0;
  }

  if (exact_cmd->parsed()) {
    RunConfig cfg;
    cfg.family = family_from_string(exact_flags.family);
    cfg.lambda = exact_flags.lambda;
    cfg.metric = metric_from_string(exact_err);
    cfg.exact_subset = exact_subset;
    cfg.seed = exact_seed;
    cfg.fit_tol = exact_fit_tol;
    cfg.cv_tol = exact_cv_tol;
    cfg.threads = exact_flags.resolved_threads();
    const Dataset data = load_input(exact_flags.input, cfg.family, exact_flags.csv_label);
    const AcvReport rep = run_exact_cv(data, cfg, exact_out);
    std::printf("exact-cv: %zu folds, mean err %.6e -> %s\n", rep.exact_indices.size(),
                rep.summary["mean_err_exact"].get<double>(), exact_out.c_str());
    return 0;
  }

  if (bench_cmd->parsed()) {
    BenchConfig bc;
    bc.run.family = family_from_string(bench_flags.family);
    bc.run.lambda = bench_flags.lambda;
    bc.run.method = method_from_string(bench_method);
    bc.run.metric = metric_from_string(bench_err);
    bc.run.seed = bench_seed;
    bc.run.threads = bench_flags.resolved_threads();
    bc.k_grid = parse_grid(bench_k_grid);
    if (!bench_baseline.empty()) {
      if (bench_baseline != "neumann") {
        throw ConfigError("unknown baseline '" + bench_baseline + "'");
      }
      bc.s_grid = parse_grid(bench_s_grid);
      if (bc.s_grid.empty()) throw ConfigError("--baseline neumann requires --S-grid");
    }
    bc.m_grid = parse_grid(bench_m_grid);
    bc.with_exact_qn = bench_with_exact_qn;
    bc.subset = bench_subset;
    const Dataset data = load_input(bench_flags.input, bc.run.family, bench_flags.csv_label);
    const std::vector<BenchRow> rows = run_bench(data, bc);
    write_bench_csv(bench_out, rows);
    std::printf("bench: %zu rows -> %s\n", rows.size(), bench_out.c_str());
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const lracv::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const lracv::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const lracv::SolverError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 3;
  } catch (const lracv::NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 3;
  } catch (const lracv::IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
