#include "wmed/cli.hpp"

#include "wmed/experiments.hpp"
#include "wmed/io.hpp"
#include "wmed/plaplace.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <iostream>
#include <random>
#include <thread>

namespace wmed::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Context {
  std::ostream& out;
  std::ostream& err;
  bool quiet = false;

  void progress(const std::string& line) const {
    if (!quiet) err << line << '\n';
  }
};

struct UsageError : Error {
  using Error::Error;
};

int worker_threads() {
  if (const char* v = std::getenv(kThreadsEnv)) {
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (end != v && *end == '\0' && n > 0) return static_cast<int>(n);
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

std::string timestamp() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

Weights weights_or_uniform(const std::string& text, std::size_t n) {
  if (text.empty()) return Weights::uniform(static_cast<Index>(n));
  Weights w = io::parse_weights(text);
  if (w.size() != static_cast<Index>(n))
    throw UsageError("--weights has " + std::to_string(w.size()) + " entries for " + std::to_string(n) + " inputs");
  return w;
}

std::vector<double> to_vector(const Weights& w) { return {w.values().begin(), w.values().end()}; }

// ------------------------------------------------------------------ options

struct DROptions {
  double tau = 0.1;
  double relax = 1.0;
  double tol = 1e-7;
  int max_iter = 5000;
  double cg_tol = 1e-10;
  std::string linear = "cholesky";
  std::uint64_t seed = 0;

  void add(CLI::App* app, bool with_seed = true) {
    app->add_option("--tau", tau, "Douglas-Rachford step size")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--theta-relax", relax, "constant relaxation in (0, 2)")->capture_default_str();
    app->add_option("--tol", tol, "residual tolerance")->capture_default_str();
    app->add_option("--max-iter", max_iter, "iteration cap")->capture_default_str();
    app->add_option("--cg-tol", cg_tol, "relative tolerance of the linear solves")->capture_default_str();
    app->add_option("--linear-solver", linear, "cholesky or cg")
        ->capture_default_str()
        ->check(CLI::IsMember({"cholesky", "cg"}));
    if (with_seed) app->add_option("--seed", seed, "0 keeps the deterministic start")->capture_default_str();
  }

  DRParams params(const Context& ctx) const {
    DRParams p;
    p.tau = tau;
    const double r = relax;
    p.relaxation = [r](int) { return r; };
    p.tol = tol;
    p.max_iter = max_iter;
    p.cg_tol = cg_tol;
    p.linear_solver = linear == "cg" ? EllipticMethod::conjugate_gradient : EllipticMethod::cholesky;
    p.seed = seed;
    if (!ctx.quiet) {
      std::ostream* e = &ctx.err;
      p.on_iteration = [e](int k, double res) {
        if (k % 100 == 0) *e << "iter " << k << " residual " << res << '\n';
      };
    }
    return p;
  }
};

// ------------------------------------------------------------------ median1d

struct Median1DCmd {
  std::vector<std::string> inputs;
  std::string weights;
  double theta = 0.5;
  std::string selection = "vertical";
  std::string out;

  void add(CLI::App* app) {
    app->add_option("--inputs", inputs, "1D measure CSV files")->required()->check(CLI::ExistingFile);
    app->add_option("--weights", weights, "comma-separated weights or a file (default uniform)");
    app->add_option("--theta", theta, "interpolation between m- and m+")->capture_default_str()->check(CLI::Range(0.0, 1.0));
    app->add_option("--selection", selection, "vertical or horizontal")
        ->capture_default_str()
        ->check(CLI::IsMember({"vertical", "horizontal"}));
    app->add_option("--out", out, "output CSV")->required();
  }

  int run(const Context& ctx) const {
    std::vector<Measure1D> samples;
    for (const auto& f : inputs) samples.push_back(io::read_measure1d_csv(f));
    const Weights lambda = weights_or_uniform(weights, samples.size());
    const Selection sel{selection == "vertical" ? SelectionKind::vertical : SelectionKind::horizontal, theta};
    const Measure1D m = select_median(sel, lambda, samples);
    io::write_measure1d_csv(out, m);
    ctx.out << json{{"command", "median1d"},
                    {"out", out},
                    {"selection", selection},
                    {"theta", theta},
                    {"weights", to_vector(lambda)},
                    {"dispersion", dispersion(lambda, samples, m)},
                    {"unique", selection_is_unique(lambda)},
                    {"verified", verify_median_1d(lambda, samples, m)}}
                   .dump()
            << '\n';
    return kOk;
  }
};

// ------------------------------------------------------------------ median2d

std::vector<ScalarField> load_grid_inputs(const std::vector<std::string>& inputs) {
  std::vector<ScalarField> s;
  for (const auto& f : inputs) s.push_back(io::read_grid_measure(f));
  for (const auto& x : s)
    if (x.rows() != s.front().rows() || x.cols() != s.front().cols() || x.rows() != x.cols())
      throw UsageError("inputs must be square grids of one size");
  return s;
}

json moment_json(const ScalarField& median, std::span<const ScalarField> samples) {
  json j = json::array();
  for (double p : {1.0, 2.0}) {
    const MomentReport m = moment_bound_check(median, samples, p);
    j.push_back({{"p", p},
                 {"median_moment", m.median_moment},
                 {"sample_moments", m.sample_moments},
                 {"moment_ok", m.moment_ok},
                 {"hull_ok", m.hull_ok},
                 {"mass_outside_hull", m.mass_outside_hull}});
  }
  return j;
}

struct Median2DCmd {
  std::vector<std::string> inputs;
  std::string weights;
  std::string out;
  DROptions dr;

  void add(CLI::App* app) {
    app->add_option("--inputs", inputs, "PGM or CSV grid measures")->required()->check(CLI::ExistingFile);
    app->add_option("--weights", weights, "comma-separated weights or a file (default uniform)");
    app->add_option("--out", out, "output directory")->required();
    dr.add(app);
  }

  int run(const Context& ctx) const {
    const std::vector<ScalarField> samples = load_grid_inputs(inputs);
    const Weights lambda = weights_or_uniform(weights, samples.size());
    const DRParams params = dr.params(ctx);
    MedianSolution sol;
    bool converged = true;
    try {
      sol = solve_median(samples, lambda, params);
    } catch (const MedianNoConvergence& e) {
      sol = e.partial();
      converged = false;
      ctx.err << "warning: " << e.what() << " (writing partial outputs)\n";
    }
    const fs::path dir(out);
    io::write_pgm(dir / "median.pgm", sol.median);
    io::write_matrix_csv(dir / "median.csv", sol.median);
    for (std::size_t q = 0; q < samples.size(); ++q) {
      const std::string tag = std::to_string(q);
      io::write_matrix_csv(dir / ("density_" + tag + ".csv"), sol.flows[q].magnitude());
      io::write_flow_csv(dir / ("flow_" + tag), sol.flows[q]);
      if (q < sol.potentials.size()) io::write_matrix_csv(dir / ("potential_" + tag + ".csv"), sol.potentials[q]);
    }
    std::vector<double> iter, res, primal;
    for (std::size_t k = 0; k < sol.residual_history.size(); ++k) {
      iter.push_back(static_cast<double>(k + 1));
      res.push_back(sol.residual_history[k]);
      primal.push_back(k < sol.primal_history.size() ? sol.primal_history[k] : NAN);
    }
    io::write_table_csv(dir / "history.csv", {"iter", "residual", "primal_value"}, {iter, res, primal});

    const MKReport mk = mk_residuals(sol, samples, lambda);
    const json run = {{"command", "median2d"},
                      {"inputs", inputs},
                      {"weights", to_vector(lambda)},
                      {"grid", samples.front().rows()},
                      {"params", to_json(params)},
                      {"iterations", sol.iterations},
                      {"final_residual", sol.final_residual},
                      {"converged", converged},
                      {"primal_value", sol.primal_value},
                      {"mk",
                       {{"constraint_residuals", mk.constraint_residuals},
                        {"off_unit_fraction", mk.off_unit_fraction},
                        {"dual_value", mk.dual_value},
                        {"complementarity_gap", mk.complementarity_gap}}},
                      {"moments", moment_json(sol.median, samples)},
                      {"timestamp", timestamp()}};
    io::write_json(dir / "run.json", run);
    ctx.out << json{{"command", "median2d"},
                    {"out", out},
                    {"iterations", sol.iterations},
                    {"final_residual", sol.final_residual},
                    {"primal_value", sol.primal_value},
                    {"converged", converged}}
                   .dump()
            << '\n';
    return converged ? kOk : kNoConvergence;
  }
};

// ------------------------------------------------------------------ plaplace

struct PLaplaceCmd {
  std::vector<std::string> inputs;
  std::string weights;
  std::string out;
  double epsilon = 1e-2;
  double p = 4.0;
  std::string method = "newton";
  double tol = 1e-7;
  int max_iter = 100000;

  void add(CLI::App* app) {
    app->add_option("--inputs", inputs, "PGM or CSV grid measures")->required()->check(CLI::ExistingFile);
    app->add_option("--weights", weights, "comma-separated weights or a file (default uniform)");
    app->add_option("--out", out, "output directory")->required();
    app->add_option("--epsilon", epsilon, "penalty parameter")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--p", p, "exponent >= 2")->capture_default_str();
    app->add_option("--method", method, "newton, lbfgs or gradient")
        ->capture_default_str()
        ->check(CLI::IsMember({"newton", "lbfgs", "gradient"}));
    app->add_option("--tol", tol, "projected gradient tolerance")->capture_default_str();
    app->add_option("--max-iter", max_iter, "iteration cap")->capture_default_str();
  }

  int run(const Context& ctx) const {
    const std::vector<ScalarField> samples = load_grid_inputs(inputs);
    const Weights lambda = weights_or_uniform(weights, samples.size());
    PLaplaceParams params;
    params.epsilon = epsilon;
    params.p_eps = p;
    params.tol = tol;
    params.max_iter = max_iter;
    params.method = method == "newton"  ? DescentMethod::newton
                    : method == "lbfgs" ? DescentMethod::lbfgs
                                        : DescentMethod::gradient;
    std::vector<double> it, jv, gn;
    params.on_iteration = [&](int k, double j, double g) {
      it.push_back(k);
      jv.push_back(j);
      gn.push_back(g);
      if (!ctx.quiet && k % 50 == 0) ctx.err << "iter " << k << " J " << j << " |g| " << g << '\n';
    };
    PLaplaceResult r;
    bool converged = true;
    try {
      r = minimize_j_eps(samples, lambda, params);
    } catch (const PLaplaceNoConvergence& e) {
      r = e.partial();
      converged = false;
      ctx.err << "warning: " << e.what() << " (writing partial outputs)\n";
    }
    const fs::path dir(out);
    io::write_pgm(dir / "nu_eps.pgm", r.eps.nu);
    io::write_matrix_csv(dir / "nu_eps.csv", r.eps.nu);
    for (std::size_t q = 0; q < samples.size(); ++q) {
      const std::string tag = std::to_string(q);
      io::write_flow_csv(dir / ("flow_" + tag), r.eps.flows[q]);
      io::write_matrix_csv(dir / ("potential_" + tag + ".csv"), r.u[q]);
    }
    io::write_table_csv(dir / "history.csv", {"iter", "j", "gradient_norm"}, {it, jv, gn});
    const PLaplaceReport& rep = r.report;
    const json run = {{"command", "plaplace"},
                      {"inputs", inputs},
                      {"weights", to_vector(lambda)},
                      {"epsilon", rep.epsilon},
                      {"p", rep.p_eps},
                      {"method", method},
                      {"tol", tol},
                      {"iterations", rep.iterations},
                      {"converged", converged},
                      {"j", rep.j_history.empty() ? NAN : rep.j_history.back()},
                      {"gradient_norm", rep.gradient_norm},
                      {"weak_residual", rep.weak_residual},
                      {"block_residual", rep.block_residual},
                      {"flux_residual", rep.flux_residual},
                      {"mass", rep.mass},
                      {"obstacle", rep.obstacle},
                      {"timestamp", timestamp()}};
    io::write_json(dir / "run.json", run);
    ctx.out << json{{"command", "plaplace"},   {"out", out},           {"iterations", rep.iterations},
                    {"mass", rep.mass},        {"converged", converged}, {"gradient_norm", rep.gradient_norm}}
                   .dump()
            << '\n';
    return converged ? kOk : kNoConvergence;
  }
};

// ------------------------------------------------------------------ experiments

Measure1D random_atomic(std::mt19937_64& rng, int atoms) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x, m;
  double total = 0.0;
  for (int k = 0; k < atoms; ++k) {
    x.push_back(2.0 * u(rng) - 1.0);
    m.push_back(0.1 + u(rng));
    total += m.back();
  }
  for (double& v : m) v /= total;
  return Measure1D::atomic(x, m);
}

ScalarField gaussian(Index p, const Eigen::Vector2d& c, double r) {
  ScalarField f(p, p);
  const double h = 1.0 / static_cast<double>(p);
  for (Index j = 0; j < p; ++j)
    for (Index i = 0; i < p; ++i) {
      const Eigen::Vector2d x((i + 0.5) * h, (j + 0.5) * h);
      f(i, j) = std::exp(-(x - c).squaredNorm() / (2 * r * r));
    }
  return f / f.sum();
}

// Blobs with centres in [0.1, 0.3] x [0.3, 0.7] of the unit square.
std::vector<Eigen::Vector2d> blob_centres(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> ux(0.1, 0.3), uy(0.3, 0.7);
  std::vector<Eigen::Vector2d> c;
  for (int i = 0; i < n; ++i) c.emplace_back(ux(rng), uy(rng));
  return c;
}

struct ExperimentCommon {
  std::string out;
  std::uint64_t seed = 1;
  int n = 3;
  std::string mode = "1d";
  std::string weights;
  Index grid = 64;

  void add(CLI::App* app, Index default_grid) {
    grid = default_grid;
    app->add_option("--out", out, "output directory (report.json, report.csv)");
    app->add_option("--seed", seed, "instance seed")->capture_default_str();
    app->add_option("--n", n, "number of samples")->capture_default_str()->check(CLI::Range(2, 30));
    app->add_option("--mode", mode, "1d (exact) or 2d (Douglas-Rachford)")
        ->capture_default_str()
        ->check(CLI::IsMember({"1d", "2d"}));
    app->add_option("--weights", weights, "comma-separated weights or a file (default uniform)");
    app->add_option("--grid", grid, "grid side for 2d runs")->capture_default_str()->check(CLI::Range(4, 4096));
  }

  ExperimentSpec spec(const std::string& name, json generator, json solver) const {
    return {name, std::move(generator), std::move(solver), seed};
  }
};

void emit(const Context& ctx, const std::string& out, const json& report, const std::string& csv, json summary) {
  if (!out.empty()) {
    io::write_json(fs::path(out) / "report.json", report);
    if (!csv.empty()) io::write_text_atomic(fs::path(out) / "report.csv", csv);
    summary["out"] = out;
  }
  ctx.out << summary.dump() << '\n';
}

struct BreakdownCmd {
  ExperimentCommon common;
  int corrupt = 1;
  double dmax = -1.0;
  int steps = 7;
  int atoms = 6;
  DROptions dr;

  void add(CLI::App* app) {
    common.add(app, 64);
    app->add_option("--corrupt", corrupt, "number of corrupted samples (the first ones)")->capture_default_str();
    app->add_option("--dmax", dmax, "largest displacement (default 1e6 in 1d, 0.7 in 2d)");
    app->add_option("--steps", steps, "number of displacements")->capture_default_str()->check(CLI::Range(1, 100));
    app->add_option("--atoms", atoms, "atoms per 1d sample")->capture_default_str()->check(CLI::Range(1, 10000));
    dr.tau = 0.3;
    dr.add(app, false);
  }

  int run(const Context& ctx) const {
    if (corrupt < 1 || corrupt > common.n) throw UsageError("--corrupt must lie in [1, n]");
    std::vector<Index> idx;
    for (int k = 0; k < corrupt; ++k) idx.push_back(k);
    const Weights lambda = weights_or_uniform(common.weights, static_cast<std::size_t>(common.n));
    std::mt19937_64 rng(common.seed);
    BreakdownReport r;
    json generator;
    json solver;
    std::vector<double> d;
    if (common.mode == "1d") {
      const double top = dmax > 0.0 ? dmax : 1e6;
      d.push_back(0.0);
      for (int k = 0; k < steps; ++k)
        d.push_back(steps == 1 ? top : std::pow(top, static_cast<double>(k) / (steps - 1)));
      std::vector<Measure1D> samples;
      for (int i = 0; i < common.n; ++i) samples.push_back(random_atomic(rng, atoms));
      ctx.progress("breakdown 1d: " + std::to_string(d.size()) + " displacements");
      r = breakdown_sweep_1d(samples, lambda, idx, d);
      generator = {{"kind", "random atomic on [-1, 1]"}, {"atoms", atoms}, {"n", common.n}};
    } else {
      const double top = dmax > 0.0 ? dmax : 0.7;
      for (int k = 1; k <= steps; ++k) d.push_back(top * k / steps);
      const auto centres = blob_centres(rng, common.n);
      std::vector<ScalarField> samples;
      Eigen::Vector2d anchor = Eigen::Vector2d::Zero();
      for (const auto& c : centres) {
        samples.push_back(gaussian(common.grid, c, 0.04));
        anchor += c / static_cast<double>(centres.size());
      }
      Breakdown2DOptions opt;
      opt.anchor = anchor;
      opt.solver = dr.params(Context{ctx.out, ctx.err, true});
      opt.threads = worker_threads();
      ctx.progress("breakdown 2d: " + std::to_string(d.size()) + " corrupted solves on " +
                   std::to_string(opt.threads) + " threads");
      r = breakdown_sweep_2d(samples, lambda, idx, d, opt);
      generator = {{"kind", "gaussian blobs, radius 0.04"}, {"grid", common.grid}, {"n", common.n}};
      solver = to_json(opt.solver);
    }
    json report = to_json(r);
    report["spec"] = to_json(common.spec("breakdown", generator, solver));
    emit(ctx, common.out, report, breakdown_csv(r),
         {{"command", "experiment breakdown"},
          {"mode", common.mode},
          {"passed", r.passed},
          {"bounded_regime", r.bounded_regime},
          {"C", r.spread},
          {"rows", r.rows.size()}});
    return r.passed ? kOk : kCheckFailed;
  }
};

struct StabilityCmd {
  ExperimentCommon common;
  double scale = 0.1;
  std::vector<double> scales{0.0, 0.1, 0.2, 0.4};
  int trials = 100;
  double theta = 0.5;
  int atoms = 6;
  DROptions dr;

  void add(CLI::App* app) {
    common.add(app, 16);
    app->add_option("--scale", scale, "1d perturbation scale")->capture_default_str();
    app->add_option("--scales", scales, "2d mixing scales in [0, 1]")->capture_default_str();
    app->add_option("--trials", trials, "number of trials")->capture_default_str()->check(CLI::Range(1, 1000000));
    app->add_option("--theta", theta, "selection interpolation")->capture_default_str()->check(CLI::Range(0.0, 1.0));
    app->add_option("--atoms", atoms, "atoms per 1d sample")->capture_default_str()->check(CLI::Range(1, 10000));
    dr.tau = 0.5;
    dr.tol = 1e-9;
    dr.max_iter = 20000;
    dr.add(app, false);
  }

  int run(const Context& ctx) const {
    const Weights lambda = weights_or_uniform(common.weights, static_cast<std::size_t>(common.n));
    std::mt19937_64 rng(common.seed);
    if (common.mode == "1d") {
      std::vector<Measure1D> samples;
      for (int i = 0; i < common.n; ++i) samples.push_back(random_atomic(rng, atoms));
      const std::vector<Selection> sels{{SelectionKind::vertical, theta}, {SelectionKind::horizontal, theta}};
      const StabilityReport1D r = stability_probe_1d(samples, lambda, scale, sels, trials, common.seed);
      json report = to_json(r);
      report["spec"] = to_json(common.spec("stability", {{"kind", "random atomic on [-1, 1]"}, {"atoms", atoms}}, {}));
      emit(ctx, common.out, report, "",
           {{"command", "experiment stability"},
            {"mode", "1d"},
            {"passed", r.passed},
            {"violations", r.violations},
            {"worst_ratio", r.worst_ratio}});
      return r.passed ? kOk : kCheckFailed;
    }
    std::vector<ScalarField> samples;
    for (const auto& c : blob_centres(rng, common.n)) samples.push_back(gaussian(common.grid, c, 0.08));
    const DRParams params = dr.params(Context{ctx.out, ctx.err, true});
    ctx.progress("stability 2d: " + std::to_string(trials * scales.size()) + " solves");
    const StabilityReport2D r = stability_trend_2d(samples, lambda, scales, trials, common.seed, params);
    json report = to_json(r);
    report["spec"] =
        to_json(common.spec("stability", {{"kind", "gaussian blobs, radius 0.08"}, {"grid", common.grid}}, to_json(params)));
    std::ostringstream csv;
    csv.precision(17);
    csv << "scale,mean_movement,mean_rhs\n";
    for (std::size_t k = 0; k < r.scales.size(); ++k)
      csv << r.scales[k] << ',' << r.mean_movement[k] << ',' << r.mean_rhs[k] << '\n';
    emit(ctx, common.out, report, csv.str(),
         {{"command", "experiment stability"}, {"mode", "2d"}, {"nondecreasing", r.nondecreasing}});
    return kOk;
  }
};

struct QuadrilateralCmd {
  std::string out;
  double epsilon = 0.2;
  double ell = 0.6;
  Index grid = 128;
  DROptions dr;

  void add(CLI::App* app) {
    app->add_option("--out", out, "output directory (report.json, median.pgm)");
    app->add_option("--epsilon", epsilon, "rectangle width in (0, 1)")->capture_default_str();
    app->add_option("--ell", ell, "rectangle length")->capture_default_str();
    app->add_option("--grid", grid, "grid side")->capture_default_str()->check(CLI::Range(4, 4096));
    dr.tau = 0.5;
    dr.add(app);
  }

  int run(const Context& ctx) const {
    MedianSolution sol;
    const QuadrilateralReport r = quadrilateral_counterexample(epsilon, ell, grid, dr.params(ctx), &sol);
    json report = to_json(r);
    if (!out.empty()) {
      io::write_pgm(fs::path(out) / "median.pgm", sol.median);
      const QuadrilateralInstance inst = quadrilateral_instance(epsilon, ell, grid);
      ScalarField all = ScalarField::Zero(grid, grid);
      for (const auto& s : inst.samples) all += s / 4.0;
      io::write_pgm(fs::path(out) / "samples.pgm", all);
    }
    emit(ctx, out, report, "",
         {{"command", "experiment quadrilateral"},
          {"central_mass", r.central_mass},
          {"ratio", r.ratio},
          {"converged", r.converged}});
    return r.converged ? kOk : kNoConvergence;
  }
};

// ------------------------------------------------------------------ verify

struct VerifyCmd {
  std::string kind = "1d";
  std::vector<std::string> inputs;
  std::string weights;
  std::string candidate;
  std::string run_dir;
  double tol = 1e-10;

  void add(CLI::App* app) {
    app->add_option("--kind", kind, "1d or 2d")->capture_default_str()->check(CLI::IsMember({"1d", "2d"}));
    app->add_option("--inputs", inputs, "sample files")->required()->check(CLI::ExistingFile);
    app->add_option("--weights", weights, "comma-separated weights or a file (default uniform)");
    app->add_option("--candidate", candidate, "1d: candidate median CSV")->check(CLI::ExistingFile);
    app->add_option("--run-dir", run_dir, "2d: output directory of median2d")->check(CLI::ExistingDirectory);
    app->add_option("--tol", tol, "1d CDF tolerance")->capture_default_str();
  }

  int run(const Context& ctx) const {
    if (kind == "1d") {
      if (candidate.empty()) throw UsageError("verify --kind 1d needs --candidate");
      std::vector<Measure1D> samples;
      for (const auto& f : inputs) samples.push_back(io::read_measure1d_csv(f));
      const Weights lambda = weights_or_uniform(weights, samples.size());
      const Measure1D m = io::read_measure1d_csv(candidate);
      const bool ok = verify_median_1d(lambda, samples, m, tol);
      ctx.out << json{{"command", "verify"},
                      {"kind", "1d"},
                      {"valid", ok},
                      {"dispersion", dispersion(lambda, samples, m)},
                      {"reference_dispersion", dispersion(lambda, samples, vertical_selection(lambda, samples, 0.5))}}
                     .dump()
              << '\n';
      return ok ? kOk : kCheckFailed;
    }
    if (run_dir.empty()) throw UsageError("verify --kind 2d needs --run-dir");
    const std::vector<ScalarField> samples = load_grid_inputs(inputs);
    const Weights lambda = weights_or_uniform(weights, samples.size());
    const fs::path dir(run_dir);
    MedianSolution sol;
    sol.median = io::read_matrix_csv(dir / "median.csv");
    for (std::size_t q = 0; q < samples.size(); ++q) {
      const std::string tag = std::to_string(q);
      sol.flows.push_back(io::read_flow_csv(dir / ("flow_" + tag)));
      if (fs::exists(dir / ("potential_" + tag + ".csv")))
        sol.potentials.push_back(io::read_matrix_csv(dir / ("potential_" + tag + ".csv")));
      if (sol.flows.back().x.rows() != samples.front().rows()) throw UsageError("run directory grid differs from inputs");
    }
    if (sol.potentials.size() != samples.size()) sol.potentials.clear();
    sol.primal_value = primal_value(sol.flows, lambda);
    const MKReport mk = mk_residuals(sol, samples, lambda);
    const double lower = dual_lower_bound(sol, samples, lambda);
    const bool measure_ok = is_grid_measure(sol.median, 1e-9);
    const bool ok = measure_ok && mk.max_constraint_residual() <= 1e-6;
    ctx.out << json{{"command", "verify"},
                    {"kind", "2d"},
                    {"valid", ok},
                    {"is_measure", measure_ok},
                    {"max_constraint_residual", mk.max_constraint_residual()},
                    {"primal_value", sol.primal_value},
                    {"dual_lower_bound", lower},
                    {"off_unit_fraction", mk.off_unit_fraction},
                    {"moments", moment_json(sol.median, samples)}}
                   .dump()
            << '\n';
    return ok ? kOk : kCheckFailed;
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Wasserstein medians: exact 1D selections, grid medians, p-Laplace approximation, experiments"};
  app.name("wmed");
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("--quiet", quiet, "suppress progress lines");

  Median1DCmd m1;
  Median2DCmd m2;
  PLaplaceCmd pl;
  BreakdownCmd bd;
  StabilityCmd st;
  QuadrilateralCmd qd;
  VerifyCmd vf;
  auto* c_m1 = app.add_subcommand("median1d", "median selection of 1D measures");
  auto* c_m2 = app.add_subcommand("median2d", "Douglas-Rachford median on a grid");
  auto* c_pl = app.add_subcommand("plaplace", "penalized p-Laplace approximation");
  auto* c_ex = app.add_subcommand("experiment", "experiment suites");
  auto* c_vf = app.add_subcommand("verify", "check a 1D median or a median2d run");
  c_ex->require_subcommand(1);
  auto* c_bd = c_ex->add_subcommand("breakdown", "corruption sweeps against the breakdown bound");
  auto* c_st = c_ex->add_subcommand("stability", "Lipschitz stability of selections (1d) or trend (2d)");
  auto* c_qd = c_ex->add_subcommand("quadrilateral", "four-rectangle instance");
  m1.add(c_m1);
  m2.add(c_m2);
  pl.add(c_pl);
  bd.add(c_bd);
  st.add(c_st);
  qd.add(c_qd);
  vf.add(c_vf);
  for (auto* sub : {c_m1, c_m2, c_pl, c_ex, c_vf, c_bd, c_st, c_qd}) sub->fallthrough();

  std::vector<std::string> argv{"wmed"};
  argv.insert(argv.end(), args.begin(), args.end());
  std::vector<char*> ptrs;
  for (auto& a : argv) ptrs.push_back(a.data());
  try {
    app.parse(static_cast<int>(ptrs.size()), ptrs.data());
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }

  const Context ctx{out, err, quiet};
  try {
    if (c_m1->parsed()) return m1.run(ctx);
    if (c_m2->parsed()) return m2.run(ctx);
    if (c_pl->parsed()) return pl.run(ctx);
    if (c_bd->parsed()) return bd.run(ctx);
    if (c_st->parsed()) return st.run(ctx);
    if (c_qd->parsed()) return qd.run(ctx);
    if (c_vf->parsed()) return vf.run(ctx);
  } catch (const NoConvergence& e) {
    err << "error: " << e.what() << '\n';
    return kNoConvergence;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::length_error& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return run(args, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace wmed::cli
