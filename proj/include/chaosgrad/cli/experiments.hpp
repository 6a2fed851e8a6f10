#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "chaosgrad/cli/config.hpp"
#include "chaosgrad/cli/output.hpp"
#include "chaosgrad/cli/registry.hpp"
#include "chaosgrad/core/error.hpp"
#include "chaosgrad/core/rng.hpp"
#include "chaosgrad/estimators.hpp"
#include "chaosgrad/spectrum/diagnostics.hpp"
#include "chaosgrad/systems/random_matrix.hpp"
#include "chaosgrad/systems/unroll.hpp"

namespace chaosgrad::cli {

namespace fs = std::filesystem;

struct RunOptions {
  fs::path out_dir;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

/// A parsed experiment: every config key has been consumed, `run` does the
/// work and returns the artifact file names written under the output
/// directory.
struct Experiment {
  std::function<std::vector<std::string>(const RunOptions&)> run;
};

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {
      "figure1", "spectrum", "truncation-sweep", "matprod-variance",
      "pde-stability", "loss-slice", "lyapunov"};
  return names;
}

namespace detail {

inline std::vector<double> default_theta_grid() {
  std::vector<double> g(201);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = -10.0 + 0.1 * static_cast<double>(i);
  g.back() = 10.0;
  return g;
}

inline void require_nonempty(const std::vector<double>& v, const std::string& key) {
  if (v.empty()) throw ConfigError("'" + key + "' must not be empty");
}

inline void require_nonempty(const std::vector<std::size_t>& v, const std::string& key) {
  if (v.empty()) throw ConfigError("'" + key + "' must not be empty");
}

inline double nan() { return std::numeric_limits<double>::quiet_NaN(); }

}  // namespace detail

// ---------------------------------------------------------------------------
// figure1: raw vs smoothed sinusoid loss, reparam vs es variance

inline Experiment make_figure1(Config& cfg) {
  struct Params {
    std::vector<double> ws, thetas;
    double sigma;
    std::size_t samples, steps;
    bool antithetic;
  } p;
  p.ws = cfg.get_doubles("sweep.w", std::vector<double>{1, 2, 4, 8, 16, 32, 64});
  p.thetas = cfg.get_doubles("sweep.theta", detail::default_theta_grid());
  p.sigma = cfg.get_double("estimator.sigma", 0.3);
  p.samples = cfg.get_size("estimator.samples", 10000);
  p.antithetic = cfg.get_bool("estimator.antithetic", true);
  p.steps = cfg.get_size("unroll.steps", 1);
  detail::require_nonempty(p.ws, "sweep.w");
  detail::require_nonempty(p.thetas, "sweep.theta");
  for (double w : p.ws) {
    if (!(w > 0.0)) throw ConfigError("sweep.w entries must be positive");
  }
  if (p.steps < 1) throw ConfigError("unroll.steps must be at least 1");
  try {
    estimators::SmoothingConfig{p.sigma, p.samples, p.antithetic, 0}.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }

  return {[p](const RunOptions& opt) {
    struct Cell {
      double raw, smoothed, reparam_var, es_var;
    };
    const std::size_t nw = p.ws.size(), nt = p.thetas.size();
    std::vector<systems::SystemSpec> systems_by_w;
    for (double w : p.ws) systems_by_w.push_back(systems::make_sinusoid_loss(w));
    std::vector<Cell> cells(nw * nt);
    parallel_for(cells.size(), opt.threads, [&](std::size_t idx) {
      const std::size_t i = idx / nt, j = idx % nt;
      const auto& sys = systems_by_w[i];
      const Vector theta{p.thetas[j]};
      const estimators::SmoothingConfig sc{p.sigma, p.samples, p.antithetic,
                                           derive_seed(opt.seed, i, j)};
      Cell c;
      c.raw = systems::mean_unrolled_loss(sys, theta, sys.default_s0, p.steps);
      c.smoothed = estimators::smoothed_loss_estimate(sys, theta, sys.default_s0, p.steps, sc).mean;
      c.reparam_var =
          estimators::reparam_smoothed_gradient(sys, theta, sys.default_s0, p.steps, sc).max_variance;
      c.es_var = p.sigma > 0.0
                     ? estimators::blackbox_es_gradient(sys, theta, sys.default_s0, p.steps, sc)
                           .max_variance
                     : detail::nan();
      cells[idx] = c;
    });

    CsvWriter curves(opt.out_dir / "loss_curves.csv", {"w", "theta", "raw_loss", "smoothed_loss"});
    CsvWriter var(opt.out_dir / "variance.csv", {"w", "estimator", "max_variance"});
    for (std::size_t i = 0; i < nw; ++i) {
      double rmax = -1.0, emax = -1.0;
      bool es_nan = false;
      for (std::size_t j = 0; j < nt; ++j) {
        const Cell& c = cells[i * nt + j];
        curves.row(p.ws[i], p.thetas[j], c.raw, c.smoothed);
        rmax = std::max(rmax, c.reparam_var);
        es_nan = es_nan || std::isnan(c.es_var);
        emax = std::max(emax, c.es_var);
      }
      var.row(p.ws[i], "reparam", rmax);
      var.row(p.ws[i], "es", es_nan ? detail::nan() : emax);
    }
    curves.close();
    var.close();
    return std::vector<std::string>{"loss_curves.csv", "variance.csv"};
  }};
}

// ---------------------------------------------------------------------------
// spectrum: per-step spectra, cumulative growth and gradient norms per label

inline Experiment make_spectrum(Config& cfg) {
  BoundSystem bound = build_system(cfg);
  struct Label {
    std::string name;
    Vector theta, s0;
  };
  std::vector<Label> labels;
  for (const auto& name : cfg.get_strings("spectrum.labels", std::vector<std::string>{"stable", "unstable"})) {
    Label l{name, cfg.get_doubles("spectrum.theta." + name, bound.theta),
            cfg.get_doubles("spectrum.s0." + name, bound.s0)};
    try {
      bound.spec.check_dims(l.theta, l.s0);
    } catch (const DimensionError& e) {
      throw ConfigError("label '" + name + "': " + e.what());
    }
    labels.push_back(std::move(l));
  }
  if (labels.empty()) throw ConfigError("spectrum.labels must not be empty");
  const std::size_t steps = cfg.get_size("unroll.steps", 100);
  const std::size_t grad_max = cfg.get_size("spectrum.gradnorm_max_n", steps);
  if (steps < 1) throw ConfigError("unroll.steps must be at least 1");

  return {[bound, labels, steps, grad_max](const RunOptions& opt) {
    struct Result {
      spectrum::SpectrumReport per_step;
      std::vector<double> cumulative;
      std::vector<double> grad_norms;
    };
    std::vector<Result> results(labels.size());
    parallel_for(labels.size(), opt.threads, [&](std::size_t i) {
      const auto& l = labels[i];
      const auto traj = systems::unroll(bound.spec, l.theta, l.s0, steps, true);
      results[i].per_step = spectrum::per_step_spectra(traj);
      results[i].cumulative = spectrum::cumulative_log_max_modulus(traj.state_jacobians);
      if (bound.spec.param_dim == 0) {
        results[i].grad_norms.assign(grad_max, 0.0);
      } else if (grad_max > 0) {
        results[i].grad_norms = spectrum::gradient_norm_curve(bound.spec, l.theta, l.s0, grad_max).norms;
      }
    });

    CsvWriter eig(opt.out_dir / "per_step_spectrum.csv",
                  {"label", "step", "eig_real", "eig_imag", "modulus"});
    CsvWriter cum(opt.out_dir / "cumulative.csv", {"label", "step", "log_max_modulus"});
    CsvWriter grad(opt.out_dir / "gradnorm.csv", {"label", "N", "grad_norm"});
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto& r = results[i];
      for (std::size_t s = 0; s < r.per_step.per_step_eigenvalues.size(); ++s) {
        auto ev = r.per_step.per_step_eigenvalues[s];
        std::sort(ev.begin(), ev.end(), [](const spectrum::Complex& a, const spectrum::Complex& b) {
          return std::make_tuple(-std::abs(a), -a.real(), -a.imag()) <
                 std::make_tuple(-std::abs(b), -b.real(), -b.imag());
        });
        for (const auto& z : ev) eig.row(labels[i].name, s + 1, z.real(), z.imag(), std::abs(z));
      }
      for (std::size_t t = 0; t < r.cumulative.size(); ++t) {
        cum.row(labels[i].name, t + 1, r.cumulative[t]);
      }
      for (std::size_t n = 0; n < r.grad_norms.size(); ++n) {
        grad.row(labels[i].name, n + 1, r.grad_norms[n]);
      }
    }
    eig.close();
    cum.close();
    grad.close();
    return std::vector<std::string>{"per_step_spectrum.csv", "cumulative.csv", "gradnorm.csv"};
  }};
}

// ---------------------------------------------------------------------------
// truncation-sweep: gradient descent on theta with truncated gradients

struct TruncationRow {
  std::size_t outer_step;
  double loss;
  double grad_norm;
};

/// Plain gradient descent theta <- theta - lr g for `outer_steps` updates.
/// Rows cover outer steps 0..outer_steps; a non-finite loss or gradient ends
/// the run after its row is recorded.
inline std::vector<TruncationRow> truncated_descent(const systems::SystemSpec& sys, Vector theta,
                                                    std::span<const double> s0, std::size_t steps,
                                                    std::size_t truncation, std::size_t outer_steps,
                                                    double lr) {
  std::vector<TruncationRow> rows;
  for (std::size_t k = 0; k <= outer_steps; ++k) {
    const double loss = systems::mean_unrolled_loss(sys, theta, s0, steps);
    Vector g;
    double gn = std::numeric_limits<double>::infinity();
    try {
      g = estimators::truncated_gradient(sys, theta, s0, steps, {truncation});
      gn = norm2(g);
    } catch (const NonFiniteError&) {
    }
    rows.push_back({k, loss, gn});
    if (!std::isfinite(loss) || !std::isfinite(gn)) break;
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * g[i];
  }
  return rows;
}

inline Experiment make_truncation_sweep(Config& cfg) {
  BoundSystem bound = build_system(cfg, "sgd-unroll");
  if (bound.spec.param_dim == 0) throw ConfigError("truncation-sweep needs a system with parameters");
  const std::size_t steps = cfg.get_size("unroll.steps", 100);
  const auto lengths = cfg.get_sizes("sweep.truncation", std::vector<std::size_t>{1, 2, 5, steps});
  const std::size_t outer = cfg.get_size("optimizer.steps", 200);
  const double lr = cfg.get_double("optimizer.lr", 1e-3);
  detail::require_nonempty(lengths, "sweep.truncation");
  for (std::size_t t : lengths) {
    if (t < 1 || t > steps) throw ConfigError("sweep.truncation entries must lie in [1, unroll.steps]");
  }
  if (!(lr > 0.0)) throw ConfigError("optimizer.lr must be positive");

  return {[bound, steps, lengths, outer, lr](const RunOptions& opt) {
    std::vector<std::vector<TruncationRow>> runs(lengths.size());
    parallel_for(lengths.size(), opt.threads, [&](std::size_t i) {
      runs[i] = truncated_descent(bound.spec, bound.theta, bound.s0, steps, lengths[i], outer, lr);
    });
    CsvWriter csv(opt.out_dir / "truncation.csv",
                  {"truncation_length", "outer_step", "loss", "grad_norm"});
    for (std::size_t i = 0; i < lengths.size(); ++i) {
      for (const auto& r : runs[i]) csv.row(lengths[i], r.outer_step, r.loss, r.grad_norm);
    }
    csv.close();
    return std::vector<std::string>{"truncation.csv"};
  }};
}

// ---------------------------------------------------------------------------
// matprod-variance: determinant products of Gaussian matrices

inline Experiment make_matprod_variance(Config& cfg) {
  const auto ns = cfg.get_sizes("sweep.n", std::vector<std::size_t>{2});
  const auto ks = cfg.get_sizes("sweep.k", std::vector<std::size_t>{1, 2, 3});
  const auto sigmas = cfg.get_doubles("sweep.sigma", std::vector<double>{1.0});
  const std::size_t samples = cfg.get_size("matprod.samples", 1000000);
  detail::require_nonempty(ns, "sweep.n");
  detail::require_nonempty(ks, "sweep.k");
  detail::require_nonempty(sigmas, "sweep.sigma");
  std::vector<systems::GaussianMatrixConfig> grid;
  for (std::size_t n : ns) {
    for (std::size_t k : ks) {
      for (double s : sigmas) {
        systems::GaussianMatrixConfig c{n, s, k, samples, 0};
        try {
          c.validate();
        } catch (const DomainError& e) {
          throw ConfigError(e.what());
        }
        grid.push_back(c);
      }
    }
  }

  return {[grid](const RunOptions& opt) {
    std::vector<systems::DeterminantProductStats> stats(grid.size());
    parallel_for(grid.size(), opt.threads, [&](std::size_t i) {
      auto c = grid[i];
      c.seed = derive_seed(opt.seed, i);
      stats[i] = systems::gaussian_determinant_product(c);
    });
    CsvWriter csv(opt.out_dir / "detvar.csv", {"n", "k", "sigma", "mc_mean", "mc_variance",
                                               "mc_stderr", "paper_formula", "oracle_formula"});
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const auto& s = stats[i];
      csv.row(grid[i].n, grid[i].k, grid[i].sigma, s.mean, s.variance, s.variance_stderr,
              s.paper_formula, s.oracle_formula);
    }
    csv.close();
    return std::vector<std::string>{"detvar.csv"};
  }};
}

// ---------------------------------------------------------------------------
// pde-stability: criterion vs spectral radius over a grid

inline Experiment make_pde_stability(Config& cfg) {
  const auto alphas = cfg.get_doubles("sweep.alpha", std::vector<double>{1.0});
  const auto betas = cfg.get_doubles("sweep.beta", std::vector<double>{0.0});
  const auto dts = cfg.get_doubles("sweep.dt", std::vector<double>{0.0009765625, 0.0019140625, 0.001953125, 0.00234375});
  const auto dxs = cfg.get_doubles("sweep.dx", std::vector<double>{0.0625});
  const auto ns = cfg.get_sizes("sweep.n", std::vector<std::size_t>{16});
  for (const auto* v : {&alphas, &betas, &dts, &dxs}) {
    if (v->empty()) throw ConfigError("pde-stability sweep axes must not be empty");
  }
  detail::require_nonempty(ns, "sweep.n");
  std::vector<systems::PdeConfig> grid;
  for (double a : alphas) {
    for (double b : betas) {
      for (double dt : dts) {
        for (double dx : dxs) {
          for (std::size_t n : ns) {
            auto c = systems::PdeConfig::from_spacing(a, b, dt, dx, n);
            try {
              c.validate();
            } catch (const DomainError& e) {
              throw ConfigError(e.what());
            }
            if (n - 1 > spectrum::kMaxEigenDim) throw ConfigError("sweep.n exceeds the eigensolver limit");
            grid.push_back(std::move(c));
          }
        }
      }
    }
  }

  return {[grid](const RunOptions& opt) {
    std::vector<spectrum::PdeStability> res(grid.size());
    parallel_for(grid.size(), opt.threads,
                 [&](std::size_t i) { res[i] = spectrum::pde_stability_check(grid[i]); });
    CsvWriter csv(opt.out_dir / "pde.csv",
                  {"alpha", "beta", "dt", "dx", "n", "criterion_value", "criterion_satisfied",
                   "spectral_radius", "stable"});
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const auto& c = grid[i];
      csv.row(c.alpha, c.beta, c.dt, c.dx(), c.n, res[i].criterion_value,
              res[i].paper_criterion_satisfied, res[i].spectral_radius, res[i].stable);
    }
    csv.close();
    return std::vector<std::string>{"pde.csv"};
  }};
}

// ---------------------------------------------------------------------------
// loss-slice: 1-D projection of the loss along a random unit direction

/// Unit vector from normalized standard normals on stream (seed, 0).
inline Vector random_direction(std::uint64_t seed, std::size_t dim) {
  const CounterRng rng(seed, 0);
  Vector d(dim);
  for (std::size_t i = 0; i < dim; ++i) d[i] = rng.normal_at(i);
  const double n = norm2(d);
  for (double& x : d) x /= n;
  return d;
}

inline Experiment make_loss_slice(Config& cfg) {
  BoundSystem bound = build_system(cfg);
  if (bound.spec.param_dim == 0) throw ConfigError("loss-slice needs a system with parameters");
  const auto shifts = cfg.get_doubles("sweep.shift");
  const auto lengths = cfg.get_sizes("sweep.unroll_length");
  const std::optional<std::uint64_t> dir_seed =
      cfg.has("slice.direction_seed") ? std::optional(cfg.get_u64("slice.direction_seed")) : std::nullopt;
  detail::require_nonempty(shifts, "sweep.shift");
  detail::require_nonempty(lengths, "sweep.unroll_length");
  for (std::size_t n : lengths) {
    if (n < 1) throw ConfigError("sweep.unroll_length entries must be at least 1");
  }

  return {[bound, shifts, lengths, dir_seed](const RunOptions& opt) {
    const Vector dir = random_direction(dir_seed.value_or(opt.seed), bound.spec.param_dim);
    const std::size_t ns = shifts.size();
    std::vector<double> loss(lengths.size() * ns);
    parallel_for(loss.size(), opt.threads, [&](std::size_t idx) {
      const Vector th = axpy(bound.theta, shifts[idx % ns], dir);
      loss[idx] = systems::mean_unrolled_loss(bound.spec, th, bound.s0, lengths[idx / ns]);
    });
    CsvWriter csv(opt.out_dir / "slice.csv", {"unroll_length", "shift", "loss"});
    for (std::size_t idx = 0; idx < loss.size(); ++idx) {
      csv.row(lengths[idx / ns], shifts[idx % ns], loss[idx]);
    }
    csv.close();
    return std::vector<std::string>{"slice.csv"};
  }};
}

// ---------------------------------------------------------------------------
// lyapunov: Benettin exponents and their convergence trace

inline Experiment make_lyapunov(Config& cfg) {
  BoundSystem bound = build_system(cfg);
  const std::size_t steps = cfg.get_size("unroll.steps", 10000);
  const std::size_t k = cfg.get_size("lyapunov.k", bound.spec.state_dim);
  const std::size_t checkpoints = cfg.get_size("lyapunov.checkpoints", 10);
  if (steps < 1) throw ConfigError("unroll.steps must be at least 1");
  if (k < 1 || k > bound.spec.state_dim) throw ConfigError("lyapunov.k must lie in [1, state_dim]");
  if (checkpoints < 1) throw ConfigError("lyapunov.checkpoints must be at least 1");

  return {[bound, steps, k, checkpoints](const RunOptions& opt) {
    const auto res = spectrum::lyapunov_exponents(bound.spec, bound.theta, bound.s0, steps, k, checkpoints);
    CsvWriter ly(opt.out_dir / "lyapunov.csv", {"exponent_index", "value"});
    for (std::size_t i = 0; i < res.exponents.size(); ++i) ly.row(i, res.exponents[i]);
    CsvWriter tr(opt.out_dir / "trace.csv", {"checkpoint", "running_estimate"});
    for (const auto& c : res.convergence_trace) tr.row(c.step, c.exponents.front());
    ly.close();
    tr.close();
    return std::vector<std::string>{"lyapunov.csv", "trace.csv"};
  }};
}

// ---------------------------------------------------------------------------

/// Parses the experiment-specific keys. The caller must have consumed the
/// common keys first; unknown keys are rejected here.
inline Experiment make_experiment(const std::string& name, Config& cfg) {
  Experiment e;
  if (name == "figure1") {
    e = make_figure1(cfg);
  } else if (name == "spectrum") {
    e = make_spectrum(cfg);
  } else if (name == "truncation-sweep") {
    e = make_truncation_sweep(cfg);
  } else if (name == "matprod-variance") {
    e = make_matprod_variance(cfg);
  } else if (name == "pde-stability") {
    e = make_pde_stability(cfg);
  } else if (name == "loss-slice") {
    e = make_loss_slice(cfg);
  } else if (name == "lyapunov") {
    e = make_lyapunov(cfg);
  } else {
    throw ConfigError("unknown experiment '" + name + "'");
  }
  cfg.finish();
  return e;
}

/// Common keys: `experiment` (must match `name` when present), `seeds.base`,
/// `output.dir`. Explicit seed and out_dir arguments take precedence.
struct RunRequest {
  std::string name;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> out_dir;
  std::size_t threads = 1;
};

inline RunManifest run_experiment(const RunRequest& req, Config& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const std::string declared = cfg.get_string("experiment", req.name);
  if (declared != req.name) {
    throw ConfigError("config declares experiment '" + declared + "' but '" + req.name + "' was requested");
  }
  const std::uint64_t cfg_seed = cfg.get_u64("seeds.base", 0);
  const std::optional<std::string> cfg_out =
      cfg.has("output.dir") ? std::optional(cfg.get_string("output.dir")) : std::nullopt;
  RunOptions opt;
  opt.seed = req.seed.value_or(cfg_seed);
  opt.threads = std::max<std::size_t>(1, req.threads);
  if (req.out_dir) {
    opt.out_dir = *req.out_dir;
  } else if (cfg_out) {
    opt.out_dir = *cfg_out;
  } else {
    throw ConfigError("no output directory: pass --out or set output.dir");
  }

  RunManifest manifest;
  manifest.experiment = req.name;
  manifest.config_hash = cfg.hash();
  manifest.seed = opt.seed;
  manifest.threads = opt.threads;

  Experiment exp = make_experiment(req.name, cfg);

  std::error_code ec;
  fs::create_directories(opt.out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + opt.out_dir.string() + "': " + ec.message());

  try {
    manifest.artifacts = exp.run(opt);
  } catch (const std::exception& e) {
    manifest.status = "failed";
    manifest.error = e.what();
    manifest.duration_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    try {
      manifest.write(opt.out_dir);
    } catch (const IoError&) {
    }
    throw;
  }
  for (const auto& a : manifest.artifacts) {
    const auto path = opt.out_dir / a;
    if (!fs::exists(path) || fs::file_size(path) == 0) {
      throw IoError("artifact '" + path.string() + "' is missing or empty");
    }
  }
  manifest.status = "success";
  manifest.duration_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  manifest.write(opt.out_dir);
  return manifest;
}

}  // namespace chaosgrad::cli
