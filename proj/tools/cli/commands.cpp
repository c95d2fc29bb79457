#include "commands.hpp"

#include "kroninv/error.hpp"
#include "kroninv/io.hpp"
#include "kroninv/tensor_ops.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace kroninv::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void log_line(std::ostream* log, const std::string& s) {
  if (log) *log << s << std::endl;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::Serialization, "cannot write '" + path.string() + "'");
  return f;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Serialization, "cannot create '" + dir.string() + "': " + ec.message());
}

json manifest_entry(const ExperimentConfig& cfg) {
  const json c = cfg.to_json();
  return json{{"config", c}, {"config_hash", sha256_hex(c.dump())}, {"seed", cfg.seed}};
}

void write_manifest(const fs::path& dir, const std::string& command, const ExperimentConfig& cfg, json outputs,
                    json extra = json::object()) {
  json m = manifest_entry(cfg);
  m["command"] = command;
  m["version"] = KRONINV_VERSION;
  m["threads"] = cfg.threads;
  m["outputs"] = std::move(outputs);
  for (auto& [k, v] : extra.items()) m[k] = v;
  io::write_json(dir / "manifest.json", m);
}

int exit_code_of(const Error& e) { return e.code() == ErrorCode::Config ? kExitConfig : kExitRuntime; }

std::string r_mu_text(const Dims& r) {
  std::string s;
  for (std::size_t i = 0; i < r.size(); ++i) s += (i ? ";" : "") + std::to_string(r[i]);
  return s;
}

Preconditioner make_preconditioner(const ExperimentConfig& cfg, const Problem& problem, std::ostream* log) {
  switch (cfg.precond.kind) {
    case PrecondKind::None: return Preconditioner();
    case PrecondKind::File: return load_preconditioner(cfg.precond.file);
    default: {
      auto run = build_preconditioner(cfg, problem, log);
      return std::visit([](auto&& p) { return Preconditioner(std::move(p)); }, std::move(run.p));
    }
  }
}

Dims operator_dims(const io::Json& payload) {
  if (!payload.is_object() || !payload.contains("dims") || !payload["dims"].is_array())
    throw Error(ErrorCode::Serialization, "preconditioner payload has no dims");
  const auto d = payload["dims"].get<std::vector<long long>>();
  return Dims(d.begin(), d.end());
}

struct SolveOutcome {
  SolveTrace trace;
  AnyTensor u;
};

SolveOutcome run_solver(const ExperimentConfig& cfg, const Problem& problem, const Preconditioner& p,
                        const DenseTensor* reference) {
  SolveOptions so{reference, cfg.solve.preconditioned_residual};
  if (cfg.solve.solver.method == SolverMethod::PCG) {
    auto r = pcg_lowrank(problem.a, AnyTensor(problem.b), p, cfg.solve.solver, so);
    return {std::move(r.trace), AnyTensor(std::move(r.u))};
  }
  auto r = gmres_lowrank(problem.a, AnyTensor(problem.b), p, cfg.solve.solver, so);
  return {std::move(r.trace), AnyTensor(std::move(r.u))};
}

std::optional<DenseTensor> maybe_reference(const ExperimentConfig& cfg, const Problem& problem, std::ostream* log) {
  if (!cfg.solve.reference || product(problem.dims()) > cfg.solve.reference_limit) return std::nullopt;
  log_line(log, "reference solution: " + std::to_string(product(problem.dims())) + " unknowns");
  return reference_solution(problem.a, AnyTensor(problem.b), 1e-12, cfg.solve.reference_limit);
}

std::string percent_tag(double gamma) { return std::to_string(int(std::lround(gamma * 100.0))); }

}  // namespace

PrecondRun build_preconditioner(const ExperimentConfig& cfg, const Problem& problem, std::ostream* log) {
  PrecondRun out;
  const auto& pc = cfg.precond;
  if (pc.kind == PrecondKind::MeanBased) {
    require(cfg.problem.type == ProblemType::StochasticElliptic, ErrorCode::Config,
            "mean_based needs problem.type stochastic_elliptic");
    const auto t0 = std::chrono::steady_clock::now();
    const auto se = build_stochastic_elliptic(cfg.problem.stochastic);
    KronSumOperator pe = mean_based_preconditioner(se, pc.fill_gamma);
    const auto est = error_estimate(pe, problem.a);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    out.rows.push_back(PrecondRow{1, est.epsilon, est.precision_limited, ms, Dims(problem.dims().size(), 1)});
    out.p = std::move(pe);
    return out;
  }
  require(pc.kind == PrecondKind::AlgG || pc.kind == PrecondKind::AlgP, ErrorCode::Config,
          "field 'preconditioner.algorithm': build-precond needs alg_g, alg_p or mean_based");
  const auto star = StarInnerProduct::make(problem.a, pc.star);
  const GreedyConfig g = greedy_config(cfg, int(problem.dims().size()));
  auto res = run_greedy(star, KronSumOperator(), g, [&](const GreedyStep& s, const BasisOperator&) {
    out.rows.push_back(PrecondRow{s.r, s.epsilon, s.precision_limited, s.wall_ms, s.basis_sizes});
    log_line(log, "r=" + std::to_string(s.r) + " epsilon=" + fmt(s.epsilon) + (s.precision_limited ? " (floor)" : ""));
  });
  if (res.zero_correction) log_line(log, "stopped early: the correction vanished");
  out.p = std::move(res.p);
  return out;
}

void write_precond_csv(std::ostream& out, const std::vector<PrecondRow>& rows, bool with_time) {
  out << "r,epsilon,floor_flag,wall_ms,r_mu\n";
  for (const auto& r : rows)
    out << r.r << ',' << fmt(r.epsilon) << ',' << (r.floor_flag ? 1 : 0) << ',' << (with_time ? fmt(r.wall_ms) : "0")
        << ',' << r_mu_text(r.r_mu) << '\n';
}

Preconditioner load_preconditioner(const fs::path& path) {
  const io::Json doc = io::read_json(path);
  const io::Json& payload = io::unwrap(doc);
  const auto kind = payload.value("kind", std::string());
  if (kind == "basis_operator") return Preconditioner(io::basis_operator_from_json(payload));
  if (kind == "kron_sum") return Preconditioner(io::kron_sum_from_json(payload));
  throw Error(ErrorCode::Serialization, "'" + path.string() + "' does not hold a preconditioner (kind '" + kind + "')");
}

ExperimentConfig resolve(ExperimentConfig cfg, const RunOptions& opt) {
  if (const char* env = std::getenv("KRONINV_OUT_DIR"); env && *env) cfg.output.dir = env;
  if (const char* env = std::getenv("KRONINV_THREADS"); env && *env) {
    char* end = nullptr;
    const long t = std::strtol(env, &end, 10);
    require(end && *end == '\0' && t >= 1, ErrorCode::Config, "KRONINV_THREADS must be a positive integer");
    cfg.threads = int(t);
  }
  if (opt.out) cfg.output.dir = *opt.out;
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.threads) cfg.threads = *opt.threads;
  if (opt.precond) {
    cfg.precond.kind = PrecondKind::File;
    cfg.precond.file = *opt.precond;
  }
  cfg.validate();
  return cfg;
}

int cmd_build_precond(const ExperimentConfig& cfg_in, const RunOptions& opt) {
  try {
    const ExperimentConfig cfg = resolve(cfg_in, opt);
    const Problem problem = build_problem(cfg.problem);
    ensure_dir(cfg.output.dir);
    const PrecondRun run = build_preconditioner(cfg, problem, opt.log);
    json trace = json::array();
    for (const auto& r : run.rows) trace.push_back(json{{"r", r.r}, {"epsilon", r.epsilon}, {"floor_flag", r.floor_flag}});
    json meta = manifest_entry(cfg);
    meta["version"] = KRONINV_VERSION;
    meta["star"] = cfg.precond.star == StarMode::SPD ? "spd" : "general";
    meta["epsilon_trace"] = trace;
    const json payload = std::visit([](const auto& p) { return io::to_json(p); }, run.p);
    io::write_json(cfg.output.dir / "precond.json", io::wrap(payload, meta));
    auto csv = open_out(cfg.output.dir / "precond_trace.csv");
    write_precond_csv(csv, run.rows, cfg.output.timing);
    write_manifest(cfg.output.dir, "build-precond", cfg, json::array({"precond.json", "precond_trace.csv"}));
    return kExitOk;
  } catch (const Error& e) {
    log_line(opt.err ? opt.err : &std::cerr, std::string("error: ") + e.what());
    return exit_code_of(e);
  } catch (const std::exception& e) {
    log_line(opt.err ? opt.err : &std::cerr, std::string("error: ") + e.what());
    return kExitRuntime;
  }
}

int cmd_solve(const ExperimentConfig& cfg_in, const RunOptions& opt) {
  try {
    const ExperimentConfig cfg = resolve(cfg_in, opt);
    const Problem problem = build_problem(cfg.problem);
    if (cfg.precond.kind == PrecondKind::File) {
      const io::Json doc = io::read_json(cfg.precond.file);
      const Dims pd = operator_dims(io::unwrap(doc));
      require(pd == problem.dims(), ErrorCode::DimensionMismatch, "preconditioner dimensions differ from the problem");
    }
    ensure_dir(cfg.output.dir);
    const Preconditioner p = make_preconditioner(cfg, problem, opt.log);
    const auto ref = maybe_reference(cfg, problem, opt.log);
    const SolveOutcome res = run_solver(cfg, problem, p, ref ? &*ref : nullptr);
    auto csv = open_out(cfg.output.dir / "solve_trace.csv");
    res.trace.write_csv(csv, cfg.output.timing);
    json outputs = json::array({"solve_trace.csv"});
    if (cfg.output.write_solution) {
      io::write_json(cfg.output.dir / "solution.json", io::wrap(io::to_json(res.u), manifest_entry(cfg)));
      outputs.push_back("solution.json");
    }
    const auto& last = res.trace.rows.back();
    json summary{{"iterations", last.iteration},
                 {"relative_residual", last.relative_residual},
                 {"converged", res.trace.converged},
                 {"breakdown", res.trace.breakdown},
                 {"stagnated", res.trace.stagnated}};
    if (last.epsilon_solution) summary["epsilon_solution"] = *last.epsilon_solution;
    write_manifest(cfg.output.dir, "solve", cfg, outputs, json{{"summary", summary}});
    log_line(opt.log, "iterations=" + std::to_string(last.iteration) + " relative_residual=" + fmt(last.relative_residual) +
                          (last.epsilon_solution ? " epsilon=" + fmt(*last.epsilon_solution) : std::string()));
    if (res.trace.breakdown) {
      log_line(opt.err ? opt.err : &std::cerr, "error: " + res.trace.message);
      return kExitRuntime;
    }
    return kExitOk;
  } catch (const Error& e) {
    log_line(opt.err ? opt.err : &std::cerr, std::string("error: ") + e.what());
    return exit_code_of(e);
  } catch (const std::exception& e) {
    log_line(opt.err ? opt.err : &std::cerr, std::string("error: ") + e.what());
    return kExitRuntime;
  }
}

int cmd_reproduce(const std::string& figure, const std::optional<ExperimentConfig>& base_in, const RunOptions& opt) {
  try {
    require(figure == "fig1" || figure == "fig3" || figure == "fig5", ErrorCode::Config,
            "unknown figure '" + figure + "' (expected fig1, fig3 or fig5)");
    ExperimentConfig base = base_in.value_or(ExperimentConfig{});
    const ProblemType want = figure == "fig1" ? ProblemType::Poisson : ProblemType::StochasticElliptic;
    if (base_in)
      require(base.problem.type == want, ErrorCode::Config,
              std::string("field 'problem.type': ") + figure + " runs on " +
                  (want == ProblemType::Poisson ? "poisson" : "stochastic_elliptic"));
    base.problem.type = want;
    if (!base_in && figure == "fig5") base.precond.rank = 5;
    base = resolve(base, opt);
    ensure_dir(base.output.dir);

    struct Curve {
      std::string name;
      ExperimentConfig cfg;
    };
    std::vector<Curve> curves;
    auto variant = [&](PrecondKind kind, ConstraintKind c, std::vector<int> modes, double gamma) {
      ExperimentConfig v = base;
      v.precond.kind = kind;
      v.precond.star = StarMode::SPD;
      v.precond.constraint = c;
      v.precond.constraint_modes = std::move(modes);
      v.precond.fill_gamma = gamma;
      return v;
    };
    if (figure == "fig1") {
      for (auto [alg, algname] : {std::pair{PrecondKind::AlgG, "alg_g"}, std::pair{PrecondKind::AlgP, "alg_p"}})
        for (auto [c, cname] : {std::pair{ConstraintKind::None, "plain"}, std::pair{ConstraintKind::Symmetric, "sym"}})
          curves.push_back({std::string("fig1_") + algname + "_" + cname, variant(alg, c, {}, 1.0)});
    } else if (figure == "fig3") {
      for (auto [alg, algname] : {std::pair{PrecondKind::AlgG, "alg_g"}, std::pair{PrecondKind::AlgP, "alg_p"}})
        for (double g : {1.0, 0.1, 0.3})
          curves.push_back({std::string("fig3_") + algname + "_gamma" + percent_tag(g),
                            variant(alg, ConstraintKind::Sparse, {0}, g)});
    } else {
      curves.push_back({"fig5_none", variant(PrecondKind::None, ConstraintKind::None, {}, 1.0)});
      for (double g : {0.02, 0.1, 0.3, 1.0})
        curves.push_back({"fig5_gamma" + percent_tag(g), variant(PrecondKind::AlgP, ConstraintKind::Sparse, {0}, g)});
    }

    const Problem problem = build_problem(base.problem);
    std::optional<DenseTensor> ref;
    if (figure == "fig5") {
      ref = maybe_reference(base, problem, opt.log);
      require(ref.has_value(), ErrorCode::Config, "fig5 needs a reference solution; raise solver.reference_limit");
    }
    json listing = json::array();
    for (const auto& c : curves) {
      log_line(opt.log, "curve " + c.name);
      auto csv = open_out(base.output.dir / (c.name + ".csv"));
      if (figure == "fig5") {
        const Preconditioner p = make_preconditioner(c.cfg, problem, opt.log);
        const SolveOutcome res = run_solver(c.cfg, problem, p, &*ref);
        res.trace.write_csv(csv, c.cfg.output.timing);
      } else {
        write_precond_csv(csv, build_preconditioner(c.cfg, problem, opt.log).rows, c.cfg.output.timing);
      }
      json e = manifest_entry(c.cfg);
      e["name"] = c.name;
      e["file"] = c.name + ".csv";
      listing.push_back(e);
    }
    write_manifest(base.output.dir, "reproduce " + figure, base, listing);
    return kExitOk;
  } catch (const Error& e) {
    log_line(opt.err ? opt.err : &std::cerr, std::string("error: ") + e.what());
    return exit_code_of(e);
  } catch (const std::exception& e) {
    log_line(opt.err ? opt.err : &std::cerr, std::string("error: ") + e.what());
    return kExitRuntime;
  }
}

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Low-rank Kronecker-structured inverse preconditioners and truncated tensor solvers", "kroninv"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(KRONINV_VERSION));

  std::string config_path, out_dir, precond_path, figure;
  std::uint64_t seed = 0;
  int threads = 1;
  bool quiet = false;
  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* c = sub->add_option("--config", config_path, "YAML experiment config");
    if (config_required) c->required();
    sub->add_option("--out", out_dir, "output directory (overrides output.dir and KRONINV_OUT_DIR)");
    sub->add_option("--seed", seed, "random seed (overrides the config)");
    sub->add_option("--threads", threads, "thread count (overrides the config and KRONINV_THREADS)")
        ->check(CLI::PositiveNumber);
    sub->add_flag("--quiet", quiet, "no progress output");
  };
  auto* build = app.add_subcommand("build-precond", "build a preconditioner and its epsilon trace");
  add_common(build, true);
  auto* solve = app.add_subcommand("solve", "run PCG or GMRES and write the solver trace");
  add_common(solve, true);
  solve->add_option("--precond", precond_path, "preconditioner container written by build-precond");
  auto* repro = app.add_subcommand("reproduce", "run the experiment grid of one figure");
  add_common(repro, false);
  repro->add_option("figure", figure, "fig1, fig3 or fig5")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  RunOptions opt;
  opt.log = quiet ? nullptr : &err;
  opt.err = &err;
  auto given = [](CLI::App* sub, const char* name) { return sub->count(name) > 0; };
  CLI::App* sub = app.get_subcommands().front();
  if (given(sub, "--out")) opt.out = out_dir;
  if (given(sub, "--seed")) opt.seed = seed;
  if (given(sub, "--threads")) opt.threads = threads;
  if (sub == solve && given(sub, "--precond")) opt.precond = precond_path;

  std::optional<ExperimentConfig> cfg;
  try {
    if (!config_path.empty()) cfg = load_config(config_path);
  } catch (const Error& e) {
    err << "error: " << e.what() << std::endl;
    return exit_code_of(e);
  }
  if (sub == build) return cmd_build_precond(*cfg, opt);
  if (sub == solve) return cmd_solve(*cfg, opt);
  return cmd_reproduce(figure, cfg, opt);
}

}  // namespace kroninv::cli
