#include "config.hpp"

#include "kroninv/error.hpp"

#include <openssl/evp.h>
#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

namespace kroninv::cli {

namespace {

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorCode::Config, msg); }

// Walks one YAML mapping, remembering the dotted path and the source name so
// every message can point at a line.
class Reader {
 public:
  Reader(YAML::Node node, std::string path, const std::string& source)
      : node_(std::move(node)), path_(std::move(path)), source_(source) {}

  bool has(const std::string& key) const { return node_ && node_.IsMap() && node_[key]; }

  std::string where(const YAML::Node& n) const {
    const int line = n.Mark().line >= 0 ? n.Mark().line + 1 : (node_.Mark().line >= 0 ? node_.Mark().line + 1 : 1);
    return source_ + ":" + std::to_string(line);
  }
  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    config_error(where(has(key) ? node_[key] : node_) + ": field '" + field(key) + "': " + msg);
  }
  void check(bool ok, const std::string& key, const std::string& msg) const {
    if (!ok) fail(key, msg);
  }

  template <class T>
  T required(const std::string& key) const {
    if (!has(key)) config_error(where(node_) + ": missing required field '" + field(key) + "'");
    return convert<T>(key);
  }

  template <class T>
  T get(const std::string& key, T fallback) const {
    return has(key) ? convert<T>(key) : fallback;
  }

  Reader child(const std::string& key, bool required_section) const {
    if (!has(key)) {
      if (required_section) config_error(where(node_) + ": missing required field '" + field(key) + "'");
      return Reader(YAML::Node(), field(key), source_);
    }
    const YAML::Node n = node_[key];
    if (!n.IsMap()) fail(key, "expected a mapping");
    return Reader(n, field(key), source_);
  }

  /// Rejects keys outside `allowed` (catches typos that would otherwise be ignored).
  void allow(std::initializer_list<const char*> allowed) const {
    if (!node_ || !node_.IsMap()) return;
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!ok.count(key)) config_error(where(kv.first) + ": unknown field '" + field(key) + "'");
    }
  }

 private:
  template <class T>
  T convert(const std::string& key) const {
    try {
      return node_[key].as<T>();
    } catch (const YAML::Exception&) {
      fail(key, "cannot read value '" + YAML::Dump(node_[key]) + "'");
    }
  }

  YAML::Node node_;
  std::string path_;
  const std::string& source_;
};

template <class E>
E pick(const Reader& r, const std::string& key, E fallback, std::initializer_list<std::pair<const char*, E>> table) {
  if (!r.has(key)) return fallback;
  const auto v = r.get<std::string>(key, "");
  std::string names;
  for (const auto& [name, value] : table) {
    if (v == name) return value;
    names += names.empty() ? name : std::string(", ") + name;
  }
  r.fail(key, "unknown value '" + v + "' (expected one of: " + names + ")");
}

std::pair<double, double> range(const Reader& r, const std::string& key, std::pair<double, double> fallback) {
  if (!r.has(key)) return fallback;
  const auto v = r.get<std::vector<double>>(key, {});
  r.check(v.size() == 2, key, "expected a two-element list [lo, hi]");
  r.check(v[0] < v[1], key, "lower bound must be below the upper bound");
  return {v[0], v[1]};
}

const char* name_of(ProblemType t) {
  switch (t) {
    case ProblemType::Poisson: return "poisson";
    case ProblemType::StochasticElliptic: return "stochastic_elliptic";
    case ProblemType::Identity: return "identity";
  }
  return "";
}

const char* name_of(PrecondKind k) {
  switch (k) {
    case PrecondKind::None: return "none";
    case PrecondKind::AlgG: return "alg_g";
    case PrecondKind::AlgP: return "alg_p";
    case PrecondKind::MeanBased: return "mean_based";
    case PrecondKind::File: return "file";
  }
  return "";
}

const char* name_of(ConstraintKind k) {
  switch (k) {
    case ConstraintKind::None: return "none";
    case ConstraintKind::Symmetric: return "symmetric";
    case ConstraintKind::Skew: return "skew";
    case ConstraintKind::Sparse: return "sparse";
  }
  return "";
}

int problem_order(const ProblemConfig& p) {
  switch (p.type) {
    case ProblemType::Poisson: return p.poisson.d;
    case ProblemType::StochasticElliptic: return 3;
    case ProblemType::Identity: return int(p.identity_dims.size());
  }
  return 0;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    config_error(source + ":" + std::to_string(e.mark.line + 1) + ": YAML syntax error: " + e.msg);
  }
  if (!root || root.IsNull()) config_error(source + ": empty config");
  if (!root.IsMap()) config_error(source + ":1: top level must be a mapping");
  const Reader top(root, "", source);
  top.allow({"seed", "threads", "problem", "preconditioner", "solver", "output"});

  ExperimentConfig cfg;
  cfg.seed = top.get<std::uint64_t>("seed", 0);
  cfg.threads = top.get<int>("threads", 1);
  top.check(cfg.threads >= 1, "threads", "must be at least 1");

  // problem
  const Reader pr = top.child("problem", true);
  pr.allow({"type", "d", "n", "mesh", "p", "kappa_range", "eta_range", "load_region", "dims"});
  auto& prob = cfg.problem;
  prob.type = pick(pr, "type", ProblemType::Poisson,
                   {{"poisson", ProblemType::Poisson},
                    {"stochastic_elliptic", ProblemType::StochasticElliptic},
                    {"identity", ProblemType::Identity}});
  if (!pr.has("type")) pr.required<std::string>("type");
  prob.poisson.d = pr.get<int>("d", prob.poisson.d);
  prob.poisson.n = pr.get<Index>("n", prob.poisson.n);
  pr.check(prob.poisson.d >= 2, "d", "must be at least 2");
  pr.check(prob.poisson.n >= 2, "n", "must be at least 2");
  prob.stochastic.mesh = pr.get<int>("mesh", prob.stochastic.mesh);
  prob.stochastic.p = pr.get<int>("p", prob.stochastic.p);
  pr.check(prob.stochastic.mesh >= 2, "mesh", "must be at least 2");
  pr.check(prob.stochastic.p >= 1, "p", "must be at least 1");
  prob.stochastic.kappa_range = range(pr, "kappa_range", prob.stochastic.kappa_range);
  prob.stochastic.eta_range = range(pr, "eta_range", prob.stochastic.eta_range);
  prob.stochastic.load_region = range(pr, "load_region", prob.stochastic.load_region);
  pr.check(prob.stochastic.kappa_range.first > 0.0, "kappa_range", "must be positive");
  pr.check(prob.stochastic.eta_range.first > 0.0, "eta_range", "must be positive");
  if (pr.has("dims")) {
    const auto d = pr.get<std::vector<long long>>("dims", {});
    pr.check(!d.empty(), "dims", "must not be empty");
    for (long long n : d) pr.check(n >= 1, "dims", "entries must be positive");
    prob.identity_dims.assign(d.begin(), d.end());
  }
  const int order = problem_order(prob);

  // preconditioner
  const Reader pc = top.child("preconditioner", false);
  pc.allow({"algorithm", "star", "rank", "constraint", "constraint_modes", "fill_gamma", "pattern_iterations",
            "projection", "correction", "file"});
  auto& p = cfg.precond;
  p.kind = pick(pc, "algorithm", PrecondKind::None,
                {{"none", PrecondKind::None},
                 {"alg_g", PrecondKind::AlgG},
                 {"alg_p", PrecondKind::AlgP},
                 {"mean_based", PrecondKind::MeanBased},
                 {"file", PrecondKind::File}});
  p.star = pick(pc, "star", StarMode::SPD, {{"spd", StarMode::SPD}, {"general", StarMode::GENERAL}});
  p.rank = pc.get<int>("rank", p.rank);
  pc.check(p.rank >= 1, "rank", "must be at least 1");
  p.constraint = pick(pc, "constraint", ConstraintKind::None,
                      {{"none", ConstraintKind::None},
                       {"symmetric", ConstraintKind::Symmetric},
                       {"skew", ConstraintKind::Skew},
                       {"sparse", ConstraintKind::Sparse}});
  p.constraint_modes = pc.get<std::vector<int>>("constraint_modes", {});
  for (int m : p.constraint_modes) pc.check(m >= 0 && m < order, "constraint_modes", "mode index out of range");
  p.fill_gamma = pc.get<double>("fill_gamma", p.fill_gamma);
  pc.check(p.fill_gamma > 0.0 && p.fill_gamma <= 1.0, "fill_gamma", "must lie in (0, 1]");
  if (pc.has("pattern_iterations")) {
    p.pattern_iterations = pc.get<int>("pattern_iterations", 0);
    pc.check(*p.pattern_iterations >= 0, "pattern_iterations", "must be nonnegative");
  }
  if (p.kind == PrecondKind::File) p.file = pc.required<std::string>("file");
  if (p.kind == PrecondKind::MeanBased)
    pc.check(prob.type == ProblemType::StochasticElliptic, "algorithm", "mean_based needs problem.type stochastic_elliptic");

  const Reader pj = pc.child("projection", false);
  pj.allow({"mode", "max_core_rank", "als_sweeps"});
  if (pj.has("mode")) {
    const auto mode = pj.get<std::string>("mode", "");
    pj.check(mode == "auto" || mode == "full" || mode == "ht", "mode", "unknown value '" + mode + "' (expected one of: auto, full, ht)");
    p.projection_auto = mode == "auto";
    p.projection.mode = mode == "ht" ? ProjectionMode::HT : ProjectionMode::Full;
  }
  p.projection.max_core_rank = pj.get<Index>("max_core_rank", p.projection.max_core_rank);
  p.projection.als_sweeps = pj.get<int>("als_sweeps", p.projection.als_sweeps);
  pj.check(p.projection.max_core_rank >= 1, "max_core_rank", "must be at least 1");
  pj.check(p.projection.als_sweeps >= 1, "als_sweeps", "must be at least 1");

  const Reader co = pc.child("correction", false);
  co.allow({"max_sweeps", "init", "max_restarts", "stagnation_tol"});
  p.correction.max_sweeps = co.get<int>("max_sweeps", p.correction.max_sweeps);
  p.correction.max_restarts = co.get<int>("max_restarts", p.correction.max_restarts);
  p.correction.stagnation_tol = co.get<double>("stagnation_tol", p.correction.stagnation_tol);
  p.correction.init = pick(co, "init", InitKind::Random, {{"random", InitKind::Random}, {"ones", InitKind::Ones}});
  co.check(p.correction.max_sweeps >= 1, "max_sweeps", "must be at least 1");
  co.check(p.correction.max_restarts >= 0, "max_restarts", "must be nonnegative");

  // solver
  const Reader so = top.child("solver", false);
  so.allow({"method", "rank", "hooi_sweeps", "internal_rank", "max_iterations", "residual_tolerance",
            "stop_on_stagnation", "stagnation_window", "residual_refresh", "reference", "reference_limit",
            "preconditioned_residual"});
  auto& s = cfg.solve.solver;
  s.method = pick(so, "method", SolverMethod::GMRES, {{"gmres", SolverMethod::GMRES}, {"pcg", SolverMethod::PCG}});
  const Index rank = so.get<Index>("rank", 10);
  so.check(rank >= 1, "rank", "must be at least 1");
  const int sweeps = so.get<int>("hooi_sweeps", 2);
  so.check(sweeps >= 0, "hooi_sweeps", "must be nonnegative");
  s.iterate_truncation = TruncationSpec::uniform(rank, sweeps);
  s.internal_rank_cap = so.get<Index>("internal_rank", 0);
  so.check(s.internal_rank_cap >= 0, "internal_rank", "must be nonnegative");
  s.max_iterations = so.get<int>("max_iterations", s.max_iterations);
  so.check(s.max_iterations >= 1, "max_iterations", "must be at least 1");
  s.residual_tolerance = so.get<double>("residual_tolerance", 0.0);
  so.check(s.residual_tolerance >= 0.0, "residual_tolerance", "must be nonnegative");
  s.stop_on_stagnation = so.get<bool>("stop_on_stagnation", false);
  s.stagnation_window = so.get<int>("stagnation_window", s.stagnation_window);
  so.check(s.stagnation_window >= 1, "stagnation_window", "must be at least 1");
  s.residual_refresh = so.get<int>("residual_refresh", s.residual_refresh);
  so.check(s.residual_refresh >= 0, "residual_refresh", "must be nonnegative");
  cfg.solve.reference = pick(so, "reference", true, {{"auto", true}, {"none", false}});
  cfg.solve.reference_limit = so.get<Index>("reference_limit", cfg.solve.reference_limit);
  cfg.solve.preconditioned_residual = so.get<bool>("preconditioned_residual", true);

  // output
  const Reader out = top.child("output", false);
  out.allow({"dir", "timing", "write_solution"});
  cfg.output.dir = out.get<std::string>("dir", cfg.output.dir.string());
  cfg.output.timing = out.get<bool>("timing", false);
  cfg.output.write_solution = out.get<bool>("write_solution", false);

  try {
    cfg.validate();
  } catch (const Error& e) {
    config_error(source + ": " + e.what());
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot open config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

void ExperimentConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) config_error(msg);
  };
  check(threads >= 1, "field 'threads': must be at least 1");
  check(precond.rank >= 1, "field 'preconditioner.rank': must be at least 1");
  check(precond.fill_gamma > 0.0 && precond.fill_gamma <= 1.0, "field 'preconditioner.fill_gamma': must lie in (0, 1]");
  try {
    problem.poisson.validate();
    problem.stochastic.validate();
    solve.solver.validate();
  } catch (const Error& e) {
    config_error(e.what());
  }
}

nlohmann::json ExperimentConfig::to_json() const {
  using nlohmann::json;
  json prob{{"type", name_of(problem.type)}};
  switch (problem.type) {
    case ProblemType::Poisson:
      prob["d"] = problem.poisson.d;
      prob["n"] = problem.poisson.n;
      break;
    case ProblemType::StochasticElliptic: {
      const auto& s = problem.stochastic;
      prob["mesh"] = s.mesh;
      prob["p"] = s.p;
      prob["kappa_range"] = {s.kappa_range.first, s.kappa_range.second};
      prob["eta_range"] = {s.eta_range.first, s.eta_range.second};
      prob["load_region"] = {s.load_region.first, s.load_region.second};
      break;
    }
    case ProblemType::Identity:
      prob["dims"] = std::vector<long long>(problem.identity_dims.begin(), problem.identity_dims.end());
      break;
  }
  json pc{{"algorithm", name_of(precond.kind)},
          {"star", precond.star == StarMode::SPD ? "spd" : "general"},
          {"rank", precond.rank},
          {"constraint", name_of(precond.constraint)},
          {"constraint_modes", precond.constraint_modes},
          {"fill_gamma", precond.fill_gamma},
          {"projection",
           {{"mode", precond.projection_auto ? "auto" : (precond.projection.mode == ProjectionMode::HT ? "ht" : "full")},
            {"max_core_rank", precond.projection.max_core_rank},
            {"als_sweeps", precond.projection.als_sweeps}}},
          {"correction",
           {{"max_sweeps", precond.correction.max_sweeps},
            {"max_restarts", precond.correction.max_restarts},
            {"stagnation_tol", precond.correction.stagnation_tol},
            {"init", precond.correction.init == InitKind::Ones ? "ones" : "random"}}}};
  if (precond.pattern_iterations) pc["pattern_iterations"] = *precond.pattern_iterations;
  if (precond.kind == PrecondKind::File) pc["file"] = precond.file.string();
  const auto& s = solve.solver;
  json so{{"method", s.method == SolverMethod::PCG ? "pcg" : "gmres"},
          {"rank", s.iterate_truncation.max_rank},
          {"hooi_sweeps", s.iterate_truncation.refine_iterations},
          {"internal_rank", s.internal_rank_cap},
          {"max_iterations", s.max_iterations},
          {"residual_tolerance", s.residual_tolerance},
          {"stop_on_stagnation", s.stop_on_stagnation},
          {"stagnation_window", s.stagnation_window},
          {"residual_refresh", s.residual_refresh},
          {"reference", solve.reference ? "auto" : "none"},
          {"reference_limit", solve.reference_limit},
          {"preconditioned_residual", solve.preconditioned_residual}};
  // output.dir is where results go, not what they are: left out of the hash
  return json{{"seed", seed},
              {"problem", prob},
              {"preconditioner", pc},
              {"solver", so},
              {"output", {{"timing", output.timing}, {"write_solution", output.write_solution}}}};
}

GreedyConfig greedy_config(const ExperimentConfig& cfg, int order) {
  const auto& p = cfg.precond;
  GreedyConfig g;
  g.algorithm = p.kind == PrecondKind::AlgG ? GreedyAlgorithm::G : GreedyAlgorithm::P;
  g.steps = p.rank;
  g.correction = p.correction;
  g.correction.seed = cfg.seed;
  g.projection = p.projection;
  if (p.projection_auto) g.projection.mode = order >= 4 ? ProjectionMode::HT : ProjectionMode::Full;
  g.constraints = PropertyConstraint::none(order);
  std::vector<int> modes = p.constraint_modes;
  if (modes.empty())
    for (int m = 0; m < order; ++m) modes.push_back(m);
  for (int m : modes) {
    g.constraints.modes[std::size_t(m)].kind = p.constraint;
    g.constraints.modes[std::size_t(m)].sparse.fill_gamma = p.fill_gamma;
    g.constraints.modes[std::size_t(m)].sparse.pattern_iterations = p.pattern_iterations;
  }
  return g;
}

Problem build_problem(const ProblemConfig& p) {
  switch (p.type) {
    case ProblemType::Poisson: return build_poisson(p.poisson);
    case ProblemType::StochasticElliptic: return build_stochastic_elliptic(p.stochastic).problem;
    case ProblemType::Identity: {
      Problem out;
      out.name = "identity";
      out.a = KronSumOperator::identity(p.identity_dims);
      std::vector<Vector> ones;
      for (Index n : p.identity_dims) ones.push_back(Vector::Ones(n));
      out.b = CanonicalTensor::rank_one(std::move(ones));
      return out;
    }
  }
  throw Error(ErrorCode::Config, "unknown problem type");
}

std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorCode::Serialization, "SHA-256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

}  // namespace kroninv::cli
