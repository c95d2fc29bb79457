#pragma once

// Experiment configuration: YAML in, validated structs plus a canonical JSON
// form (used for the manifest and the config hash) out.

#include "kroninv/greedy_inverse.hpp"
#include "kroninv/problems.hpp"
#include "kroninv/solvers.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

namespace kroninv::cli {

enum class ProblemType { Poisson, StochasticElliptic, Identity };
enum class PrecondKind { None, AlgG, AlgP, MeanBased, File };

struct ProblemConfig {
  ProblemType type = ProblemType::Poisson;
  PoissonSpec poisson;
  StochasticEllipticSpec stochastic;
  Dims identity_dims{4, 4};
};

struct PrecondConfig {
  PrecondKind kind = PrecondKind::None;
  StarMode star = StarMode::SPD;
  int rank = 10;  ///< R, greedy steps
  /// constraint kind applied to `constraint_modes` (all modes when empty)
  ConstraintKind constraint = ConstraintKind::None;
  std::vector<int> constraint_modes;
  double fill_gamma = 1.0;  ///< sparse constraint and mean-based SPAI
  std::optional<int> pattern_iterations;
  bool projection_auto = true;  ///< HT for d ≥ 4, FULL otherwise
  ProjectionSpec projection;
  CorrectionConfig correction;
  std::filesystem::path file;  ///< PrecondKind::File
};

struct SolveSection {
  SolverConfig solver;
  bool reference = true;  ///< compare against a direct solve when the size allows
  Index reference_limit = 2'000'000;
  bool preconditioned_residual = true;
};

struct OutputConfig {
  std::filesystem::path dir = "out";
  bool timing = false;  ///< wall_ms columns hold 0 unless set, so CSVs are reproducible byte for byte
  bool write_solution = false;
};

struct ExperimentConfig {
  ProblemConfig problem;
  PrecondConfig precond;
  SolveSection solve;
  OutputConfig output;
  std::uint64_t seed = 0;
  int threads = 1;

  /// Deterministic canonical form; the manifest stores it with its SHA-256.
  nlohmann::json to_json() const;
  /// Throws Error(Config) naming the offending field.
  void validate() const;
};

/// Parse YAML text. Errors carry the line and the dotted field name.
ExperimentConfig parse_config(const std::string& yaml_text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

GreedyConfig greedy_config(const ExperimentConfig& cfg, int order);
Problem build_problem(const ProblemConfig& p);

std::string sha256_hex(const std::string& data);

}  // namespace kroninv::cli
