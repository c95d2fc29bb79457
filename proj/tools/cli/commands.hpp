#pragma once

#include "config.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>

namespace kroninv::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

/// Command-line overrides; they win over environment variables, which win over the config file.
struct RunOptions {
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::filesystem::path> precond;
  std::ostream* log = nullptr;  ///< progress lines (null: silent)
  std::ostream* err = nullptr;  ///< error lines (null: std::cerr)
};

struct PrecondRow {
  int r = 0;
  double epsilon = 1.0;
  bool floor_flag = false;
  double wall_ms = 0.0;
  Dims r_mu;
};

struct PrecondRun {
  std::variant<BasisOperator, KronSumOperator> p;
  std::vector<PrecondRow> rows;
};

/// ALG-G / ALG-P / mean-based preconditioner with its ε trace.
PrecondRun build_preconditioner(const ExperimentConfig& cfg, const Problem& problem, std::ostream* log = nullptr);

/// r,epsilon,floor_flag,wall_ms,r_mu (r_mu as "r1;r2;…"); wall_ms is 0 unless `with_time`.
void write_precond_csv(std::ostream& out, const std::vector<PrecondRow>& rows, bool with_time);

/// Reads a preconditioner container (basis_operator or kron_sum payload).
Preconditioner load_preconditioner(const std::filesystem::path& path);

/// Resolves overrides (flags, then KRONINV_OUT_DIR / KRONINV_THREADS).
ExperimentConfig resolve(ExperimentConfig cfg, const RunOptions& opt);

int cmd_build_precond(const ExperimentConfig& cfg, const RunOptions& opt);
int cmd_solve(const ExperimentConfig& cfg, const RunOptions& opt);
/// fig1 | fig3 | fig5. `base` replaces the full-size defaults (problem sizes, R, solver budget).
int cmd_reproduce(const std::string& figure, const std::optional<ExperimentConfig>& base, const RunOptions& opt);

/// Full command line: parses arguments, dispatches, maps errors to exit codes.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace kroninv::cli
