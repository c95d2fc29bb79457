#include "cli/commands.hpp"
#include "cli/config.hpp"
#include "kroninv/error.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace kroninv;
using namespace kroninv::cli;

namespace {

const char* kSmall = R"(seed: 3
problem:
  type: stochastic_elliptic
  mesh: 4
  p: 3
preconditioner:
  algorithm: alg_p
  rank: 3
  constraint: sparse
  constraint_modes: [0]
  fill_gamma: 0.3
solver:
  method: gmres
  rank: 3
  max_iterations: 6
)";

struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / ("kroninv_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(dir / name) << text;
    return dir / name;
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "kroninv");
  args.push_back("--quiet");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  return run_cli(int(argv.size()), argv.data(), out, err);
}

}  // namespace

TEST(Config, MissingFieldNamesLine) {
  try {
    parse_config("solver:\n  method: gmres\n", "x.yaml");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Config);
    EXPECT_NE(std::string(e.what()).find("'problem'"), std::string::npos);
  }
}

TEST(Config, UnknownFieldAndBadValue) {
  EXPECT_THROW(parse_config("problem: {type: poisson}\nbogus: 1\n"), Error);
  try {
    parse_config("problem: {type: poisson}\npreconditioner:\n  algorithm: alg_g\n  rank: 0\n", "c.yaml");
    FAIL();
  } catch (const Error& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("c.yaml:4"), std::string::npos) << m;
    EXPECT_NE(m.find("preconditioner.rank"), std::string::npos) << m;
  }
}

TEST(Config, HashIgnoresOutputDir) {
  auto a = parse_config(kSmall);
  auto b = a;
  b.output.dir = "elsewhere";
  EXPECT_EQ(sha256_hex(a.to_json().dump()), sha256_hex(b.to_json().dump()));
  b.seed = 4;
  EXPECT_NE(sha256_hex(a.to_json().dump()), sha256_hex(b.to_json().dump()));
}

TEST(Cli, ExitCodes) {
  Scratch s("exit");
  EXPECT_EQ(run({"build-precond", "--config", s.write("m.yaml", "solver: {method: pcg}\n").string()}), kExitConfig);
  EXPECT_EQ(run({"reproduce", "fig9", "--out", (s.dir / "f").string()}), kExitConfig);
  EXPECT_EQ(run({"nonsense"}), kExitConfig);
  EXPECT_EQ(run({"solve", "--config", (s.dir / "absent.yaml").string()}), kExitConfig);
}

TEST(Cli, IdentityConvergesInOneIteration) {
  Scratch s("identity");
  const auto cfg = s.write("id.yaml", "problem: {type: identity}\nsolver: {method: pcg, rank: 2, max_iterations: 5}\n");
  ASSERT_EQ(run({"solve", "--config", cfg.string(), "--out", (s.dir / "o").string()}), kExitOk);
  const std::string csv = slurp(s.dir / "o" / "solve_trace.csv");
  std::istringstream lines(csv);
  std::string header, r0, r1, extra;
  std::getline(lines, header);
  std::getline(lines, r0);
  std::getline(lines, r1);
  EXPECT_FALSE(std::getline(lines, extra)) << csv;
  EXPECT_EQ(r1.rfind("1,0,", 0), 0u) << r1;
}

TEST(Cli, BuildThenSolveIsDeterministic) {
  Scratch s("det");
  const auto cfg = s.write("c.yaml", kSmall);
  const auto a = s.dir / "a", b = s.dir / "b";
  ASSERT_EQ(run({"build-precond", "--config", cfg.string(), "--out", a.string()}), kExitOk);
  ASSERT_EQ(run({"build-precond", "--config", cfg.string(), "--out", b.string()}), kExitOk);
  EXPECT_EQ(slurp(a / "precond_trace.csv"), slurp(b / "precond_trace.csv"));
  EXPECT_EQ(slurp(a / "precond.json"), slurp(b / "precond.json"));
  EXPECT_EQ(slurp(a / "precond_trace.csv").substr(0, 31), "r,epsilon,floor_flag,wall_ms,r_");

  // a stored preconditioner gives the same trace as one built in place
  ASSERT_EQ(run({"solve", "--config", cfg.string(), "--out", (s.dir / "s1").string(), "--precond",
                 (a / "precond.json").string()}),
            kExitOk);
  ASSERT_EQ(run({"solve", "--config", cfg.string(), "--out", (s.dir / "s2").string()}), kExitOk);
  EXPECT_EQ(slurp(s.dir / "s1" / "solve_trace.csv"), slurp(s.dir / "s2" / "solve_trace.csv"));
  EXPECT_TRUE(fs::exists(s.dir / "s1" / "manifest.json"));
}

TEST(Cli, PreconditionerDimensionMismatch) {
  Scratch s("dims");
  const auto cfg = s.write("c.yaml", kSmall);
  ASSERT_EQ(run({"build-precond", "--config", cfg.string(), "--out", (s.dir / "a").string()}), kExitOk);
  std::string other = kSmall;
  other.replace(other.find("mesh: 4"), 7, "mesh: 5");
  const auto cfg2 = s.write("d.yaml", other);
  EXPECT_EQ(run({"solve", "--config", cfg2.string(), "--out", (s.dir / "b").string(), "--precond",
                 (s.dir / "a" / "precond.json").string()}),
            kExitRuntime);
}

TEST(Cli, SeedChangesManifestHash) {
  Scratch s("seed");
  const auto cfg = s.write("c.yaml", "problem: {type: identity}\nsolver: {method: pcg, rank: 2}\n");
  ASSERT_EQ(run({"solve", "--config", cfg.string(), "--out", (s.dir / "a").string(), "--seed", "1"}), kExitOk);
  ASSERT_EQ(run({"solve", "--config", cfg.string(), "--out", (s.dir / "b").string(), "--seed", "2"}), kExitOk);
  const auto ma = nlohmann::json::parse(slurp(s.dir / "a" / "manifest.json"));
  const auto mb = nlohmann::json::parse(slurp(s.dir / "b" / "manifest.json"));
  EXPECT_EQ(ma.at("seed"), 1);
  EXPECT_NE(ma.at("config_hash"), mb.at("config_hash"));
}
