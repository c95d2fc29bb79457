// Acceptance runner: one PASS/FAIL line per criterion on stdout, the
// individual checks indented below it. Exit status 0 only if all pass.

#include "report.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <iostream>
#include <set>

using namespace kroninv::acceptance;

int main(int argc, char** argv) {
  CLI::App app{"kroninv acceptance criteria"};
  std::vector<int> only;
  int instances = 50;
  unsigned long long seed = 20240601ULL;
  bool verbose = false;
  app.add_option("--criteria", only, "subset to run (default: 1 2 3 4 5)")->check(CLI::Range(1, 5));
  app.add_option("--instances", instances, "random instances for criterion 4")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "seed of the randomized suites");
  app.add_flag("-v,--verbose", verbose, "progress on stderr");
  CLI11_PARSE(app, argc, argv);

  const std::set<int> want = only.empty() ? std::set<int>{1, 2, 3, 4, 5} : std::set<int>(only.begin(), only.end());
  std::vector<Criterion> results;
  // cheap suites first so their lines appear early
  if (want.count(4)) results.push_back(run_oracle_suite(instances, seed, verbose));
  if (want.count(5)) results.push_back(run_property_suite(seed, verbose));
  for (auto& c : run_reproduction(want.count(1) > 0, want.count(2) > 0, want.count(3) > 0, verbose))
    results.push_back(std::move(c));
  std::sort(results.begin(), results.end(), [](const Criterion& a, const Criterion& b) { return a.id < b.id; });

  bool all = true;
  for (const auto& c : results) {
    all = all && c.pass();
    std::cout << "criterion " << c.id << ": " << (c.pass() ? "PASS" : "FAIL") << "  " << c.title << " ("
              << int(c.seconds + 0.5) << " s)\n";
    for (const auto& k : c.checks) std::cout << "    [" << (k.pass ? "ok" : "FAIL") << "] " << k.name << ": " << k.detail << "\n";
  }
  std::cout << (all ? "all criteria passed" : "some criteria failed") << std::endl;
  return all ? 0 : 1;
}
