// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
// Optional arguments restrict the run to the given criterion numbers.

#include <cstdio>
#include <cstdlib>
#include <set>

#include "acceptance_checks.hpp"

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& [id, fn] : acceptance::all_checks()) {
    if (!only.empty() && !only.count(id)) continue;
    const acceptance::CheckResult r = acceptance::run_timed(fn, id);
    std::printf("%s\n", acceptance::format_line(r).c_str());
    std::fflush(stdout);
    failed += !r.pass;
  }
  std::printf("%d criterion(s) failed\n", failed);
  return failed == 0 ? 0 : 1;
}
