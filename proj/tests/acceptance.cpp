// Acceptance suite: one line per criterion, nonzero exit on any failure.
// NORMLAB_ACCEPTANCE_QUICK=1 shrinks trial counts for smoke runs.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>

#include "normlab/props.hpp"

int main(int argc, char** argv) {
  bool quick = std::getenv("NORMLAB_ACCEPTANCE_QUICK") != nullptr;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--quick") == 0) quick = true;
  }

  const auto start = std::chrono::steady_clock::now();
  std::vector<normlab::PropResult> results = normlab::run_acceptance_checks(quick);
  const auto stop = std::chrono::steady_clock::now();

  int failures = 0;
  for (const normlab::PropResult& r : results) {
    std::printf("[%s] %-32s %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    failures += r.pass ? 0 : 1;
  }
  const double seconds = std::chrono::duration<double>(stop - start).count();
  std::printf("%zu checks, %d failure(s), %.1f s%s\n", results.size(), failures, seconds,
              quick ? " (quick)" : "");
  return failures == 0 ? 0 : 1;
}
