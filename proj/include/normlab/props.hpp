#pragma once

#include <string>
#include <vector>

namespace normlab {

struct PropResult {
  std::string suite;   // norms | granola | expressiveness | gradients | training | complexity
  std::string name;
  bool pass = false;
  std::string detail;  // measured numbers
};

// Runs one suite ("norms", "granola", "expressiveness", "gradients",
// "training", "complexity") or "all". Results come back in a fixed order.
// `eps_override` >= 0 replaces the default eps in the fidelity check (a
// degenerate value like 0 surfaces as a failed property).
std::vector<PropResult> run_property_suite(const std::string& suite, double eps_override = -1.0);

// The numbered acceptance checks, in order. `quick` shrinks the sampled
// trial counts (unit-test use); acceptance runs use quick = false.
std::vector<PropResult> run_acceptance_checks(bool quick = false);

}  // namespace normlab
