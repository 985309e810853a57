// Finite-difference verification of the reverse-mode gradients, end to end:
// every differentiable op, the composite blocks, and the training losses.
// The case registry lives in gradsuite.hpp and is shared with the
// acceptance runner.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <iostream>
#include <sstream>

#include "gradsuite.hpp"

TEST_CASE("reverse-mode gradients match central differences everywhere") {
  gradsuite::Summary s = gradsuite::run_all();

  // The registry must stay a real corpus: many cases, many probes.
  CHECK(s.case_count() >= 100);
  CHECK(s.total_checks >= 1000);

  for (const auto& c : s.cases) {
    INFO(c.name << ": " << c.detail << " (worst rel " << c.worst_rel << ")");
    CHECK(c.pass);
  }

  if (!s.all_pass) {
    std::ostringstream os;
    gradsuite::print_summary(s, os);
    std::cout << os.str();
  }
}
