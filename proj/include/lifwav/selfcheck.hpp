#pragma once

// Embedded verification suite: gradients against finite differences, lifting
// and split/merge invertibility, the STFT against a direct DFT, and the
// evaluation metrics against their textbook formulas.

#include <string>
#include <vector>

namespace lifwav {

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;      // worst observed error
  double tolerance = 0.0;
  std::string detail;
};

std::vector<CheckResult> gradient_checks();
CheckResult lifting_round_trip_check(std::size_t parameterizations = 100);
CheckResult split_merge_check();
std::vector<CheckResult> stft_checks();
std::vector<CheckResult> metric_checks(std::size_t pairs = 1000);

std::vector<CheckResult> run_selfcheck();

}  // namespace lifwav
