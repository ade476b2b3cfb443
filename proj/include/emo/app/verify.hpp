#pragma once

#include <functional>
#include <string>
#include <vector>

#include "emo/ssm/ssm.hpp"
#include "emo/train/config.hpp"

namespace emo::app {

struct CheckResult {
  int id = 0;
  std::string name;
  bool pass = false;
  bool skipped = false;
  std::string detail;
  double seconds = 0.0;
};

using ZohFn = std::function<ssm::ZohResult(double a, double delta, double b)>;

struct VerifyOptions {
  train::RunConfig cfg = train::RunConfig::defaults();
  // Wall-clock timing and the ablation; without them those checks are
  // reported as skipped.
  bool slow = true;
  // Lets a test substitute a faulty discretization.
  ZohFn zoh = ssm::zoh_discretize;
};

CheckResult check_scan_oracle();
CheckResult check_zoh_golden(const ZohFn& zoh);
CheckResult check_gradients();
CheckResult check_complexity(const train::RunConfig& cfg, bool timed);
CheckResult check_structure();
CheckResult check_loss_golden();
CheckResult check_matching();
CheckResult check_ablation(const train::RunConfig& cfg, bool run);
CheckResult check_determinism(const train::RunConfig& cfg);

// Runs every check in order; `on_result` sees each one as it finishes.
std::vector<CheckResult> run_verification(const VerifyOptions& opts,
                                          const std::function<void(const CheckResult&)>& on_result = {});

}  // namespace emo::app
