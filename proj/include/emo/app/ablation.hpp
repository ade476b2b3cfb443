#pragma once

#include <functional>
#include <string>
#include <vector>

#include "emo/app/report.hpp"
#include "emo/train/model.hpp"

namespace emo::app {

// A decoder variant: which stages run and which scan the local block uses.
// Disabled stages become token-wise MLPs.
struct Variant {
  std::string name;
  bool global = true;
  bool cross = true;
  bool local = true;
  block::MixerKind local_mixer = block::MixerKind::kLocalBidirectional;
};

// Stage variants "mlp", "G", "L", "G+CA", "G+L", "CA+L", "G+CA+L", then the
// scan variants "uni", "bi", "local_uni" of the full model. "local_bi" is an
// alias of "G+CA+L".
std::vector<Variant> all_variants();
Variant find_variant(const std::string& name);
train::RunConfig variant_config(const train::RunConfig& base, const Variant& v);

struct SeedRun {
  std::uint64_t seed = 0;
  train::Metrics test;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  bool diverged = false;
};

struct VariantResult {
  Variant variant;
  std::vector<SeedRun> runs;
  // Over runs that did not diverge.
  double mean_error = 0.0;
  double std_error = 0.0;
  double min_error = 0.0;
  double max_error = 0.0;
  double mean_f1 = 0.0;
  std::size_t n_valid() const;
};

struct AblationResult {
  std::vector<VariantResult> variants;
  const VariantResult* find(const std::string& name) const;
};

// Trains every (variant, seed) pair on the same data with the same budget.
// Pairs run in parallel across OpenMP threads; each run is deterministic.
AblationResult run_ablation(const train::RunConfig& base, const std::vector<Variant>& variants,
                            const std::vector<std::uint64_t>& seeds,
                            const std::function<void(const std::string&)>& log = {});

struct OrderingCheck {
  std::string claim;
  bool pass = false;
  std::string detail;
};

// full <= every partial, every variant <= 0.9 * mlp, local_bi <= uni. Claims
// whose variants are missing or fully diverged are reported as failures.
std::vector<OrderingCheck> check_ordering(const AblationResult& r);

Report ablation_report(const train::RunConfig& cfg, const AblationResult& r, const std::vector<OrderingCheck>& checks);

}  // namespace emo::app
