#include "emo/app/ablation.hpp"

#include <algorithm>
#include <cmath>

#include "emo/error.hpp"
#include "emo/numerics/stats.hpp"

namespace emo::app {

using block::MixerKind;

std::vector<Variant> all_variants() {
  return {
      {"mlp", false, false, false},
      {"G", true, false, false},
      {"L", false, false, true},
      {"G+CA", true, true, false},
      {"G+L", true, false, true},
      {"CA+L", false, true, true},
      {"G+CA+L", true, true, true},
      {"uni", true, true, true, MixerKind::kUnidirectional},
      {"bi", true, true, true, MixerKind::kBidirectional},
      {"local_uni", true, true, true, MixerKind::kLocalUnidirectional},
  };
}

Variant find_variant(const std::string& name) {
  const std::string key = name == "local_bi" ? "G+CA+L" : name;
  for (const auto& v : all_variants())
    if (v.name == key) return v;
  throw ConfigError("unknown ablation variant '" + name + "'");
}

train::RunConfig variant_config(const train::RunConfig& base, const Variant& v) {
  train::RunConfig c = base;
  c.decoder.use_global = v.global;
  c.decoder.use_cross = v.cross;
  c.decoder.use_local = v.local;
  c.decoder.local_mixer = v.local_mixer;
  c.finalize();
  return c;
}

std::size_t VariantResult::n_valid() const {
  return static_cast<std::size_t>(
      std::count_if(runs.begin(), runs.end(), [](const SeedRun& s) { return !s.diverged; }));
}

const VariantResult* AblationResult::find(const std::string& name) const {
  const std::string key = name == "local_bi" ? "G+CA+L" : name;
  for (const auto& v : variants)
    if (v.variant.name == key) return &v;
  return nullptr;
}

AblationResult run_ablation(const train::RunConfig& base, const std::vector<Variant>& variants,
                            const std::vector<std::uint64_t>& seeds,
                            const std::function<void(const std::string&)>& log) {
  EMO_CHECK(!variants.empty() && !seeds.empty(), ConfigError, "ablate: need at least one variant and one seed");
  const train::Datasets data = train::make_datasets(base);
  const scene::BodyModel body = train::body_for(base.decoder.topo);
  AblationResult result;
  for (const auto& v : variants) result.variants.push_back({v, std::vector<SeedRun>(seeds.size())});

  const std::ptrdiff_t jobs = static_cast<std::ptrdiff_t>(variants.size() * seeds.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t job = 0; job < jobs; ++job) {
    const std::size_t vi = static_cast<std::size_t>(job) / seeds.size();
    const std::size_t si = static_cast<std::size_t>(job) % seeds.size();
    train::RunConfig cfg = variant_config(base, variants[vi]);
    cfg.optimizer.seed = seeds[si];
    const auto tr = train::train_model(cfg, data.train);
    SeedRun& run = result.variants[vi].runs[si];
    run.seed = seeds[si];
    run.diverged = tr.diverged;
    run.initial_loss = tr.curve.front().breakdown.total;
    run.final_loss = tr.curve.back().breakdown.total;
    run.test = train::evaluate(cfg, tr.model, body, data.test);
    if (log) {
#pragma omp critical(emo_ablation_log)
      log(variants[vi].name + " seed " + std::to_string(seeds[si]) + ": error " + format_double(run.test.joint_error) +
          " f1 " + format_double(run.test.f1) + (run.diverged ? " (diverged)" : ""));
    }
  }

  for (auto& vr : result.variants) {
    std::vector<double> err, f1;
    for (const auto& r : vr.runs)
      if (!r.diverged) {
        err.push_back(r.test.joint_error);
        f1.push_back(r.test.f1);
      }
    if (err.empty()) continue;
    vr.mean_error = num::mean_of(err);
    vr.std_error = num::stddev_of(err);
    vr.min_error = *std::min_element(err.begin(), err.end());
    vr.max_error = *std::max_element(err.begin(), err.end());
    vr.mean_f1 = num::mean_of(f1);
  }
  return result;
}

std::vector<OrderingCheck> check_ordering(const AblationResult& r) {
  std::vector<OrderingCheck> out;
  const auto usable = [&](const std::string& name) {
    const VariantResult* v = r.find(name);
    return v && v->n_valid() > 0 ? v : nullptr;
  };
  const auto compare = [&](const std::string& lhs, const std::string& rhs, double factor, const std::string& claim) {
    OrderingCheck c{claim, false, ""};
    const VariantResult* a = usable(lhs);
    const VariantResult* b = usable(rhs);
    if (!a || !b) {
      c.detail = "missing or diverged: " + std::string(!a ? lhs : rhs);
    } else {
      c.pass = a->mean_error <= factor * b->mean_error;
      c.detail = lhs + " " + format_double(a->mean_error) + (c.pass ? " <= " : " > ") +
                 (factor == 1.0 ? "" : format_double(factor) + " * ") + rhs + " " + format_double(b->mean_error);
    }
    out.push_back(std::move(c));
  };
  for (const char* partial : {"G", "L", "G+CA", "G+L", "CA+L"})
    compare("G+CA+L", partial, 1.0, "full <= " + std::string(partial));
  for (const char* v : {"G", "L", "G+CA", "G+L", "CA+L", "G+CA+L"})
    compare(v, "mlp", 0.9, std::string(v) + " beats mlp by 10%");
  compare("local_bi", "uni", 1.0, "local_bi <= uni");
  return out;
}

Report ablation_report(const train::RunConfig& cfg, const AblationResult& r, const std::vector<OrderingCheck>& checks) {
  Report rep;
  rep.command = "ablate";
  rep.doc["config"] = cfg.to_text();
  Table runs{{"variant", "seed", "joint_error", "f1", "test_loss", "initial_loss", "final_loss", "diverged"}, {}};
  Table summary{{"variant", "n", "mean_error", "std_error", "min_error", "max_error", "mean_f1"}, {}};
  Json variants = Json::array();
  for (const auto& v : r.variants) {
    Json jr = Json::array();
    for (const auto& s : v.runs) {
      jr.push_back({{"seed", s.seed},
                    {"joint_error", s.test.joint_error},
                    {"f1", s.test.f1},
                    {"test_loss", s.test.loss},
                    {"initial_loss", s.initial_loss},
                    {"final_loss", s.final_loss},
                    {"diverged", s.diverged}});
      runs.add_row({v.variant.name, std::to_string(s.seed), format_double(s.test.joint_error), format_double(s.test.f1),
                    format_double(s.test.loss), format_double(s.initial_loss), format_double(s.final_loss),
                    s.diverged ? "1" : "0"});
    }
    variants.push_back({{"name", v.variant.name},
                        {"global", v.variant.global},
                        {"cross", v.variant.cross},
                        {"local", v.variant.local},
                        {"local_mixer", block::to_string(v.variant.local_mixer)},
                        {"runs", jr},
                        {"mean_error", v.mean_error},
                        {"std_error", v.std_error},
                        {"min_error", v.min_error},
                        {"max_error", v.max_error},
                        {"mean_f1", v.mean_f1}});
    summary.add_row({v.variant.name, std::to_string(v.n_valid()), format_double(v.mean_error),
                     format_double(v.std_error), format_double(v.min_error), format_double(v.max_error),
                     format_double(v.mean_f1)});
    if (v.n_valid() < v.runs.size())
      rep.doc["warnings"].push_back(v.variant.name + ": " + std::to_string(v.runs.size() - v.n_valid()) +
                                    " diverged run(s) excluded");
  }
  rep.doc["variants"] = variants;
  Json jc = Json::array();
  for (const auto& c : checks) jc.push_back({{"claim", c.claim}, {"pass", c.pass}, {"detail", c.detail}});
  rep.doc["ordering"] = jc;
  rep.tables["ablation_runs"] = std::move(runs);
  rep.tables["ablation_summary"] = std::move(summary);
  return rep;
}

}  // namespace emo::app
