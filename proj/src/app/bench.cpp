#include "emo/app/bench.hpp"

#include <omp.h>
#include <pthread.h>
#include <sched.h>

#include <chrono>
#include <cmath>
#include <cstring>

#include "emo/decoder/decoder.hpp"
#include "emo/error.hpp"
#include "emo/numerics/flops.hpp"

namespace emo::app {

SingleThreadScope::SingleThreadScope() : threads_(omp_get_max_threads()) {
  omp_set_num_threads(1);
  cpu_set_t old;
  CPU_ZERO(&old);
  if (pthread_getaffinity_np(pthread_self(), sizeof(old), &old) == 0) {
    int first = -1;
    for (int c = 0; c < CPU_SETSIZE && first < 0; ++c)
      if (CPU_ISSET(c, &old)) first = c;
    if (first >= 0) {
      cpu_set_t one;
      CPU_ZERO(&one);
      CPU_SET(first, &one);
      if (pthread_setaffinity_np(pthread_self(), sizeof(one), &one) == 0) {
        mask_.resize(sizeof(old));
        std::memcpy(mask_.data(), &old, sizeof(old));
        restore_mask_ = true;
      }
    }
  }
}

SingleThreadScope::~SingleThreadScope() {
  omp_set_num_threads(threads_);
  if (restore_mask_) {
    cpu_set_t old;
    std::memcpy(&old, mask_.data(), sizeof(old));
    pthread_setaffinity_np(pthread_self(), sizeof(old), &old);
  }
}

namespace {

using Clock = std::chrono::steady_clock;
using num::Var;

decoder::DecoderConfig path_config(const train::RunConfig& cfg, block::MixerKind global) {
  decoder::DecoderConfig d = cfg.decoder;
  d.dim = cfg.bench.dim;
  d.n_layers = 1;
  d.attn_heads = 1;
  std::vector<int> chain(cfg.bench.joints);
  for (std::size_t j = 0; j < chain.size(); ++j) chain[j] = static_cast<int>(j) - 1;
  d.topo = scan::SkeletonTopology::from_parents(chain);
  d.use_global = d.use_cross = d.use_local = true;
  d.global_mixer = global;
  d.local_mixer = block::MixerKind::kLocalBidirectional;
  return d;
}

BenchPoint measure(const train::RunConfig& cfg, const std::string& path, const std::string& scope,
                   block::MixerKind global, std::size_t m, bool time_trials) {
  const auto dcfg = path_config(cfg, global);
  EMO_CHECK(m % dcfg.n_joints() == 0, ConfigError,
            "bench: M=" + std::to_string(m) + " is not a multiple of the joint count");
  dcfg.validate();
  const std::size_t persons = m / dcfg.n_joints();
  num::Rng rng(num::Rng::mix(0xbe7c4ULL ^ m));
  const auto w = decoder::DecoderWeights::init(rng, dcfg);
  const Var features = Var::constant(rng.normal_tensor({cfg.bench.patches, dcfg.dim}, 1.0));
  const decoder::HumanQueries q{Var::constant(rng.normal_tensor({m, dcfg.dim}, 1.0)),
                                Var::constant(rng.uniform_tensor({m, 4}, 0.2, 0.8)), persons, dcfg.n_joints()};
  num::Tape::Pause pause;
  const auto kv = attn::project_memory(features, w.layers[0].cross);
  const bool layer = scope == "layer";
  const auto gcfg = dcfg.global_block();
  const auto call = [&] {
    if (layer) return decoder::sgld_layer(dcfg, w.layers[0], q, kv).q;
    return block::token_mixer(gcfg, w.layers[0].global, q.q);
  };

  BenchPoint p;
  p.path = path;
  p.scope = scope;
  p.m = m;
  p.flops = layer ? decoder::sgld_layer_flops(dcfg, persons, cfg.bench.patches) : block::token_mixer_flops(gcfg, m);
  {
    const num::FlopScope scope;
    call();
    p.counted = scope.elapsed();
  }
  if (!time_trials) return p;

  const auto time_once = [&](std::size_t inner) {
    const auto t0 = Clock::now();
    for (std::size_t i = 0; i < inner; ++i) call();
    return std::chrono::duration<double, std::nano>(Clock::now() - t0).count() / static_cast<double>(inner);
  };
  // Grow the inner count until one trial spans min_trial_ms.
  const double target_ns = cfg.bench.min_trial_ms * 1e6;
  double single = time_once(1);
  while (single * static_cast<double>(p.inner) < target_ns) {
    p.inner = static_cast<std::size_t>(std::ceil(target_ns / std::max(single, 1.0)));
    single = time_once(p.inner);
  }
  for (std::size_t i = 0; i < cfg.bench.warmups; ++i) time_once(p.inner);
  for (std::size_t i = 0; i < cfg.bench.reps; ++i) p.trial_ns.push_back(time_once(p.inner));
  p.median_ns = num::median(p.trial_ns);
  return p;
}

PathFit fit_path(const std::vector<BenchPoint>& pts, const std::string& path, const std::string& scope, bool timed) {
  std::vector<double> m, f, mt, ft, t;
  double m_max = 0.0;
  const auto wanted = [&](const BenchPoint& p) { return p.path == path && p.scope == scope; };
  for (const auto& p : pts)
    if (wanted(p)) m_max = std::max(m_max, static_cast<double>(p.m));
  for (const auto& p : pts) {
    if (!wanted(p)) continue;
    m.push_back(static_cast<double>(p.m));
    f.push_back(static_cast<double>(p.flops));
    t.push_back(p.median_ns);
    if (static_cast<double>(p.m) * 10.0 >= m_max) {
      mt.push_back(static_cast<double>(p.m));
      ft.push_back(static_cast<double>(p.flops));
    }
  }
  PathFit fit;
  fit.flops = num::fit_loglog(m, f);
  fit.flops_top = num::fit_loglog(mt, ft);
  if (timed) fit.wall = num::fit_loglog(m, t);
  return fit;
}

Json fit_json(const num::LineFit& f) {
  return Json{{"slope", f.slope}, {"intercept", f.intercept}, {"residual_rms", f.residual_rms}};
}

}  // namespace

BenchResult run_bench(const train::RunConfig& cfg, bool time_trials,
                      const std::function<void(const std::string&)>& log) {
  const auto& grid = cfg.bench.m_grid;
  EMO_CHECK(grid.size() >= 2, ConfigError, "bench: need at least two M values");
  for (std::size_t i = 1; i < grid.size(); ++i)
    EMO_CHECK(grid[i] > grid[i - 1], ConfigError, "bench: M grid must be strictly increasing");
  EMO_CHECK(!time_trials || cfg.bench.reps >= 5, ConfigError, "bench: reps must be at least 5");
  BenchResult r;
  const SingleThreadScope single;
  const std::pair<const char*, block::MixerKind> paths[] = {{"scan", block::MixerKind::kBidirectional},
                                                            {"attention", block::MixerKind::kSelfAttention}};
  for (const auto& [name, kind] : paths)
    for (const char* scope : {"mixer", "layer"})
      for (std::size_t m : grid) {
        const BenchPoint& p = r.points.emplace_back(measure(cfg, name, scope, kind, m, time_trials));
        if (!log) continue;
        log(std::string(name) + " " + scope + " M=" + std::to_string(m) + " flops=" + std::to_string(p.flops) +
            (time_trials ? " median_ms=" + format_double(p.median_ns * 1e-6) + " inner=" + std::to_string(p.inner)
                         : ""));
      }
  r.scan = fit_path(r.points, "scan", "mixer", time_trials);
  r.attention = fit_path(r.points, "attention", "mixer", time_trials);
  r.scan_layer = fit_path(r.points, "scan", "layer", time_trials);
  r.attention_layer = fit_path(r.points, "attention", "layer", time_trials);
  return r;
}

Report bench_report(const train::RunConfig& cfg, const BenchResult& r) {
  Report rep;
  rep.command = "bench";
  rep.doc["config"] = cfg.to_text();
  Json points = Json::array();
  Table trials{{"path", "scope", "m", "rep", "ns"}, {}};
  Table summary{{"path", "scope", "m", "flops", "counted_flops", "inner", "median_ns"}, {}};
  for (const auto& p : r.points) {
    points.push_back({{"path", p.path},
                      {"scope", p.scope},
                      {"m", p.m},
                      {"flops", p.flops},
                      {"counted_flops", p.counted},
                      {"inner", p.inner},
                      {"trial_ns", p.trial_ns},
                      {"median_ns", p.median_ns}});
    for (std::size_t i = 0; i < p.trial_ns.size(); ++i)
      trials.add_row({p.path, p.scope, std::to_string(p.m), std::to_string(i), format_double(p.trial_ns[i])});
    summary.add_row({p.path, p.scope, std::to_string(p.m), std::to_string(p.flops), std::to_string(p.counted),
                     std::to_string(p.inner), format_double(p.median_ns)});
  }
  rep.doc["points"] = points;
  Json fits = Json::object();
  for (const auto& [name, f] : {std::pair{"scan", &r.scan}, std::pair{"attention", &r.attention},
                                std::pair{"scan_layer", &r.scan_layer},
                                std::pair{"attention_layer", &r.attention_layer}})
    fits[name] = {{"flops", fit_json(f->flops)}, {"flops_top_decade", fit_json(f->flops_top)},
                  {"wall", fit_json(f->wall)}};
  rep.doc["fits"] = fits;
  rep.tables["bench_trials"] = std::move(trials);
  rep.tables["bench_summary"] = std::move(summary);
  return rep;
}

}  // namespace emo::app
