// Command-line entry point: verify, bench, train, ablate.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "emo/app/ablation.hpp"
#include "emo/app/bench.hpp"
#include "emo/app/commands.hpp"
#include "emo/app/verify.hpp"
#include "emo/error.hpp"

namespace {

using emo::train::RunConfig;

RunConfig load_config(const std::string& path) {
  return path.empty() ? RunConfig::defaults() : RunConfig::load(path);
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

void say(const std::string& line) {
  std::cerr << line << std::endl;
}

int cmd_verify(const std::string& config, bool quick, const std::string& out) {
  emo::app::VerifyOptions opts;
  opts.cfg = load_config(config);
  opts.slow = !quick;
  std::cout << "# config\n" << opts.cfg.to_text();
  const auto results = emo::app::run_verification(opts, [](const emo::app::CheckResult& r) {
    std::printf("%s %d %s: %s (%.1f s)\n", r.skipped ? "SKIP" : (r.pass ? "PASS" : "FAIL"), r.id, r.name.c_str(),
                r.detail.c_str(), r.seconds);
    std::fflush(stdout);
  });
  bool ok = true;
  emo::app::Report rep;
  rep.command = "verify";
  rep.doc["config"] = opts.cfg.to_text();
  emo::app::Table table{{"id", "name", "status", "seconds"}, {}};
  for (const auto& r : results) {
    // A skipped check has still passed everything it ran.
    ok = ok && r.pass;
    const char* status = r.skipped ? "skip" : (r.pass ? "pass" : "fail");
    rep.doc["checks"].push_back(
        {{"id", r.id}, {"name", r.name}, {"status", status}, {"detail", r.detail}, {"seconds", r.seconds}});
    table.add_row({std::to_string(r.id), r.name, status, emo::app::format_double(r.seconds)});
  }
  rep.tables["verify"] = std::move(table);
  if (!out.empty()) rep.write(out, opts.cfg.to_text());
  return ok ? 0 : 1;
}

int cmd_bench(const std::string& config, const std::string& grid, std::size_t reps, const std::string& out) {
  RunConfig cfg = load_config(config);
  if (!grid.empty()) {
    cfg.bench.m_grid.clear();
    for (const auto& m : split(grid)) cfg.bench.m_grid.push_back(std::stoul(m));
  }
  if (reps) cfg.bench.reps = reps;
  const auto r = emo::app::run_bench(cfg, true, say);
  const auto rep = emo::app::bench_report(cfg, r);
  std::printf("FLOP slope  scan %.4f  attention %.4f (top decade %.4f)\n", r.scan.flops.slope,
              r.attention.flops.slope, r.attention.flops_top.slope);
  std::printf("wall slope  scan %.4f  attention %.4f\n", r.scan.wall.slope, r.attention.wall.slope);
  rep.write(out, cfg.to_text());
  return 0;
}

int cmd_train(const std::string& config, const std::string& out) {
  const RunConfig cfg = load_config(config);
  const std::size_t every = std::max<std::size_t>(1, cfg.optimizer.steps / 20);
  const auto o = emo::app::run_train(cfg, [&](const emo::train::StepLog& l) {
    if (l.step % every == 0 || l.step == cfg.optimizer.steps)
      say("step " + std::to_string(l.step) + " loss " + emo::app::format_double(l.breakdown.total) + " grad_norm " +
          emo::app::format_double(l.grad_norm));
  });
  emo::app::write_train_outputs(out, cfg, o);
  std::printf("loss %.6g -> %.6g  test joint error %.4f  test F1 %.3f\n", o.result.curve.front().breakdown.total,
              o.result.curve.back().breakdown.total, o.test.joint_error, o.test.f1);
  if (o.result.diverged) {
    std::fprintf(stderr, "diverged: %s\n", o.result.diagnostic.c_str());
    return 2;
  }
  return 0;
}

int cmd_ablate(const std::string& config, const std::string& variants, const std::string& seeds,
               const std::string& out) {
  RunConfig cfg = load_config(config);
  if (!variants.empty()) cfg.ablation.variants = split(variants);
  if (!seeds.empty()) {
    cfg.ablation.seeds.clear();
    for (const auto& s : split(seeds)) cfg.ablation.seeds.push_back(std::stoull(s));
  }
  std::vector<emo::app::Variant> vs;
  if (cfg.ablation.variants.empty()) {
    vs = emo::app::all_variants();
  } else {
    for (const auto& v : cfg.ablation.variants) vs.push_back(emo::app::find_variant(v));
  }
  const auto r = emo::app::run_ablation(cfg, vs, cfg.ablation.seeds, say);
  const auto checks = emo::app::check_ordering(r);
  for (const auto& v : r.variants)
    std::printf("%-10s error %.5f +- %.5f  F1 %.3f  (%zu/%zu runs)\n", v.variant.name.c_str(), v.mean_error,
                v.std_error, v.mean_f1, v.n_valid(), v.runs.size());
  for (const auto& c : checks) std::printf("%s %s: %s\n", c.pass ? "ok  " : "fail", c.claim.c_str(), c.detail.c_str());
  emo::app::ablation_report(cfg, r, checks).write(out, cfg.to_text());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scan-based global-local decoder: verification, benchmark, training and ablation"};
  app.require_subcommand(1);
  std::string config, out = "out", grid, variants, seeds;
  std::size_t reps = 0;
  bool quick = false;

  auto* verify = app.add_subcommand("verify", "Run the correctness suites; nonzero exit on any failure");
  verify->add_option("--config", config, "key = value config file");
  verify->add_flag("--quick", quick, "Skip wall-clock timing and the ablation");
  verify->add_option("--out", out, "Report directory (empty: no report)");

  auto* bench = app.add_subcommand("bench", "Time one layer with scan vs attention global mixing");
  bench->add_option("--config", config, "key = value config file");
  bench->add_option("--m-grid", grid, "Comma-separated token counts");
  bench->add_option("--reps", reps, "Timed repetitions per point (>= 5)");
  bench->add_option("--out", out, "Report directory");

  auto* train = app.add_subcommand("train", "Train on synthetic scenes and write a checkpoint");
  train->add_option("--config", config, "key = value config file");
  train->add_option("--out", out, "Report and checkpoint directory");

  auto* ablate = app.add_subcommand("ablate", "Train decoder variants over several seeds");
  ablate->add_option("--config", config, "key = value config file");
  ablate->add_option("--variants", variants, "Comma-separated: mlp,G,L,G+CA,G+L,CA+L,G+CA+L,uni,bi,local_uni,local_bi");
  ablate->add_option("--seeds", seeds, "Comma-separated seeds");
  ablate->add_option("--out", out, "Report directory");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*verify) return cmd_verify(config, quick, out);
    if (*bench) return cmd_bench(config, grid, reps, out);
    if (*train) return cmd_train(config, out);
    if (*ablate) return cmd_ablate(config, variants, seeds, out);
  } catch (const emo::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
