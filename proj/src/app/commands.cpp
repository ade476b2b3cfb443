#include "emo/app/commands.hpp"

#include "emo/decoder/decoder.hpp"

namespace emo::app {

namespace {

Json metrics_json(const train::Metrics& m) {
  return {{"joint_error", m.joint_error}, {"f1", m.f1}, {"loss", m.loss}};
}

}  // namespace

TrainOutcome run_train(const train::RunConfig& cfg, const std::function<void(const train::StepLog&)>& on_step) {
  const train::Datasets data = train::make_datasets(cfg);
  const scene::BodyModel body = train::body_for(cfg.decoder.topo);
  TrainOutcome out{train::train_model(cfg, data.train, on_step), {}, {}, {}};
  out.test = train::evaluate(cfg, out.result.model, body, data.test);
  out.train = train::evaluate(cfg, out.result.model, body, data.train);

  Report& rep = out.report;
  rep.command = "train";
  rep.doc["config"] = cfg.to_text();
  std::vector<std::string> cols{"step", "total", "select", "grad_norm"};
  const std::size_t n_stages = cfg.decoder.n_layers;
  for (std::size_t s = 0; s < n_stages; ++s)
    for (const char* term : {"cls", "box", "j2d", "param", "kp3d", "kp2d", "weighted"})
      cols.push_back("stage" + std::to_string(s) + "_" + term);
  Table curve{cols, {}};
  for (const auto& log : out.result.curve) {
    std::vector<std::string> row{std::to_string(log.step), format_double(log.breakdown.total),
                                 format_double(log.breakdown.select), format_double(log.grad_norm)};
    for (std::size_t s = 0; s < n_stages; ++s) {
      const heads::StageTerms t = s < log.breakdown.stages.size() ? log.breakdown.stages[s] : heads::StageTerms{};
      for (double v : {t.cls, t.box, t.j2d, t.param, t.kp3d, t.kp2d, t.weighted}) row.push_back(format_double(v));
    }
    curve.add_row(std::move(row));
  }
  rep.doc["initial_loss"] = out.result.curve.front().breakdown.total;
  rep.doc["final_loss"] = out.result.curve.back().breakdown.total;
  rep.doc["diverged"] = out.result.diverged;
  if (out.result.diverged) rep.doc["diagnostic"] = out.result.diagnostic;
  rep.doc["test"] = metrics_json(out.test);
  rep.doc["train"] = metrics_json(out.train);
  rep.tables["train_curve"] = std::move(curve);
  return out;
}

void write_train_outputs(const std::filesystem::path& dir, const train::RunConfig& cfg, const TrainOutcome& out) {
  out.report.write(dir, cfg.to_text());
  decoder::to_archive(out.result.model.named_parameters()).save(dir / "checkpoint");
}

std::string deterministic_part(const Report& report) {
  Json doc = report.doc;
  // Timings are the only non-reproducible fields.
  if (doc.contains("points"))
    for (auto& p : doc["points"]) {
      p.erase("trial_ns");
      p.erase("median_ns");
      p.erase("inner");
    }
  if (doc.contains("fits"))
    for (auto& [name, f] : doc["fits"].items()) f.erase("wall");
  std::string s = report.command + '\n' + doc.dump() + '\n';
  for (const auto& [name, t] : report.tables) {
    if (name == "bench_trials" || name == "bench_summary") continue;
    s += name + '\n' + t.to_csv();
  }
  return s;
}

}  // namespace emo::app
