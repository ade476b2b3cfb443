#include "emo/train/model.hpp"

#include <cmath>
#include <numbers>

#include "emo/error.hpp"
#include "emo/numerics/ops.hpp"

namespace emo::train {

Model Model::init(const RunConfig& cfg, std::uint64_t seed) {
  num::Rng rng(seed);
  num::Rng dec_rng = rng.fork(1), head_rng = rng.fork(2);
  return {decoder::DecoderWeights::init(dec_rng, cfg.decoder), heads::HeadWeights::init(head_rng, cfg.decoder.dim)};
}

nn::NamedParams Model::named_parameters() const {
  nn::NamedParams p = decoder.named_parameters("decoder.");
  nn::append(p, heads.named_parameters("head."));
  return p;
}

scene::BodyModel body_for(const scan::SkeletonTopology& topo) {
  if (topo.parent == scan::default_topology().parent) return scene::BodyModel::standard();
  return scene::BodyModel::for_topology(topo);
}

ModelOutput forward(const RunConfig& cfg, const Model& model, const scene::BodyModel& body, const Var& features) {
  const decoder::StubEncoder encoder(cfg.scene.encoder);
  std::vector<std::pair<double, double>> centers;
  for (std::size_t p = 0; p < cfg.scene.encoder.n_patches(); ++p) centers.push_back(encoder.patch_center(p));
  decoder::DecodeResult d = decoder::run_decoder(cfg.decoder, model.decoder, features, centers);
  ModelOutput out;
  out.selection = std::move(d.selection);
  for (const auto& q : d.stages) out.stages.push_back(heads::predict(cfg.head, model.heads, body, cfg.scene.camera, q));
  return out;
}

SampleLoss sample_loss(const RunConfig& cfg, const Model& model, const scene::BodyModel& body,
                       const scene::SceneSample& sample) {
  SampleLoss s;
  s.output = forward(cfg, model, body, Var::constant(sample.features));
  s.loss = heads::total_loss(s.output.stages, sample.persons, cfg.loss);
  const decoder::StubEncoder encoder(cfg.scene.encoder);
  const Tensor targets = heads::selection_targets(encoder, sample.persons);
  const Var select = heads::selection_loss(s.output.selection.logits, targets, cfg.loss, sample.persons.size());
  s.loss.breakdown.select = select.value().item();
  s.loss.breakdown.total += cfg.loss.select * s.loss.breakdown.select;
  s.loss.total = num::add(s.loss.total, num::scale(select, cfg.loss.select));
  return s;
}

Metrics evaluate(const RunConfig& cfg, const Model& model, const scene::BodyModel& body,
                 const std::vector<scene::SceneSample>& data) {
  num::Tape::Pause pause;
  heads::JointError err;
  heads::DetectionCounts counts;
  double loss = 0.0;
  for (const auto& sample : data) {
    const SampleLoss s = sample_loss(cfg, model, body, sample);
    const auto& last = s.output.stages.back();
    const auto e = heads::joint_error(last, sample.persons, cfg.loss);
    err.sum += e.sum;
    err.count += e.count;
    const auto c = heads::detection_counts(last, sample.persons);
    counts.tp += c.tp;
    counts.fp += c.fp;
    counts.fn += c.fn;
    loss += s.loss.breakdown.total;
  }
  return {err.mean(), counts.f1(), data.empty() ? 0.0 : loss / static_cast<double>(data.size())};
}

namespace {

void accumulate(heads::LossBreakdown& into, const heads::LossBreakdown& b, double w) {
  if (into.stages.empty()) into.stages.resize(b.stages.size());
  for (std::size_t s = 0; s < b.stages.size(); ++s) {
    auto& d = into.stages[s];
    const auto& x = b.stages[s];
    d.cls += w * x.cls;
    d.box += w * x.box;
    d.j2d += w * x.j2d;
    d.param += w * x.param;
    d.kp3d += w * x.kp3d;
    d.kp2d += w * x.kp2d;
    d.weighted += w * x.weighted;
  }
  into.select += w * b.select;
  into.total += w * b.total;
}

}  // namespace

TrainResult train_model(const RunConfig& cfg, const std::vector<scene::SceneSample>& data,
                        const std::function<void(const StepLog&)>& on_step) {
  EMO_CHECK(!data.empty(), ConfigError, "train_model: empty dataset");
  const scene::BodyModel body = body_for(cfg.decoder.topo);
  TrainResult result;
  result.model = Model::init(cfg, cfg.optimizer.seed);
  nn::NamedParams params = result.model.named_parameters();
  std::vector<Tensor> last_good;
  num::Rng order_rng(num::Rng::mix(cfg.optimizer.seed ^ 0x5eedULL));
  std::vector<std::size_t> order = order_rng.permutation(data.size());
  std::size_t cursor = 0;
  const std::size_t batch = std::min(cfg.optimizer.batch_size, data.size());
  const double inv_batch = 1.0 / static_cast<double>(batch);

  for (std::size_t step = 0; step <= cfg.optimizer.steps; ++step) {
    const bool update = step < cfg.optimizer.steps;
    StepLog log;
    log.step = step;
    for (auto& [name, p] : params) p.zero_grad();
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == order.size()) {
        order = order_rng.permutation(data.size());
        cursor = 0;
      }
      const auto& sample = data[order[cursor++]];
      num::Tape tape;
      std::optional<num::Tape::Scope> scope;
      if (update) scope.emplace(tape);
      const SampleLoss s = sample_loss(cfg, result.model, body, sample);
      accumulate(log.breakdown, s.loss.breakdown, inv_batch);
      if (update) tape.backward(num::scale(s.loss.total, inv_batch));
    }
    if (!std::isfinite(log.breakdown.total)) {
      result.diverged = true;
      result.diagnostic = "non-finite loss at step " + std::to_string(step) + "; parameters restored from step " +
                          std::to_string(step == 0 ? 0 : step - 1);
      if (!last_good.empty())
        for (std::size_t i = 0; i < params.size(); ++i) params[i].second.mutable_value() = last_good[i];
      break;
    }
    if (update) {
      double sq = 0.0;
      for (const auto& [name, p] : params)
        if (p.has_grad())
          for (double g : p.grad().data()) sq += g * g;
      log.grad_norm = std::sqrt(sq);
      if (!std::isfinite(log.grad_norm)) {
        result.diverged = true;
        result.diagnostic = "non-finite gradient at step " + std::to_string(step);
        result.curve.push_back(log);
        break;
      }
      last_good.clear();
      for (const auto& [name, p] : params) last_good.push_back(p.value());
      // Cosine decay from step_size to zero over the run.
      const double decay = 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) /
                                                 static_cast<double>(cfg.optimizer.steps)));
      const double scale = cfg.optimizer.step_size * decay *
                           std::min(1.0, cfg.optimizer.clip_norm / std::max(log.grad_norm, 1e-300));
      for (auto& [name, p] : params) {
        if (!p.has_grad()) continue;
        Tensor& v = p.mutable_value();
        const Tensor& g = p.grad();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= scale * g[i];
      }
    }
    if (on_step) on_step(log);
    result.curve.push_back(std::move(log));
  }
  return result;
}

Datasets make_datasets(const RunConfig& cfg) {
  const scene::SceneGenerator gen(cfg.scene, body_for(cfg.decoder.topo));
  return {scene::make_dataset(gen, cfg.data.train_size, cfg.data.seed),
          scene::make_dataset(gen, cfg.data.test_size, num::Rng::mix(cfg.data.seed ^ 0x7e57ULL))};
}

}  // namespace emo::train
