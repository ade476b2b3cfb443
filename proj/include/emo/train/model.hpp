#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "emo/train/config.hpp"

namespace emo::train {

struct Model {
  decoder::DecoderWeights decoder;
  heads::HeadWeights heads;

  static Model init(const RunConfig& cfg, std::uint64_t seed);
  nn::NamedParams named_parameters() const;
};

struct ModelOutput {
  decoder::TokenSelection selection;
  std::vector<heads::StageOutput> stages;  // one per decoder layer
};

// The standard anthropometric body for the default skeleton, a generated
// layout for any other tree.
scene::BodyModel body_for(const scan::SkeletonTopology& topo);

ModelOutput forward(const RunConfig& cfg, const Model& model, const scene::BodyModel& body, const Var& features);

struct SampleLoss {
  heads::LossResult loss;  // total includes the weighted selection term
  ModelOutput output;
};
SampleLoss sample_loss(const RunConfig& cfg, const Model& model, const scene::BodyModel& body,
                       const scene::SceneSample& sample);

struct Metrics {
  double joint_error = 0.0;  // mean 2-D joint distance, normalized image units
  double f1 = 0.0;           // detection F1 at score 0.5, IoU 0.5
  double loss = 0.0;         // mean total loss
};
Metrics evaluate(const RunConfig& cfg, const Model& model, const scene::BodyModel& body,
                 const std::vector<scene::SceneSample>& data);

struct StepLog {
  std::size_t step = 0;
  double grad_norm = 0.0;             // before clipping
  heads::LossBreakdown breakdown;     // averaged over the batch
};

struct TrainResult {
  Model model;  // last parameters with a finite loss
  std::vector<StepLog> curve;  // one entry per update, then the loss after the last one
  bool diverged = false;
  std::string diagnostic;
};

// Plain gradient descent with global-norm clipping. Batches cycle through
// `data` in a fixed seed-derived order.
TrainResult train_model(const RunConfig& cfg, const std::vector<scene::SceneSample>& data,
                        const std::function<void(const StepLog&)>& on_step = {});

struct Datasets {
  std::vector<scene::SceneSample> train, test;
};
Datasets make_datasets(const RunConfig& cfg);

}  // namespace emo::train
