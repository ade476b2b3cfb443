#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include "emo/app/report.hpp"
#include "emo/train/model.hpp"

namespace emo::app {

struct TrainOutcome {
  train::TrainResult result;
  train::Metrics test;
  train::Metrics train;
  Report report;
};

// Trains on the configured synthetic split and evaluates both splits.
TrainOutcome run_train(const train::RunConfig& cfg, const std::function<void(const train::StepLog&)>& on_step = {});

// Report plus checkpoint (<dir>/checkpoint.bin, .manifest).
void write_train_outputs(const std::filesystem::path& dir, const train::RunConfig& cfg, const TrainOutcome& out);

// The report with timing fields removed, serialized; equal strings mean
// bit-identical results.
std::string deterministic_part(const Report& report);

}  // namespace emo::app
