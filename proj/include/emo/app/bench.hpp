#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "emo/app/report.hpp"
#include "emo/numerics/stats.hpp"
#include "emo/train/config.hpp"

namespace emo::app {

// The two paths differ only in the global mixer: bidirectional scan or
// single-head self attention, both at M = persons * joints tokens. Each is
// measured as the global mixer alone and as a whole SGLD layer, whose local
// block and cross attention add cost linear in M.
struct BenchPoint {
  std::string path;   // "scan" or "attention"
  std::string scope;  // "mixer" or "layer"
  std::size_t m = 0;
  std::uint64_t flops = 0;     // closed form
  std::uint64_t counted = 0;   // counter during one call
  std::size_t inner = 1;       // calls per timed trial
  std::vector<double> trial_ns;  // per call, one entry per rep
  double median_ns = 0.0;
};

struct PathFit {
  num::LineFit flops;      // whole grid
  num::LineFit flops_top;  // M >= M_max / 10
  num::LineFit wall;       // whole grid, median times
};

struct BenchResult {
  std::vector<BenchPoint> points;
  PathFit scan, attention;              // mixer scope
  PathFit scan_layer, attention_layer;  // layer scope
};

// Times and counts both paths over cfg.bench.m_grid. With `time_trials`
// false only the FLOP side runs (it is deterministic).
BenchResult run_bench(const train::RunConfig& cfg, bool time_trials = true,
                      const std::function<void(const std::string&)>& log = {});

Report bench_report(const train::RunConfig& cfg, const BenchResult& r);

// Pins the calling thread to one CPU and OpenMP to one thread for the scope.
class SingleThreadScope {
 public:
  SingleThreadScope();
  ~SingleThreadScope();
  SingleThreadScope(const SingleThreadScope&) = delete;
  SingleThreadScope& operator=(const SingleThreadScope&) = delete;

 private:
  int threads_;
  bool restore_mask_ = false;
  std::vector<unsigned char> mask_;
};

}  // namespace emo::app
