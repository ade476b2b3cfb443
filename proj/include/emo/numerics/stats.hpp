#pragma once

#include <vector>

namespace emo::num {

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double residual_rms = 0.0;
};

// Ordinary least squares y = slope * x + intercept.
LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y);
// Fit in log-log space (natural logs); inputs must be positive.
LineFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y);

double median(std::vector<double> values);
double mean_of(const std::vector<double>& values);
// Population standard deviation.
double stddev_of(const std::vector<double>& values);

}  // namespace emo::num
