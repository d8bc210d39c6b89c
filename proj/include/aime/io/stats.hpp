#pragma once

#include "aime/nn/rng.hpp"

#include <Eigen/Dense>

#include <vector>

namespace aime::io {

/// Interquartile mean: sort, drop floor(n/4) scores from each tail, average
/// the rest. Permutation-invariant and monotone in every score.
double iqm(std::vector<double> scores);

struct BootstrapInterval {
    double low = 0.0;
    double high = 0.0;
    bool degenerate = false;  // fewer than 2 runs: interval is the point itself
};

/// Percentile bootstrap of the IQM over runs (rows of the score matrix are
/// resampled with replacement; columns are tasks). The interval is widened
/// if needed to contain the point IQM. Deterministic under the seed.
BootstrapInterval bootstrap_ci(const Eigen::MatrixXd& scores, int n_resamples,
                               double level, nn::Rng& rng);

/// Aggregated evaluation block: normalised scores with their headline IQM
/// and confidence interval.
struct AggregateResult {
    Eigen::MatrixXd scores;  // [runs, tasks], already normalised
    double iqm = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::vector<double> expert_returns;  // normalisation constants per task
};

AggregateResult aggregate_scores(const Eigen::MatrixXd& raw_returns,
                                 const std::vector<double>& expert_returns,
                                 int n_resamples, double level, nn::Rng& rng);

}  // namespace aime::io
