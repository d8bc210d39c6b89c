#include "aime/io/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace aime::io {

double iqm(std::vector<double> scores) {
    if (scores.empty()) throw std::invalid_argument("iqm: no scores");
    std::sort(scores.begin(), scores.end());
    std::size_t drop = scores.size() / 4;
    double sum = 0.0;
    for (std::size_t i = drop; i < scores.size() - drop; ++i) sum += scores[i];
    return sum / static_cast<double>(scores.size() - 2 * drop);
}

namespace {
double quantile(std::vector<double>& sorted, double q) {
    double pos = q * static_cast<double>(sorted.size() - 1);
    std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
    double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}
}  // namespace

BootstrapInterval bootstrap_ci(const Eigen::MatrixXd& scores, int n_resamples,
                               double level, nn::Rng& rng) {
    if (scores.rows() < 1 || scores.cols() < 1)
        throw std::invalid_argument("bootstrap_ci: empty score matrix");
    if (n_resamples < 100)
        throw std::invalid_argument("bootstrap_ci: need at least 100 resamples");
    if (level <= 0.0 || level >= 1.0)
        throw std::invalid_argument("bootstrap_ci: level outside (0, 1)");

    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(scores.size()));
    for (Eigen::Index r = 0; r < scores.rows(); ++r)
        for (Eigen::Index c = 0; c < scores.cols(); ++c) flat.push_back(scores(r, c));
    double point = iqm(flat);

    BootstrapInterval out;
    if (scores.rows() < 2) {
        out.low = out.high = point;
        out.degenerate = true;
        return out;
    }

    std::size_t R = static_cast<std::size_t>(scores.rows());
    std::vector<double> stats(static_cast<std::size_t>(n_resamples));
    std::vector<double> sample;
    sample.reserve(flat.size());
    for (int i = 0; i < n_resamples; ++i) {
        sample.clear();
        for (std::size_t r = 0; r < R; ++r) {
            std::size_t pick = rng.below(R);
            for (Eigen::Index c = 0; c < scores.cols(); ++c)
                sample.push_back(scores(static_cast<Eigen::Index>(pick), c));
        }
        stats[static_cast<std::size_t>(i)] = iqm(sample);
    }
    std::sort(stats.begin(), stats.end());
    out.low = std::min(quantile(stats, (1.0 - level) / 2.0), point);
    out.high = std::max(quantile(stats, (1.0 + level) / 2.0), point);
    return out;
}

AggregateResult aggregate_scores(const Eigen::MatrixXd& raw_returns,
                                 const std::vector<double>& expert_returns,
                                 int n_resamples, double level, nn::Rng& rng) {
    if (raw_returns.cols() != static_cast<Eigen::Index>(expert_returns.size()))
        throw std::invalid_argument("aggregate_scores: one expert return per task");
    AggregateResult out;
    out.expert_returns = expert_returns;
    out.scores = raw_returns;
    for (Eigen::Index c = 0; c < out.scores.cols(); ++c) {
        double denom = expert_returns[static_cast<std::size_t>(c)];
        if (denom == 0.0)
            throw std::invalid_argument("aggregate_scores: zero expert return");
        out.scores.col(c) /= denom;
    }
    std::vector<double> flat;
    for (Eigen::Index r = 0; r < out.scores.rows(); ++r)
        for (Eigen::Index c = 0; c < out.scores.cols(); ++c)
            flat.push_back(out.scores(r, c));
    out.iqm = iqm(flat);
    auto ci = bootstrap_ci(out.scores, n_resamples, level, rng);
    out.ci_low = ci.low;
    out.ci_high = ci.high;
    return out;
}

}  // namespace aime::io
