#include "aime/barrier/barrier.hpp"

#include <cmath>
#include <stdexcept>

namespace aime::barrier {

namespace {

using data::SubsequenceBatch;
using nn::Graph;
using nn::Tape;
using nn::Var;

/// Actions of episode i, whether stored inline or on the oracle side.
const data::MatF& episode_actions(const EpisodeStore& store, std::size_t i) {
    if (store.episode(i).has_actions()) return store.episode(i).actions;
    if (store.has_oracle_actions(i)) return store.oracle_actions(i);
    throw std::invalid_argument("episode carries no actions, not even oracle ones");
}

/// Uniform subsequence batch whose actions come from episode_actions, so
/// action-free demonstration stores can feed action-supervised training.
SubsequenceBatch sample_oracle_batch(const EpisodeStore& store, int B, int L,
                                     Rng& rng) {
    if (store.empty()) throw std::invalid_argument("empty episode store");
    std::vector<std::pair<std::size_t, int>> index;
    for (std::size_t e = 0; e < store.size(); ++e) {
        episode_actions(store, e);  // throws early when actions are missing
        int T = store.episode(e).steps();
        for (int s = 0; s + L <= T; ++s) index.emplace_back(e, s);
    }
    if (index.empty())
        throw std::invalid_argument("no subsequence of the requested length");

    const int obs_dim = static_cast<int>(store.episode(0).observations.cols());
    const int act_dim = static_cast<int>(episode_actions(store, 0).cols());
    SubsequenceBatch batch;
    batch.obs.assign(L + 1, Mat(B, obs_dim));
    batch.act.assign(L, Mat(B, act_dim));
    for (int b = 0; b < B; ++b) {
        auto [e, s] = index[rng.below(index.size())];
        const auto& obs = store.episode(e).observations;
        const auto& act = episode_actions(store, e);
        for (int t = 0; t <= L; ++t)
            batch.obs[t].row(b) = obs.row(s + t).cast<double>();
        for (int t = 0; t < L; ++t)
            batch.act[t].row(b) = act.row(s + t).cast<double>();
    }
    batch.source_mask.assign(B, 1);
    batch.srew_valid.assign(B, 0);
    batch.srew.assign(L, Vec::Zero(B));
    return batch;
}

}  // namespace

double ekb_bound(double r_max, int horizon, double epsilon) {
    if (r_max < 0.0 || horizon < 0 || epsilon < 0.0)
        throw std::invalid_argument("bound inputs must be nonnegative");
    return 2.0 * std::sqrt(2.0) * r_max * horizon * (horizon + 1.0) * epsilon;
}

double dkb_bound(double eta, int horizon, double r_max) {
    if (eta < 0.0 || eta > 1.0)
        throw std::invalid_argument("support ratio must lie in [0, 1]");
    if (horizon < 0 || r_max < 0.0)
        throw std::invalid_argument("bound inputs must be nonnegative");
    return 2.0 * (1.0 - eta) * horizon * r_max;
}

double support_ratio(const Mat& demo_initial_states, const Mat& atoms,
                     const Vec& weights, double match_tol) {
    if (atoms.rows() == 0 || atoms.rows() != weights.size())
        throw std::invalid_argument("one weight per atom required");
    if (weights.minCoeff() < 0.0 || std::abs(weights.sum() - 1.0) > 1e-8)
        throw std::invalid_argument("weights must be a probability vector");
    if (match_tol < 0.0)
        throw std::invalid_argument("match tolerance must be nonnegative");
    if (demo_initial_states.rows() > 0 &&
        demo_initial_states.cols() != atoms.cols())
        throw std::invalid_argument("state dimension mismatch");

    double eta = 0.0;
    for (Eigen::Index k = 0; k < atoms.rows(); ++k) {
        bool covered = false;
        for (Eigen::Index n = 0; n < demo_initial_states.rows() && !covered;
             ++n)
            covered = (demo_initial_states.row(n) - atoms.row(k)).norm() <=
                      match_tol;
        if (covered) eta += weights(k);
    }
    return eta;
}

double train_mbbc(const WorldModel& model, const EpisodeStore& demos,
                  int iters, Policy& policy, Adam& opt, Rng& rng, int batch,
                  int seq) {
    if (demos.empty()) throw std::invalid_argument("empty demonstration store");
    if (iters < 0) throw std::invalid_argument("iteration count must be >= 0");
    double last = std::numeric_limits<double>::quiet_NaN();
    for (int it = 0; it < iters; ++it) {
        SubsequenceBatch b = sample_oracle_batch(demos, batch, seq, rng);
        auto states = model.filter_sequence(b, rng);

        Tape t;
        Graph g(t, true);
        // Action a_t is taken at the state inferred after observation t.
        std::vector<Var> lps;
        for (int k = 0; k < seq; ++k)
            lps.push_back(policy.log_prob_graph(
                g, t.constant(states[k].feat()), b.act[k]));
        Var objective = t.mean_all(t.vstack(lps));
        last = t.val(objective)(0, 0);
        t.backward(t.neg(objective));
        opt.step(policy.params(), g);
    }
    return last;
}

double action_mse(const WorldModel& model, const Policy& policy,
                  const EpisodeStore& probe, Rng& rng) {
    if (probe.empty()) throw std::invalid_argument("empty probe store");
    double sq_sum = 0.0;
    long count = 0;
    for (std::size_t e = 0; e < probe.size(); ++e) {
        const auto& ep = probe.episode(e);
        const auto& act = episode_actions(probe, e);
        const int T = ep.steps();

        SubsequenceBatch b;
        for (int t = 0; t <= T; ++t)
            b.obs.push_back(ep.observations.row(t).cast<double>());
        for (int t = 0; t < T; ++t)
            b.act.push_back(act.row(t).cast<double>());
        auto states = model.filter_sequence(b, rng);

        Mat feats(T, states[0].feat().cols());
        for (int t = 0; t < T; ++t) feats.row(t) = states[t].feat();
        Mat mean_actions = policy.act(feats, Policy::Mode::Mean, rng);
        Mat diff = mean_actions - act.cast<double>();
        sq_sum += diff.squaredNorm();
        count += diff.size();
    }
    return sq_sum / static_cast<double>(count);
}

double epsilon_hat(const WorldModel& model, const Policy& policy,
                   const EpisodeStore& demos, Rng& rng) {
    if (demos.empty()) throw std::invalid_argument("empty demonstration store");
    constexpr double kLimit = 1.0 - 1e-6;

    // Diagonal Gaussian fit to the pooled unsquashed demo actions.
    std::vector<Mat> all_unsquashed;
    long rows = 0;
    for (std::size_t e = 0; e < demos.size(); ++e) {
        Mat a = episode_actions(demos, e).cast<double>();
        Mat u = a.cwiseMax(-kLimit).cwiseMin(kLimit).unaryExpr(
            [](double x) { return std::atanh(x); });
        all_unsquashed.push_back(u);
        rows += u.rows();
    }
    const int act_dim = static_cast<int>(all_unsquashed[0].cols());
    Vec mu = Vec::Zero(act_dim), var = Vec::Zero(act_dim);
    for (const Mat& u : all_unsquashed) mu += u.colwise().sum().transpose();
    mu /= static_cast<double>(rows);
    for (const Mat& u : all_unsquashed)
        var += (u.rowwise() - mu.transpose())
                   .array()
                   .square()
                   .colwise()
                   .sum()
                   .matrix()
                   .transpose();
    var /= static_cast<double>(rows);
    Vec sigma = var.cwiseMax(1e-6).cwiseSqrt();

    // Mean per-step KL from the fit to the policy's unsquashed distribution
    // at the corresponding posterior states.
    double kl_sum = 0.0;
    long steps = 0;
    for (std::size_t e = 0; e < demos.size(); ++e) {
        const auto& ep = demos.episode(e);
        const auto& act = episode_actions(demos, e);
        const int T = ep.steps();
        data::SubsequenceBatch b;
        for (int t = 0; t <= T; ++t)
            b.obs.push_back(ep.observations.row(t).cast<double>());
        for (int t = 0; t < T; ++t)
            b.act.push_back(act.row(t).cast<double>());
        auto states = model.filter_sequence(b, rng);

        Mat feats(T, states[0].feat().cols());
        for (int t = 0; t < T; ++t) feats.row(t) = states[t].feat();
        Tape tape;
        Graph g(tape, false);
        auto dist = policy.dist_graph(g, tape.constant(feats));
        Mat m = tape.val(dist.mean), s = tape.val(dist.std);
        for (int t = 0; t < T; ++t) {
            double kl = 0.0;
            for (int d = 0; d < act_dim; ++d) {
                double sq = sigma(d), sp = s(t, d);
                kl += std::log(sp / sq) +
                      (sq * sq + (mu(d) - m(t, d)) * (mu(d) - m(t, d))) /
                          (2.0 * sp * sp) -
                      0.5;
            }
            kl_sum += kl;
            ++steps;
        }
    }
    return std::max(0.0, kl_sum / static_cast<double>(steps));
}

}  // namespace aime::barrier
