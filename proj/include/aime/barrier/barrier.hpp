#pragma once

#include "aime/data/episode.hpp"
#include "aime/driver/driver.hpp"
#include "aime/model/world_model.hpp"
#include "aime/policy/policy_value.hpp"

#include <vector>

namespace aime::barrier {

using data::EpisodeStore;
using model::WorldModel;
using nn::Adam;
using nn::Mat;
using nn::Rng;
using nn::Vec;
using policy::Policy;

/// Decomposition of the expert-to-learner return gap into the part closed by
/// oracle action access (embodiment knowledge) and the remainder attributable
/// to limited demonstrations (demonstration knowledge), with the analytic
/// bound values alongside. Both gaps may come out negative in finite samples
/// and are recorded as-is.
struct BarrierReport {
    double r_expert = 0.0;
    double r_oracle = 0.0;   // behaviour cloning on true actions
    double r_learned = 0.0;  // imitation from observation alone
    double ekb = 0.0;        // r_oracle - r_learned
    double dkb = 0.0;        // r_expert - r_oracle
    double ekb_bound = 0.0;
    double dkb_bound = 0.0;
    int n_demos = 0;
    double epsilon_hat = 0.0;  // estimated action-inference error
    double eta_hat = 0.0;      // initial-state support ratio
};

/// 2 * sqrt(2) * r_max * T * (T + 1) * epsilon. Errors on negative inputs.
double ekb_bound(double r_max, int horizon, double epsilon);

/// 2 * (1 - eta) * T * r_max. Errors when eta is outside [0, 1] or the other
/// inputs are negative.
double dkb_bound(double eta, int horizon, double r_max);

/// Probability mass of the discrete initial distribution whose atoms are
/// matched by at least one demo initial state within match_tol (Euclidean).
/// Weights must be nonnegative and sum to 1 within 1e-8.
double support_ratio(const Mat& demo_initial_states, const Mat& atoms,
                     const Vec& weights, double match_tol);

/// Behaviour cloning of the demonstrations' oracle actions: ascends the
/// policy's log-likelihood of the recorded actions at posterior-filtered
/// states. The model is frozen. Throws when the store carries no oracle
/// actions. Returns the mean action log-likelihood of the final step.
double train_mbbc(const WorldModel& model, const EpisodeStore& demos,
                  int iters, Policy& policy, Adam& opt, Rng& rng, int batch = 8,
                  int seq = 8);

/// Mean squared error between the policy's mean-mode actions at
/// posterior-filtered states and the episodes' recorded actions. Episodes
/// must carry actions (directly or through the store's oracle side).
double action_mse(const WorldModel& model, const Policy& policy,
                  const EpisodeStore& probe, Rng& rng);

/// Estimated action-inference error: the mean per-step KL divergence between
/// a diagonal Gaussian fitted to the demonstrations' unsquashed oracle
/// actions and the policy's unsquashed action distribution at the
/// corresponding posterior states, clipped at zero. An artifact estimator,
/// not a quantity defined by the bound itself.
double epsilon_hat(const WorldModel& model, const Policy& policy,
                   const EpisodeStore& demos, Rng& rng);

/// The first n episodes of the pool as a standalone store with the same
/// name and action-free setting; held-out oracle actions survive the copy.
/// Throws when the pool holds fewer than n episodes.
EpisodeStore demo_subset(const EpisodeStore& pool, int n);

/// For each demo count: from the same pretrained model, train the
/// observation-only learner (the full online loop under cfg; a zero budget
/// gives the offline variant), behaviour cloning on oracle actions (same
/// iteration budget as cfg.pretrain_iters), and the scripted expert
/// reference; evaluate each and assemble the gap decomposition with its
/// bound values (r_max = 1: every desk task emits rewards in [0, 1]).
/// Arms are seeded independently from cfg.seed.
std::vector<BarrierReport> barrier_sweep(const driver::RunConfig& cfg,
                                         const WorldModel& pretrained,
                                         const std::vector<int>& demo_counts,
                                         env::Env& env,
                                         const EpisodeStore& body,
                                         const EpisodeStore& demo_pool,
                                         double match_tol = 0.2);

}  // namespace aime::barrier
