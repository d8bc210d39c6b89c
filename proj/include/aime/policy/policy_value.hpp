#pragma once

#include "aime/model/world_model.hpp"

#include <map>
#include <string>
#include <vector>

namespace aime::policy {

using data::SubsequenceBatch;
using model::LatentState;
using model::WorldModel;
using nn::Adam;
using nn::Graph;
using nn::Mat;
using nn::ParamSet;
using nn::Rng;
using nn::Tape;
using nn::Var;
using nn::Vec;

struct PolicyConfig {
    int feat_dim = 0;
    int act_dim = 0;
    std::vector<int> hidden{128, 128};
    double min_std = 0.01;
};

/// Tanh-squashed Gaussian policy: a trunk net emits the mean and (softplus)
/// scale of a pre-squash Gaussian; emitted actions are tanh(sample), so every
/// action lies strictly inside (-1, 1) per dimension. Log-densities include
/// the tanh change-of-variables correction.
class Policy {
public:
    enum class Mode { Sample, Mean };

    Policy(const PolicyConfig& cfg, Rng& init_rng);

    const PolicyConfig& config() const { return cfg_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    // -- value-level interface ------------------------------------------------
    /// Actions for a batch of latent-state features, [B, act_dim].
    Mat act(const Mat& feat, Mode mode, Rng& rng) const;
    /// Log-density of the given actions under the policy, one entry per row.
    Vec log_prob(const Mat& feat, const Mat& actions) const;

    // -- tape-level interface -------------------------------------------------
    struct DistVars {
        Var mean, std;  // pre-squash Gaussian parameters, each [B, act_dim]
    };
    DistVars dist_graph(Graph& g, Var feat) const;

    struct SampleVars {
        Var action;      // tanh-squashed, [B, act_dim]
        Var pre_squash;  // mean + std * noise
        Var log_prob;    // [B, 1], differentiable through the sample path
    };
    /// Reparameterised sample with the given standard-normal noise.
    SampleVars sample_graph(Graph& g, Var feat, const Mat& noise) const;

    /// Log-density of fixed external actions, [B, 1]. Gradients flow into the
    /// density parameters only.
    Var log_prob_graph(Graph& g, Var feat, const Mat& actions) const;

    std::map<std::string, Mat> state() const { return params_.state(); }
    void load_state(const std::map<std::string, Mat>& s) { params_.load_state(s); }

private:
    PolicyConfig cfg_;
    ParamSet params_;
    nn::Mlp trunk_;
};

/// Value net with a target copy that is only ever moved by Polyak averaging.
class ValueFunction {
public:
    ValueFunction(int feat_dim, const std::vector<int>& hidden, Rng& init_rng);

    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }
    ParamSet& target_params() { return target_params_; }
    const ParamSet& target_params() const { return target_params_; }

    Vec value(const Mat& feat) const;
    Vec target(const Mat& feat) const;
    Var value_graph(Graph& g, Var feat) const;
    Var target_graph(Graph& g, Var feat) const;

    /// One gradient step on the mean squared error against constant targets.
    /// Returns the pre-step loss. Errors on non-finite targets.
    double value_update(const Mat& feats, const Vec& targets, Adam& opt);

    /// target <- decay * target + (1 - decay) * value, elementwise.
    void polyak(double decay);

    std::map<std::string, Mat> state() const;
    void load_state(const std::map<std::string, Mat>& s);

private:
    ParamSet params_;
    ParamSet target_params_;
    nn::Mlp net_;
    nn::Mlp target_net_;
};

/// Finite-horizon TD(lambda) returns. rewards[t] is the reward earned
/// entering state t+1; values[t] is the bootstrap at state t, with values[H]
/// absorbing the tail beyond the horizon. Pure function.
Vec lambda_returns(const Vec& rewards, const Vec& values, double gamma,
                   double lambda);

/// Batched tape-level TD(lambda): rewards are H nodes of shape [B, 1], values
/// H+1 nodes of shape [B, 1]; returns H nodes.
std::vector<Var> lambda_returns_graph(Tape& t, const std::vector<Var>& rewards,
                                      const std::vector<Var>& values,
                                      double gamma, double lambda);

/// Negative evidence bound of an action-free demonstration batch where the
/// actions at every step are reparameterised samples from the policy at the
/// running posterior state. Differentiable w.r.t. the policy; model
/// parameters enter as constants when `g` was built with train=false.
Var aime_loss_graph(Graph& g, const SubsequenceBatch& demo_batch,
                    const WorldModel& model, const Policy& policy, Rng& rng);

/// Value-only wrapper over aime_loss_graph.
double aime_loss(const SubsequenceBatch& demo_batch, const WorldModel& model,
                 const Policy& policy, Rng& rng);

struct PolicyUpdateConfig {
    double beta = 1.0;         // weight of the imagined lambda-return term
    double entropy_w = 1e-4;   // entropy bonus weight
    double aime_weight = 1.0;  // weight of the demonstration evidence term
    int horizon = 15;          // imagination depth
    double gamma = 0.99;
    double lambda = 0.95;
};

struct PolicyUpdateReport {
    double objective = 0.0;   // value of the maximised objective before the step
    double aime_elbo = 0.0;   // demo evidence term (NaN when aime_weight = 0)
    double value_term = 0.0;  // mean imagined lambda-return (NaN when beta = 0)
    double entropy = 0.0;     // entropy estimate (NaN when beta = 0)
    double grad_norm = 0.0;   // NaN when the step was skipped (non-finite grads)
    /// Policy gradients of the maximised objective (ascent direction is the
    /// negative of these), keyed by parameter name; recorded pre-clip.
    std::map<std::string, Mat> gradients;
    /// Detached imagined states and their lambda-return targets, ready for a
    /// value_update call. Empty when beta = 0.
    Mat value_feats;
    Vec value_targets;
};

/// One ascent step on
///   aime_weight * ELBO(demo; actions ~ policy)
///   + beta * mean lambda-return of H-step imagined rollouts from
///     online_starts (bootstrapped with the target value net)
///   + entropy_w * policy entropy (pathwise estimate).
/// Gradients flow through reparameterised actions and the learned dynamics
/// but never into the world-model or value parameters. demo_batch may be
/// empty when aime_weight = 0; online_starts may be empty when beta = 0.
///
/// RNG contract: one draw is taken from rng up front to seed the imagination
/// branch; the demonstration branch then draws from rng directly in the same
/// order as aime_loss. Each branch therefore sees the same noise whether or
/// not the other branch is active.
PolicyUpdateReport policy_update(const SubsequenceBatch& demo_batch,
                                 const LatentState& online_starts,
                                 const WorldModel& model, Policy& policy,
                                 const ValueFunction& value,
                                 const PolicyUpdateConfig& cfg, Adam& opt,
                                 Rng& rng);

}  // namespace aime::policy
