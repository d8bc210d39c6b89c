#pragma once

#include "aime/data/episode.hpp"
#include "aime/model/world_model.hpp"

#include <limits>
#include <string>
#include <vector>

namespace aime::rewards {

using data::Episode;
using data::EpisodeStore;
using model::WorldModel;
using model::WorldModelConfig;
using nn::Adam;
using nn::Graph;
using nn::Mat;
using nn::ParamSet;
using nn::Rng;
using nn::Tape;
using nn::Var;
using nn::Vec;

// ---------------------------------------------------------------------------
// Adversarial imitation

struct DiscriminatorConfig {
    int feat_dim = 0;
    /// Hidden widths of the tanh perceptron; empty makes the map linear.
    std::vector<int> hidden{1024, 1024};
    double gp_weight = 10.0;
};

/// Scalar-logit discriminator over encoder features. Hidden activations are
/// tanh so the input gradient (needed by the penalty term) has a closed
/// symbolic form on the same autodiff tape.
class Discriminator {
public:
    Discriminator(const DiscriminatorConfig& cfg, Rng& init_rng);

    const DiscriminatorConfig& config() const { return cfg_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    /// Unconstrained logits, one per feature row.
    Vec logits(const Mat& feats) const;

    Var logits_graph(Graph& g, Var feats) const;
    /// Gradient of the scalar output w.r.t. each input row, [N, F], built as
    /// a differentiable graph (so the penalty can train the parameters).
    Var input_gradient_graph(Graph& g, Var feats) const;

    /// One descent step on
    ///   mean D(neg) - mean D(pos)
    ///   + gp_weight * mean ||d D / d x||^2 at x = u*neg + (1-u)*pos,
    /// with u drawn uniformly per row pair. Returns the pre-step loss.
    double train_step(const Mat& neg_feats, const Mat& pos_feats, Adam& opt,
                      Rng& rng);

    std::map<std::string, Mat> state() const { return params_.state(); }
    void load_state(const std::map<std::string, Mat>& s) { params_.load_state(s); }

private:
    DiscriminatorConfig cfg_;
    ParamSet params_;
    std::vector<nn::Linear> layers_;
};

/// The discriminator objective as a tape graph with a fixed interpolation
/// batch (exposed so the gradient path can be validated independently).
Var discriminator_loss_graph(Graph& g, const Discriminator& disc,
                             const Mat& neg_feats, const Mat& pos_feats,
                             const Mat& interp_feats, double gp_weight);

/// log D - log(1-D) with D the logistic of the discriminator logit, clamped
/// to [1e-6, 1-1e-6]; equal to the clamped logit. One reward per row of obs,
/// computed on the world model's encoder features.
Vec ail_rewards(const Mat& obs, const WorldModel& model,
                const Discriminator& disc);

// ---------------------------------------------------------------------------
// Optimal transport

/// c_ij = 1 - cos(fa_i, fb_j), in [0, 2]. Errors on zero-norm rows.
Mat cosine_cost(const Mat& fa, const Mat& fb);

struct TransportPlan {
    Mat mu;    // [T, Td], nonnegative, row sums 1/T, column sums 1/Td
    Mat cost;  // the cost matrix the plan was solved for
    double total_cost = 0.0;
    /// L1 marginal violation of the raw alternating-scaling iterate before
    /// the exact rounding step (diagnostic for non-convergence).
    double sinkhorn_marginal_err = 0.0;
    int iters_used = 0;
};

/// Entropic-regularised transport between uniform marginals 1/T and 1/Td,
/// solved by log-domain alternating scaling and rounded to exact marginals.
TransportPlan solve_transport(const Mat& cost, double eps_reg, int max_iters);

/// Reward normalisation state: fixed from the first evaluated trajectory as
/// 4 / (its total transport cost) and frozen thereafter.
struct ScaleState {
    double lambda_scale = std::numeric_limits<double>::quiet_NaN();
    bool frozen() const { return lambda_scale == lambda_scale; }
};

/// Per-step rewards r_t = -lambda * sum_j mu_tj c_tj against the demo with
/// the lowest total transport cost. Observation rows 1..T of the trajectory
/// and of each demo enter the plan, so r_t labels the transition into
/// observation t+1.
Vec ot_rewards(const Episode& traj, const EpisodeStore& demos,
               const WorldModel& model, ScaleState& scale);

// ---------------------------------------------------------------------------
// Video-likelihood rewards

/// sign(x) * ln(1 + |x|).
double symlog(double x);

struct ViperModel {
    WorldModel model;
    long trained_steps = 0;
};

/// Trains an action-free latent model on demo observation subsequences for
/// exactly budget_steps optimiser steps. cfg.act_dim must be 0.
ViperModel train_viper(const EpisodeStore& demos, int budget_steps,
                       const WorldModelConfig& cfg, Rng& rng, int batch = 16,
                       int seq = 8);

/// r_t = symlog(per-step evidence contribution of observation t+1) for
/// t = 0..T-1, under the action-free model (no free-nats clipping).
Vec viper_rewards(const Mat& obs_seq, const ViperModel& viper, Rng& rng);

}  // namespace aime::rewards
