#pragma once

#include "aime/data/episode.hpp"
#include "aime/nn/modules.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace aime::model {

using data::SubsequenceBatch;
using nn::Adam;
using nn::Graph;
using nn::Mat;
using nn::ParamSet;
using nn::Rng;
using nn::Tape;
using nn::Var;
using nn::Vec;

struct WorldModelConfig {
    int obs_dim = 0;
    int act_dim = 0;      // 0 builds an unconditioned (action-free) model
    int embed_dim = 32;
    int det_size = 64;
    int stoch_size = 8;
    int hidden = 64;
    double free_nats = 1.0;
    double kl_balance = 0.8;
    double min_std = 0.1;
};

/// Batched latent state: rows are batch entries.
struct LatentState {
    Mat h;         // [B, det_size]
    Mat s_mean;    // [B, stoch_size]
    Mat s_std;
    Mat s_sample;

    int batch() const { return static_cast<int>(h.rows()); }
    /// Policy/value/decoder input: h and the stochastic sample side by side.
    Mat feat() const;
};

/// Scalar summary of one evidence-bound evaluation. All values are averaged
/// over the batch and summed over time; total = recon_obs + recon_reward
/// - kl_loss.
struct ElboBreakdown {
    double total = 0.0;
    double recon_obs = 0.0;
    double recon_reward = 0.0;
    double kl_raw = 0.0;
    double kl_loss = 0.0;
    std::vector<double> per_step_recon_obs;
    std::vector<double> per_step_recon_reward;  // empty when no reward targets
    std::vector<double> per_step_kl_raw;
    std::vector<double> per_step_kl_loss;
};

/// Latent state on an autodiff tape (used while building training graphs).
struct TapeState {
    Var h, s_mean, s_std, s_sample;
};

struct ElboResult {
    Var total;  // 1x1 node on the tape
    ElboBreakdown breakdown;
    std::vector<TapeState> states;  // posterior states, one per observation
};

struct ModelStepReport {
    ElboBreakdown body;
    ElboBreakdown online;
    bool has_body = false;
    bool has_online = false;
    double grad_norm = 0.0;  // NaN when the step was skipped
    /// Detached posterior states of the online batch (one per observation),
    /// reusable as policy/value start states without a second filtering pass.
    std::vector<LatentState> online_posterior;
};

/// Variational latent state-space model: encoder, shared recurrent
/// deterministic path, stochastic prior/posterior heads, observation decoder
/// and surrogate-reward head (both unit-variance Gaussians).
class WorldModel {
public:
    WorldModel(const WorldModelConfig& cfg, Rng& init_rng);

    const WorldModelConfig& config() const { return cfg_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    // -- value-level interface (no gradients) --------------------------------
    Mat encode(const Mat& obs) const;
    LatentState initial_state(int B) const;
    LatentState filter_posterior(const LatentState& prev, const Mat& action,
                                 const Mat& embed, Rng& rng) const;
    LatentState predict_prior(const LatentState& prev, const Mat& action,
                              Rng& rng) const;
    /// Decoder mean for a batch of latent states.
    Mat decode(const LatentState& state) const;
    /// Reward-head mean, one scalar per row.
    Vec reward(const LatentState& state) const;

    ElboBreakdown elbo(const SubsequenceBatch& batch, double free_nats,
                       double kl_balance, Rng& rng) const;

    /// Runs the posterior filter along a full observed sequence and returns
    /// the state after every observation (length L+1).
    std::vector<LatentState> filter_sequence(const SubsequenceBatch& batch,
                                             Rng& rng) const;

    struct Imagined {
        std::vector<LatentState> states;  // H states, one per action taken
        std::vector<Mat> actions;         // H × [B, act_dim]
        std::vector<Vec> rewards;         // H × [B]
    };
    using PolicyFn = std::function<Mat(const Mat& feat, Rng&)>;
    Imagined imagine(const LatentState& starts, const PolicyFn& policy, int H,
                     Rng& rng) const;

    // -- tape-level interface (training graphs) ------------------------------
    TapeState initial_tape_state(Tape& t, int B) const;
    /// One posterior step; noise is the pre-drawn standard normal [B, stoch].
    TapeState step_posterior(Graph& g, const TapeState& prev, Var action,
                             Var embed, const Mat& noise) const;
    TapeState step_prior(Graph& g, const TapeState& prev, Var action,
                         const Mat& noise) const;
    Var encode_graph(Graph& g, Var obs) const;
    Var decode_mean(Graph& g, Var feat) const;
    Var reward_mean(Graph& g, Var feat) const;
    static Var feat_of(Tape& t, const TapeState& s);

    /// Supplies the action entering step t (t = 1..L) given the posterior
    /// state after observation t-1; used to thread differentiable policy
    /// actions through the rollout.
    using ActionProvider = std::function<Var(Graph&, const TapeState&, int)>;

    /// Evidence lower bound as a tape graph. Actions, when act_dim > 0, are
    /// taken from the batch unless an action provider substitutes them
    /// (policy learning). Noise is drawn from rng.
    ElboResult elbo_graph(Graph& g, const SubsequenceBatch& batch,
                          double free_nats, double kl_balance, Rng& rng,
                          const ActionProvider* action_provider = nullptr) const;

    /// One ascent step on alpha * ELBO(body) + (1-alpha) * ELBO(online).
    /// Either batch may be empty when its weight is zero. Non-finite
    /// gradients skip the update and surface as grad_norm = NaN.
    ModelStepReport train_model_step(const SubsequenceBatch& body,
                                     const SubsequenceBatch& online,
                                     double alpha, Adam& opt, Rng& rng);

    std::map<std::string, Mat> state() const { return params_.state(); }
    void load_state(const std::map<std::string, Mat>& s) { params_.load_state(s); }

private:
    TapeState stoch_head(Graph& g, const nn::Mlp& head, Var head_in, Var h,
                         const Mat& noise) const;
    Var recurrent(Graph& g, const TapeState& prev, Var action) const;

    WorldModelConfig cfg_;
    ParamSet params_;
    nn::Mlp encoder_;
    nn::Linear pre_gru_;
    nn::GruCell gru_;
    nn::Mlp prior_head_;
    nn::Mlp post_head_;
    nn::Mlp decoder_;
    nn::Mlp reward_head_;
};

}  // namespace aime::model
