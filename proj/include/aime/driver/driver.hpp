#pragma once

#include "aime/data/episode.hpp"
#include "aime/env/envgym.hpp"
#include "aime/model/world_model.hpp"
#include "aime/policy/policy_value.hpp"

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace aime::driver {

using data::Episode;
using data::EpisodeStore;
using model::WorldModel;
using nn::Adam;
using nn::Rng;
using policy::Policy;
using policy::ValueFunction;

/// Flat run configuration. Defaults are the desk-scale training recipe.
struct RunConfig {
    double alpha = 0.5;          // body share of the model objective
    double beta = 1.0;           // value-gradient weight in the policy update
    double gamma = 0.99;
    double td_lambda = 0.95;
    int imagine_horizon = 15;
    int batch = 50;
    int seq = 50;
    long env_step_budget = 0;    // 0 runs the pure-offline baseline
    double update_ratio = 0.1;   // gradient steps per env step
    int pretrain_iters = 2000;
    double model_lr = 3e-4;
    double policy_lr = 3e-4;
    double value_lr = 8e-5;
    double entropy_weight = 1e-4;
    double polyak = 0.95;
    double free_nats = 1.0;
    double kl_balance = 0.8;
    std::string surrogate = "ail";  // ail | ot | viper
    std::uint64_t seed = 0;
    int eval_every = 10;         // episodes between evaluations
    int eval_rollouts = 10;
    int disc_steps = 8;          // discriminator steps per collected episode
    int disc_hidden = 256;
    long viper_budget = 500;     // training steps for the video reward model

    /// Throws std::invalid_argument when any field is outside its range.
    void validate() const;
};

/// Parses a flat key=value document ('#' starts a comment). Unknown keys and
/// malformed values throw. Missing keys keep their defaults.
RunConfig parse_run_config(const std::string& text);

/// Serialises every field as key=value lines; parse_run_config round-trips.
std::string run_config_text(const RunConfig& cfg);

/// One row of the append-only run log. Evaluation fields are NaN on
/// episodes without an evaluation pass.
struct EpisodeRecord {
    int episode = 0;
    long env_steps = 0;
    long grad_steps = 0;
    double surrogate_mean = std::numeric_limits<double>::quiet_NaN();
    double surrogate_min = std::numeric_limits<double>::quiet_NaN();
    double surrogate_max = std::numeric_limits<double>::quiet_NaN();
    double model_elbo_body = std::numeric_limits<double>::quiet_NaN();
    double model_elbo_online = std::numeric_limits<double>::quiet_NaN();
    double policy_objective = std::numeric_limits<double>::quiet_NaN();
    double value_loss = std::numeric_limits<double>::quiet_NaN();
    double eval_return = std::numeric_limits<double>::quiet_NaN();
    double eval_success = std::numeric_limits<double>::quiet_NaN();
    double action_mse = std::numeric_limits<double>::quiet_NaN();
};

struct RunMetrics {
    std::vector<EpisodeRecord> records;
    long total_env_steps = 0;
    long total_grad_steps = 0;
    double final_eval_return = std::numeric_limits<double>::quiet_NaN();
    double final_eval_success = std::numeric_limits<double>::quiet_NaN();
    bool aborted_nan = false;
};

/// Imitation pretraining: iters ascent steps on the evidence bound of demo
/// observation batches with policy-generated actions; the model is frozen.
/// Returns the final step's bound value (NaN when iters = 0). Throws on an
/// empty demo store.
double pretrain_policy(const WorldModel& model, const EpisodeStore& demos,
                       int iters, Policy& policy, Adam& opt, Rng& rng,
                       int batch = 50, int seq = 50);

/// One closed-loop episode: the policy acts on the posterior-filtered latent
/// state of the real observation stream. Actions are recorded; surrogate
/// rewards are left empty for the caller to fill.
Episode collect_episode(env::Env& env, const WorldModel& model,
                        const Policy& policy, Policy::Mode mode, Rng& rng);

struct EvalResult {
    double mean_return = 0.0;
    /// Fraction of rollouts whose final step meets the success predicate;
    /// NaN for environments without a terminal-success notion.
    double success_rate = std::numeric_limits<double>::quiet_NaN();
};

/// Mean true return of n_rollouts closed-loop rollouts with mean-mode
/// actions.
EvalResult evaluate_policy(env::Env& env, const WorldModel& model,
                           const Policy& policy, int n_rollouts, Rng& rng);

/// The full online imitation loop: policy pretraining, then repeatedly
/// {collect an episode; update and apply the surrogate reward model; mixed
/// model finetuning, policy and value updates at the configured ratio},
/// evaluating every eval_every episodes and always on the final one. The
/// policy and value nets are trained in place; every random draw derives
/// from cfg.seed, so identically seeded runs with identically initialised
/// nets match bitwise. Non-finite losses abort the run after writing a
/// checkpoint into checkpoint_dir (when given); a normal finish writes one
/// too.
RunMetrics run_aime_nob(const RunConfig& cfg, WorldModel& model,
                        Policy& policy, ValueFunction& value,
                        const EpisodeStore& body, const EpisodeStore& demos,
                        env::Env& env, const std::string& checkpoint_dir = "");

}  // namespace aime::driver
