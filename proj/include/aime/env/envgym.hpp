#pragma once

#include "aime/data/episode.hpp"
#include "aime/nn/rng.hpp"

#include <array>
#include <memory>
#include <string>

namespace aime::env {

using data::EpisodeStore;
using nn::Mat;
using nn::Rng;
using nn::Vec;

enum class EnvKind { PointmassReach, PointmassGoal, PendulumSwing };

/// Static description of an environment. Observations never expose the full
/// simulator state: the point mass reports a noisy position with velocity
/// hidden, the pendulum reports its angle with angular velocity hidden.
struct EnvSpec {
    std::string name;
    EnvKind kind = EnvKind::PointmassReach;
    int obs_dim = 0;
    int act_dim = 0;
    int horizon = 100;
    double noise_scale = 0.01;  // observation noise (point mass)
    double goal_radius = 0.1;
    double dt = 0.05;
    int init_points = 8;  // size of the discrete initial-state grid
};

/// Specs by name: "pointmass-reach", "pointmass-goal", "pendulum-swing".
/// Throws on unknown names. All reward functions take values in [0, 1] with
/// a pointwise maximum of exactly 1.
EnvSpec env_spec(const std::string& name);

/// A cheap value-object simulator. reset() draws the initial state from the
/// discrete grid and seeds the internal observation-noise stream, so two
/// environments reset from identically seeded generators produce bitwise
/// identical trajectories under the same actions.
class Env {
public:
    explicit Env(EnvSpec spec);

    const EnvSpec& spec() const { return spec_; }

    Vec reset(Rng& rng);

    struct StepResult {
        Vec obs;
        double reward = 0.0;
        bool done = false;
    };
    /// Advances one transition. Throws if called before reset or after the
    /// horizon, or when the action is outside [-1, 1]^act_dim.
    StepResult step(const Vec& action);

    /// Full simulator state (position and velocity, or angle and angular
    /// velocity). Diagnostics and oracles only; learners never see this.
    Vec true_state() const { return state_; }
    int steps_taken() const { return t_; }
    bool done() const { return done_; }

private:
    Vec observe();
    double reward_now() const;

    EnvSpec spec_;
    Vec state_;
    Rng noise_{0};
    int t_ = 0;
    bool done_ = true;
};

/// Memoryful feedback controller; estimates hidden velocities from
/// consecutive observations.
class Controller {
public:
    virtual ~Controller() = default;
    virtual void reset() = 0;
    virtual Vec act(const Vec& obs) = 0;
};

/// Noise-free initial observation of every reset grid cell,
/// [init_points, obs_dim]. The reset distribution is uniform over these
/// atoms, which makes initial-state support ratios exactly computable.
Mat initial_observation_atoms(const EnvSpec& spec);

/// Tuned expert for the given environment: proportional-derivative feedback
/// on the estimated state for the point mass, energy shaping with an upright
/// stabiliser for the pendulum.
std::unique_ptr<Controller> scripted_expert(const EnvSpec& spec);

/// The expert's controller class with explicit feedback gains, exposed so
/// tests can search it for its best member.
std::unique_ptr<Controller> feedback_controller(const EnvSpec& spec, double kp,
                                                double kd);

/// Mixture weights for dataset generation; must be nonnegative and sum to 1.
struct MixSpec {
    double random = 1.0 / 3.0;
    double noisy_expert = 1.0 / 3.0;
    double sinusoid = 1.0 / 3.0;
};

/// Episode counts per mixture component by largest-remainder apportionment;
/// each count is within one episode of the exact share.
std::array<int, 3> mix_counts(const MixSpec& mix, int n_episodes);

/// Rolls out a mixture of random, noisy-expert, and sinusoidal-probe
/// policies. Episodes carry actions and true rewards; the generating
/// policies never read the rewards.
EpisodeStore generate_embodiment_dataset(Env& env, int n_episodes,
                                         const MixSpec& mix, Rng& rng);

/// Expert rollouts. When action_free is true the returned store strips the
/// actions on append (demonstration stores); they remain available through
/// the store's oracle access.
EpisodeStore collect_expert_episodes(Env& env, int n_episodes, Rng& rng,
                                     bool action_free);

/// Total true reward of one controller rollout from a fresh reset.
double rollout_return(Env& env, Controller& ctrl, Rng& rng);

}  // namespace aime::env
