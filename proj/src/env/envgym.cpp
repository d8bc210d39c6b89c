#include "aime/env/envgym.hpp"

#include <cmath>
#include <stdexcept>

namespace aime::env {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Point-mass constants: semi-implicit Euler with strong per-step velocity
// damping, so the actuator effectively tracks a commanded velocity (terminal
// speed 1 per axis). Uncorrelated action noise then diffuses only slowly,
// while coherent commands travel far.
constexpr double kDamping = 0.5;
constexpr double kAccelScale = 5.0;

// Pendulum constants: uniform rod of mass 1 and length 1 under gravity 10,
// torque-limited so the upright must be reached by energy pumping. The angle
// is measured from upright.
constexpr double kGravity = 10.0;
constexpr double kTorqueScale = 2.0;
constexpr double kMaxSpeed = 8.0;
constexpr double kUprightEnergy = 10.0;  // rest energy at the top

double wrap_angle(double a) {
    a = std::fmod(a + kPi, 2.0 * kPi);
    if (a < 0.0) a += 2.0 * kPi;
    return a - kPi;
}

}  // namespace

EnvSpec env_spec(const std::string& name) {
    EnvSpec s;
    s.name = name;
    if (name == "pointmass-reach") {
        s.kind = EnvKind::PointmassReach;
        s.obs_dim = 2;
        s.act_dim = 2;
    } else if (name == "pointmass-goal") {
        s.kind = EnvKind::PointmassGoal;
        s.obs_dim = 2;
        s.act_dim = 2;
    } else if (name == "pendulum-swing") {
        s.kind = EnvKind::PendulumSwing;
        s.obs_dim = 2;  // cos/sin of the angle; angular velocity hidden
        s.act_dim = 1;
        s.noise_scale = 0.0;
    } else {
        throw std::invalid_argument("unknown environment: " + name);
    }
    return s;
}

Env::Env(EnvSpec spec) : spec_(std::move(spec)) {
    if (spec_.horizon < 1)
        throw std::invalid_argument("environment horizon must be positive");
}

namespace {

/// Full simulator state of reset grid cell k (velocities zero).
Vec grid_cell_state(const EnvSpec& spec, int k) {
    Vec state = Vec::Zero(spec.kind == EnvKind::PendulumSwing ? 2 : 4);
    if (spec.kind == EnvKind::PendulumSwing) {
        // Near-bottom grid; none of the points is the exact hanging
        // equilibrium.
        state(0) = wrap_angle(kPi + (k - (spec.init_points - 1) * 0.5) * 0.12);
    } else {
        double a = 2.0 * kPi * k / spec.init_points;
        state(0) = std::cos(a);
        state(1) = std::sin(a);
    }
    return state;
}

}  // namespace

Mat initial_observation_atoms(const EnvSpec& spec) {
    Mat atoms(spec.init_points, spec.obs_dim);
    for (int k = 0; k < spec.init_points; ++k) {
        Vec s = grid_cell_state(spec, k);
        if (spec.kind == EnvKind::PendulumSwing)
            atoms.row(k) << std::cos(s(0)), std::sin(s(0));
        else
            atoms.row(k) << s(0), s(1);
    }
    return atoms;
}

Vec Env::reset(Rng& rng) {
    noise_ = Rng::stream(rng.bits(), "obs noise");
    const int k = static_cast<int>(rng.below(
        static_cast<std::uint64_t>(spec_.init_points)));
    state_ = grid_cell_state(spec_, k);
    t_ = 0;
    done_ = false;
    return observe();
}

Env::StepResult Env::step(const Vec& action) {
    if (done_)
        throw std::invalid_argument("step called on a finished environment");
    if (action.size() != spec_.act_dim)
        throw std::invalid_argument("action dimension mismatch");
    if (!action.allFinite() || action.cwiseAbs().maxCoeff() > 1.0)
        throw std::invalid_argument("action outside [-1, 1]");

    if (spec_.kind == EnvKind::PendulumSwing) {
        double theta = state_(0), omega = state_(1);
        double torque = kTorqueScale * action(0);
        double accel = 1.5 * kGravity * std::sin(theta) + 3.0 * torque;
        omega = std::clamp(omega + spec_.dt * accel, -kMaxSpeed, kMaxSpeed);
        theta = wrap_angle(theta + spec_.dt * omega);
        state_(0) = theta;
        state_(1) = omega;
    } else {
        Eigen::Vector2d pos = state_.head<2>(), vel = state_.tail<2>();
        vel = kDamping * vel + spec_.dt * kAccelScale * action;
        pos += spec_.dt * vel;
        state_.head<2>() = pos;
        state_.tail<2>() = vel;
    }

    ++t_;
    done_ = t_ >= spec_.horizon;
    return StepResult{observe(), reward_now(), done_};
}

Vec Env::observe() {
    Vec obs(spec_.obs_dim);
    if (spec_.kind == EnvKind::PendulumSwing) {
        obs(0) = std::cos(state_(0));
        obs(1) = std::sin(state_(0));
    } else {
        obs = state_.head<2>() +
              spec_.noise_scale * Vec::NullaryExpr(2, [this](Eigen::Index) {
                  return noise_.normal();
              });
    }
    return obs;
}

double Env::reward_now() const {
    switch (spec_.kind) {
        case EnvKind::PointmassReach:
            return std::clamp(1.0 - state_.head<2>().norm(), 0.0, 1.0);
        case EnvKind::PointmassGoal:
            return state_.head<2>().norm() <= spec_.goal_radius ? 1.0 : 0.0;
        case EnvKind::PendulumSwing:
            return 0.5 * (1.0 + std::cos(state_(0)));
    }
    return 0.0;
}

namespace {

/// Proportional-derivative regulation to the origin on a velocity estimate
/// from consecutive noisy positions.
class PointmassPd final : public Controller {
public:
    PointmassPd(double kp, double kd, double dt) : kp_(kp), kd_(kd), dt_(dt) {}

    void reset() override { have_prev_ = false; }

    Vec act(const Vec& obs) override {
        Eigen::Vector2d vel = Eigen::Vector2d::Zero();
        if (have_prev_) vel = (obs.head<2>() - prev_) / dt_;
        prev_ = obs.head<2>();
        have_prev_ = true;
        Eigen::Vector2d a = -kp_ * obs.head<2>() - kd_ * vel;
        return a.cwiseMax(-1.0).cwiseMin(1.0);
    }

private:
    double kp_, kd_, dt_;
    Eigen::Vector2d prev_;
    bool have_prev_ = false;
};

/// Energy shaping toward the upright energy level, handing over to linear
/// feedback once inside the stabilisable band around the top.
class PendulumExpert final : public Controller {
public:
    PendulumExpert(double kp, double kd, double dt) : kp_(kp), kd_(kd), dt_(dt) {}

    void reset() override { have_prev_ = false; }

    Vec act(const Vec& obs) override {
        double theta = std::atan2(obs(1), obs(0));
        double omega = 0.0;
        if (have_prev_) omega = wrap_angle(theta - prev_theta_) / dt_;
        prev_theta_ = theta;
        have_prev_ = true;

        double u;
        if (std::abs(theta) < 0.35 && std::abs(omega) < 3.0) {
            u = -kp_ * theta - kd_ * omega;
        } else {
            double energy = omega * omega / 6.0 +
                            5.0 * (1.0 + std::cos(theta));
            u = 4.0 * omega * (kUprightEnergy - energy);
            // Kick out of the hanging equilibrium where energy pumping has
            // no gradient.
            if (std::abs(omega) < 1e-3 && std::cos(theta) < 0.0) u = 2.0;
        }
        Vec a(1);
        a(0) = std::clamp(u / kTorqueScale, -1.0, 1.0);
        return a;
    }

private:
    double kp_, kd_, dt_;
    double prev_theta_ = 0.0;
    bool have_prev_ = false;
};

}  // namespace

std::unique_ptr<Controller> feedback_controller(const EnvSpec& spec, double kp,
                                                double kd) {
    if (spec.kind == EnvKind::PendulumSwing)
        return std::make_unique<PendulumExpert>(kp, kd, spec.dt);
    return std::make_unique<PointmassPd>(kp, kd, spec.dt);
}

std::unique_ptr<Controller> scripted_expert(const EnvSpec& spec) {
    if (spec.kind == EnvKind::PendulumSwing)
        return feedback_controller(spec, 10.0, 2.0);
    return feedback_controller(spec, 8.0, 2.0);
}

std::array<int, 3> mix_counts(const MixSpec& mix, int n_episodes) {
    if (n_episodes < 1)
        throw std::invalid_argument("dataset needs at least one episode");
    const double fr[3] = {mix.random, mix.noisy_expert, mix.sinusoid};
    double sum = fr[0] + fr[1] + fr[2];
    if (fr[0] < 0.0 || fr[1] < 0.0 || fr[2] < 0.0 ||
        std::abs(sum - 1.0) > 1e-6)
        throw std::invalid_argument(
            "mixture fractions must be nonnegative and sum to 1");

    std::array<int, 3> counts{};
    double rem[3];
    int used = 0;
    for (int i = 0; i < 3; ++i) {
        double exact = fr[i] * n_episodes;
        counts[i] = static_cast<int>(std::floor(exact));
        rem[i] = exact - counts[i];
        used += counts[i];
    }
    while (used < n_episodes) {
        int best = 0;
        for (int i = 1; i < 3; ++i)
            if (rem[i] > rem[best]) best = i;
        ++counts[best];
        rem[best] = -1.0;
        ++used;
    }
    return counts;
}

namespace {

enum class MixPolicy { Random, NoisyExpert, Sinusoid };

data::Episode roll_mix_episode(Env& env, MixPolicy kind, Controller* expert,
                               Rng& rng) {
    const EnvSpec& spec = env.spec();
    data::Episode ep;
    ep.observations.resize(spec.horizon + 1, spec.obs_dim);
    ep.actions.resize(spec.horizon, spec.act_dim);
    ep.true_rewards.resize(spec.horizon);

    Vec obs = env.reset(rng);
    ep.observations.row(0) = obs.cast<float>();
    if (expert != nullptr) expert->reset();

    // Per-episode probe parameters: independent frequency, phase, and
    // amplitude per axis, slow enough that the damped actuator follows the
    // sweep coherently, so different episodes trace different orbits.
    Vec freq(spec.act_dim), phase(spec.act_dim), amp(spec.act_dim);
    for (int i = 0; i < spec.act_dim; ++i) {
        freq(i) = 0.05 + 0.25 * rng.uniform();
        phase(i) = 2.0 * kPi * rng.uniform();
        amp(i) = 0.3 + 0.7 * rng.uniform();
    }

    for (int t = 0; t < spec.horizon; ++t) {
        Vec a(spec.act_dim);
        switch (kind) {
            case MixPolicy::Random:
                for (int i = 0; i < spec.act_dim; ++i)
                    a(i) = 2.0 * rng.uniform() - 1.0;
                break;
            case MixPolicy::NoisyExpert:
                a = expert->act(obs);
                for (int i = 0; i < spec.act_dim; ++i)
                    a(i) = std::clamp(a(i) + 0.5 * rng.normal(), -1.0, 1.0);
                break;
            case MixPolicy::Sinusoid:
                for (int i = 0; i < spec.act_dim; ++i)
                    a(i) = amp(i) * std::sin(freq(i) * t + phase(i));
                break;
        }
        auto r = env.step(a);
        obs = r.obs;
        ep.observations.row(t + 1) = r.obs.cast<float>();
        ep.actions.row(t) = a.cast<float>();
        ep.true_rewards(t) = static_cast<float>(r.reward);
    }
    return ep;
}

}  // namespace

EpisodeStore generate_embodiment_dataset(Env& env, int n_episodes,
                                         const MixSpec& mix, Rng& rng) {
    auto counts = mix_counts(mix, n_episodes);
    auto expert = scripted_expert(env.spec());
    EpisodeStore store("body", false);
    const MixPolicy kinds[3] = {MixPolicy::Random, MixPolicy::NoisyExpert,
                                MixPolicy::Sinusoid};
    const char* labels[3] = {"random", "noisy-expert", "sinusoid"};
    for (int k = 0; k < 3; ++k)
        for (int i = 0; i < counts[k]; ++i) {
            data::Episode ep =
                roll_mix_episode(env, kinds[k], expert.get(), rng);
            ep.meta["policy"] = labels[k];
            store.append(std::move(ep));
        }
    return store;
}

EpisodeStore collect_expert_episodes(Env& env, int n_episodes, Rng& rng,
                                     bool action_free) {
    if (n_episodes < 1)
        throw std::invalid_argument("need at least one episode");
    auto expert = scripted_expert(env.spec());
    EpisodeStore store(action_free ? "demo" : "expert", action_free);
    for (int i = 0; i < n_episodes; ++i) {
        const EnvSpec& spec = env.spec();
        data::Episode ep;
        ep.observations.resize(spec.horizon + 1, spec.obs_dim);
        ep.actions.resize(spec.horizon, spec.act_dim);
        ep.true_rewards.resize(spec.horizon);
        Vec obs = env.reset(rng);
        expert->reset();
        ep.observations.row(0) = obs.cast<float>();
        for (int t = 0; t < spec.horizon; ++t) {
            Vec a = expert->act(obs);
            auto r = env.step(a);
            obs = r.obs;
            ep.observations.row(t + 1) = r.obs.cast<float>();
            ep.actions.row(t) = a.cast<float>();
            ep.true_rewards(t) = static_cast<float>(r.reward);
        }
        ep.meta["policy"] = "expert";
        store.append(std::move(ep));
    }
    return store;
}

double rollout_return(Env& env, Controller& ctrl, Rng& rng) {
    Vec obs = env.reset(rng);
    ctrl.reset();
    double total = 0.0;
    while (!env.done()) {
        auto r = env.step(ctrl.act(obs));
        obs = r.obs;
        total += r.reward;
    }
    return total;
}

}  // namespace aime::env
