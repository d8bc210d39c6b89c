#include "aime/barrier/barrier.hpp"

#include <stdexcept>
#include <string>

namespace aime::barrier {

using data::Episode;
using data::MatF;
using nn::Vec;

EpisodeStore demo_subset(const EpisodeStore& pool, int n) {
    if (n < 1)
        throw std::invalid_argument("demo subset: need at least one episode");
    if (static_cast<std::size_t>(n) > pool.size())
        throw std::invalid_argument("demo subset: pool holds only " +
                                    std::to_string(pool.size()) + " episodes");
    EpisodeStore out(pool.name(), pool.action_free());
    for (int i = 0; i < n; ++i) {
        Episode ep = pool.episode(i);
        if (pool.action_free() && pool.has_oracle_actions(i))
            ep.actions = pool.oracle_actions(i);  // re-stripped on append
        out.append(std::move(ep));
    }
    return out;
}

namespace {

/// A fresh model carrying the pretrained parameters.
model::WorldModel clone_model(const model::WorldModel& src) {
    nn::Rng dummy(0);
    model::WorldModel out(src.config(), dummy);
    out.load_state(src.state());
    return out;
}

Mat demo_initial_observations(const EpisodeStore& demos) {
    Mat out(static_cast<Eigen::Index>(demos.size()),
            demos.episode(0).observations.cols());
    for (std::size_t i = 0; i < demos.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) =
            demos.episode(i).observations.row(0).cast<double>();
    return out;
}

}  // namespace

std::vector<BarrierReport> barrier_sweep(const driver::RunConfig& cfg,
                                         const WorldModel& pretrained,
                                         const std::vector<int>& demo_counts,
                                         env::Env& env,
                                         const EpisodeStore& body,
                                         const EpisodeStore& demo_pool,
                                         double match_tol) {
    cfg.validate();
    if (demo_counts.empty())
        throw std::invalid_argument("barrier sweep: no demo counts given");
    for (int n : demo_counts)
        if (n < 1 || static_cast<std::size_t>(n) > demo_pool.size())
            throw std::invalid_argument(
                "barrier sweep: demo pool too small for a requested count");

    const auto& spec = env.spec();
    const Mat atoms = env::initial_observation_atoms(spec);
    const Vec atom_weights =
        Vec::Constant(spec.init_points, 1.0 / spec.init_points);
    const double r_max = 1.0;

    const int feat_dim =
        pretrained.config().det_size + pretrained.config().stoch_size;
    policy::PolicyConfig pcfg;
    pcfg.feat_dim = feat_dim;
    pcfg.act_dim = pretrained.config().act_dim;

    nn::Rng root(cfg.seed);
    std::vector<BarrierReport> reports;
    for (int n : demo_counts) {
        const std::uint64_t arm_seed = root.bits();
        nn::Rng arm_rng = nn::Rng::stream(arm_seed, "barrier arm");
        EpisodeStore demos = demo_subset(demo_pool, n);

        BarrierReport rep;
        rep.n_demos = n;

        // Scripted-expert reference return.
        {
            auto expert = env::scripted_expert(spec);
            double sum = 0.0;
            for (int i = 0; i < cfg.eval_rollouts; ++i)
                sum += env::rollout_return(env, *expert, arm_rng);
            rep.r_expert = sum / cfg.eval_rollouts;
        }

        // Observation-only learner under the configured budget.
        Policy learned(pcfg, arm_rng);
        {
            auto model = clone_model(pretrained);
            policy::ValueFunction value(feat_dim, {128, 128}, arm_rng);
            driver::RunConfig arm_cfg = cfg;
            arm_cfg.seed = arm_seed;
            auto met = driver::run_aime_nob(arm_cfg, model, learned, value,
                                            body, demos, env, "");
            rep.r_learned = met.final_eval_return;
        }

        // Oracle behaviour cloning with the same gradient-step budget.
        Policy oracle(pcfg, arm_rng);
        {
            auto model = clone_model(pretrained);
            nn::AdamConfig ac;
            ac.lr = cfg.policy_lr;
            nn::Adam opt(ac);
            train_mbbc(model, demos, cfg.pretrain_iters, oracle, opt, arm_rng);
            auto ev = driver::evaluate_policy(env, model, oracle,
                                              cfg.eval_rollouts, arm_rng);
            rep.r_oracle = ev.mean_return;
        }

        rep.ekb = rep.r_oracle - rep.r_learned;
        rep.dkb = rep.r_expert - rep.r_oracle;
        rep.epsilon_hat =
            epsilon_hat(pretrained, learned, demos, arm_rng);
        rep.eta_hat = support_ratio(demo_initial_observations(demos), atoms,
                                    atom_weights, match_tol);
        rep.ekb_bound = ekb_bound(r_max, spec.horizon, rep.epsilon_hat);
        rep.dkb_bound = dkb_bound(rep.eta_hat, spec.horizon, r_max);
        reports.push_back(rep);
    }
    return reports;
}

}  // namespace aime::barrier
