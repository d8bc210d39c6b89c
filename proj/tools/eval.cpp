// Evaluates a checkpointed policy: rebuilds the environment, world model, and
// policy from the checkpoint manifest and runs closed-loop rollouts with
// mean-mode actions.

#include "common.hpp"

#include "CLI11.hpp"

#include <cmath>
#include <iostream>
#include <string>

namespace {

const std::string& need(const std::map<std::string, std::string>& m,
                        const std::string& key) {
    auto it = m.find(key);
    if (it == m.end())
        throw std::runtime_error("checkpoint manifest lacks '" + key + "'");
    return it->second;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"evaluate a training checkpoint"};
    std::string ckpt_dir;
    int rollouts = 10;
    std::uint64_t seed = 0;
    app.add_option("--checkpoint", ckpt_dir, "checkpoint directory")
        ->required();
    app.add_option("--rollouts", rollouts, "evaluation rollouts")
        ->check(CLI::PositiveNumber);
    app.add_option("--seed", seed, "evaluation rng seed");
    CLI11_PARSE(app, argc, argv);

    try {
        using namespace aime;
        io::Checkpoint ck = io::load_checkpoint(ckpt_dir);
        env::EnvSpec spec = env::env_spec(need(ck.manifest, "env"));
        env::Env env(spec);

        model::WorldModelConfig mc;
        mc.obs_dim = spec.obs_dim;
        mc.act_dim = spec.act_dim;
        mc.embed_dim = std::stoi(need(ck.manifest, "model_embed"));
        mc.det_size = std::stoi(need(ck.manifest, "model_det"));
        mc.stoch_size = std::stoi(need(ck.manifest, "model_stoch"));
        mc.hidden = std::stoi(need(ck.manifest, "model_hidden"));
        mc.min_std = std::stod(need(ck.manifest, "model_min_std"));

        policy::PolicyConfig pc;
        pc.feat_dim = mc.det_size + mc.stoch_size;
        pc.act_dim = spec.act_dim;
        pc.hidden = tools::parse_int_list(need(ck.manifest, "policy_hidden"));
        pc.min_std = std::stod(need(ck.manifest, "policy_min_std"));

        nn::Rng dummy(0);
        model::WorldModel model(mc, dummy);
        model.load_state(tools::strip_prefix(ck.tensors, "model/"));
        policy::Policy policy(pc, dummy);
        policy.load_state(tools::strip_prefix(ck.tensors, "policy/"));

        nn::Rng rng = nn::Rng::stream(seed, "eval tool");
        driver::EvalResult res =
            driver::evaluate_policy(env, model, policy, rollouts, rng);

        std::cout << "env: " << spec.name << "\n"
                  << "rollouts: " << rollouts << "\n"
                  << "mean return: " << res.mean_return << "\n";
        if (std::isfinite(res.success_rate))
            std::cout << "success rate: " << res.success_rate << "\n";
        if (need(ck.manifest, "aborted_nan") == "1")
            std::cout << "note: checkpoint came from a run aborted on a "
                         "non-finite loss\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
