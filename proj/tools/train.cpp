// Runs one imitation-from-observation training run: world-model pretraining
// (or cache reuse), policy pretraining, and — with a positive step budget —
// the online loop with the chosen surrogate-reward backend. Writes a metrics
// log, the effective configuration, and a final checkpoint.

#include "common.hpp"

#include "aime/io/metrics.hpp"

#include "CLI11.hpp"

#include <cmath>
#include <iostream>
#include <string>

namespace {

using namespace aime;

/// Metrics row for one episode record; non-finite fields are omitted.
io::MetricsRow record_row(const driver::EpisodeRecord& r,
                          const std::string& task, const std::string& algo,
                          std::uint64_t seed) {
    io::MetricsRow row;
    row.tag["task"] = task;
    row.tag["algorithm"] = algo;
    row.tag["seed"] = std::to_string(seed);
    auto put = [&](const char* k, double v) {
        if (std::isfinite(v)) row.num[k] = v;
    };
    row.num["episode"] = r.episode;
    row.num["env_steps"] = static_cast<double>(r.env_steps);
    row.num["grad_steps"] = static_cast<double>(r.grad_steps);
    put("surrogate_mean", r.surrogate_mean);
    put("surrogate_min", r.surrogate_min);
    put("surrogate_max", r.surrogate_max);
    put("model_elbo_body", r.model_elbo_body);
    put("model_elbo_online", r.model_elbo_online);
    put("policy_objective", r.policy_objective);
    put("value_loss", r.value_loss);
    put("eval_return", r.eval_return);
    put("eval_success", r.eval_success);
    put("action_mse", r.action_mse);
    return row;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"train an observation-only imitation policy"};
    std::string config_path, env_name = "pointmass-reach";
    std::string surrogate, out_dir, body_dir, demos_dir, cache_dir;
    std::uint64_t seed = 0, model_seed = 0;
    long budget = -1;
    int model_iters = 2000;
    tools::ModelShape shape;
    app.add_option("--config", config_path, "run configuration file");
    app.add_option("--env", env_name, "environment name");
    app.add_option("--surrogate", surrogate,
                   "override surrogate backend: ail | ot | viper");
    app.add_option("--seed", seed, "override run seed");
    app.add_option("--budget", budget,
                   "override env step budget (0 = offline baseline)");
    app.add_option("--out", out_dir, "output directory")->required();
    app.add_option("--body", body_dir, "embodiment dataset directory")
        ->required();
    app.add_option("--demos", demos_dir, "demonstration store directory")
        ->required();
    app.add_option("--model-cache", cache_dir,
                   "pretrained world-model cache directory (reused when its "
                   "manifest matches)");
    app.add_option("--model-iters", model_iters,
                   "world-model pretraining steps")
        ->check(CLI::NonNegativeNumber);
    app.add_option("--model-seed", model_seed,
                   "world-model init/pretraining seed (independent of the "
                   "run seed so policy seeds can share one model)");
    app.add_option("--embed", shape.embed, "world-model embedding width");
    app.add_option("--det", shape.det, "world-model deterministic state size");
    app.add_option("--stoch", shape.stoch, "world-model stochastic state size");
    app.add_option("--hidden", shape.hidden, "world-model hidden width");
    CLI11_PARSE(app, argc, argv);

    try {
        driver::RunConfig cfg = tools::load_run_config(config_path);
        if (app.count("--surrogate")) cfg.surrogate = surrogate;
        if (app.count("--seed")) cfg.seed = seed;
        if (app.count("--budget")) cfg.env_step_budget = budget;
        cfg.validate();

        env::EnvSpec spec = env::env_spec(env_name);
        env::Env env(spec);
        data::EpisodeStore body = data::load_store(body_dir);
        data::EpisodeStore demos = data::load_store(demos_dir);

        std::filesystem::create_directories(out_dir);
        tools::write_text_file(out_dir + "/config.txt",
                               driver::run_config_text(cfg));

        model::WorldModel model = tools::load_or_pretrain_model(
            cache_dir, spec, cfg, shape, model_iters, model_seed, body,
            std::cout);

        const auto& mc = model.config();
        policy::PolicyConfig pc;
        pc.feat_dim = mc.det_size + mc.stoch_size;
        pc.act_dim = spec.act_dim;
        nn::Rng policy_init = nn::Rng::stream(cfg.seed, "policy init");
        nn::Rng value_init = nn::Rng::stream(cfg.seed, "value init");
        policy::Policy policy(pc, policy_init);
        policy::ValueFunction value(pc.feat_dim, {128, 128}, value_init);

        std::string algo = cfg.env_step_budget == 0
                               ? "aime-offline"
                               : "aime-nob-" + cfg.surrogate;
        std::cout << "training " << algo << " on " << spec.name << " (seed "
                  << cfg.seed << ", budget " << cfg.env_step_budget << ")\n";

        driver::RunMetrics metrics = driver::run_aime_nob(
            cfg, model, policy, value, body, demos, env,
            out_dir + "/checkpoint");

        io::MetricsWriter writer(out_dir + "/metrics.ldjson");
        for (const auto& r : metrics.records)
            writer.append(record_row(r, spec.name, algo, cfg.seed));

        std::cout << "env steps: " << metrics.total_env_steps
                  << "  grad steps: " << metrics.total_grad_steps << "\n";
        std::cout << "final eval return: " << metrics.final_eval_return;
        if (std::isfinite(metrics.final_eval_success))
            std::cout << "  success rate: " << metrics.final_eval_success;
        std::cout << "\n";
        std::cout << "metrics: " << out_dir << "/metrics.ldjson\n"
                  << "checkpoint: " << out_dir << "/checkpoint\n";
        if (metrics.aborted_nan) {
            std::cerr << "run aborted on non-finite training loss\n";
            return 2;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
