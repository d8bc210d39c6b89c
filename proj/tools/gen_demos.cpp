// Collects expert demonstrations as an action-free store: learners see only
// the observation streams; the recorded actions stay on the oracle side for
// diagnostics.

#include "common.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <string>

int main(int argc, char** argv) {
    CLI::App app{"collect scripted-expert demonstrations (observation-only)"};
    std::string env_name = "pointmass-reach";
    int episodes = 5;
    std::uint64_t seed = 0;
    std::string out_dir;
    app.add_option("--env", env_name,
                   "environment: pointmass-reach | pointmass-goal | "
                   "pendulum-swing");
    app.add_option("--episodes", episodes, "number of demonstrations")
        ->check(CLI::PositiveNumber);
    app.add_option("--seed", seed, "rng seed");
    app.add_option("--out", out_dir, "output directory")->required();
    CLI11_PARSE(app, argc, argv);

    try {
        aime::env::Env env(aime::env::env_spec(env_name));
        aime::nn::Rng rng = aime::nn::Rng::stream(seed, "gen-demos");
        auto store = aime::env::collect_expert_episodes(env, episodes, rng,
                                                        /*action_free=*/true);
        aime::data::save_store(store, out_dir);

        double mean_return = 0.0;
        for (std::size_t i = 0; i < store.size(); ++i)
            mean_return += store.episode(i).true_rewards.sum();
        mean_return /= static_cast<double>(store.size());
        std::cout << "wrote " << store.size() << " demonstrations to "
                  << out_dir << "\n"
                  << "mean expert return: " << mean_return << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
