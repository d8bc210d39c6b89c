// Generates an embodiment dataset: a mixture of random, noisy-expert, and
// sinusoidal-probe rollouts with recorded actions.

#include "common.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <sstream>
#include <string>

int main(int argc, char** argv) {
    CLI::App app{"generate an embodiment dataset (action-carrying rollouts)"};
    std::string env_name = "pointmass-reach";
    int episodes = 30;
    std::string mix_text;
    std::uint64_t seed = 0;
    std::string out_dir;
    app.add_option("--env", env_name,
                   "environment: pointmass-reach | pointmass-goal | "
                   "pendulum-swing");
    app.add_option("--episodes", episodes, "number of episodes")
        ->check(CLI::PositiveNumber);
    app.add_option("--mix", mix_text,
                   "random,noisy-expert,sinusoid weights (normalised); "
                   "default uniform");
    app.add_option("--seed", seed, "rng seed");
    app.add_option("--out", out_dir, "output directory")->required();
    CLI11_PARSE(app, argc, argv);

    try {
        aime::env::Env env(aime::env::env_spec(env_name));
        aime::env::MixSpec mix;
        if (!mix_text.empty()) {
            std::stringstream ss(mix_text);
            std::string item;
            double w[3];
            for (int i = 0; i < 3; ++i) {
                if (!std::getline(ss, item, ','))
                    throw std::invalid_argument("--mix needs three weights");
                w[i] = std::stod(item);
                if (w[i] < 0)
                    throw std::invalid_argument("--mix weights must be >= 0");
            }
            double sum = w[0] + w[1] + w[2];
            if (sum <= 0) throw std::invalid_argument("--mix weights sum to 0");
            mix.random = w[0] / sum;
            mix.noisy_expert = w[1] / sum;
            mix.sinusoid = w[2] / sum;
        }
        aime::nn::Rng rng = aime::nn::Rng::stream(seed, "gen-data");
        auto store =
            aime::env::generate_embodiment_dataset(env, episodes, mix, rng);
        aime::data::save_store(store, out_dir);

        long steps = 0;
        for (std::size_t i = 0; i < store.size(); ++i)
            steps += store.episode(i).steps();
        auto counts = aime::env::mix_counts(mix, episodes);
        std::cout << "wrote " << store.size() << " episodes (" << steps
                  << " steps) to " << out_dir << "\n"
                  << "mix: " << counts[0] << " random, " << counts[1]
                  << " noisy-expert, " << counts[2] << " sinusoid\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
