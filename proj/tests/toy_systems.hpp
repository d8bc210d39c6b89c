#pragma once

// Shared synthetic systems for tests: a 1-D linear-Gaussian POMDP whose
// exact evidence is computable by a Kalman filter (see oracles.hpp).

#include "aime/data/episode.hpp"
#include "aime/nn/rng.hpp"

namespace toy {

struct LinearGaussian {
    double a = 0.9;
    double b = 2.0;
    double q = 1.0;   // process noise variance
    double r = 1.0;   // observation noise variance
    double p0 = 2.0;  // initial state variance
};

/// Episodes with uniform random actions; observations o = x + v.
inline aime::data::EpisodeStore generate_lg_episodes(const LinearGaussian& sys,
                                                     int n_episodes, int T,
                                                     aime::nn::Rng& rng,
                                                     const std::string& name = "body") {
    aime::data::EpisodeStore store(name, false);
    for (int e = 0; e < n_episodes; ++e) {
        aime::data::Episode ep;
        ep.observations = aime::data::MatF(T + 1, 1);
        ep.actions = aime::data::MatF(T, 1);
        double x = std::sqrt(sys.p0) * rng.normal();
        ep.observations(0, 0) =
            static_cast<float>(x + std::sqrt(sys.r) * rng.normal());
        for (int t = 0; t < T; ++t) {
            double u = rng.uniform(-1.0, 1.0);
            ep.actions(t, 0) = static_cast<float>(u);
            x = sys.a * x + sys.b * u + std::sqrt(sys.q) * rng.normal();
            ep.observations(t + 1, 0) =
                static_cast<float>(x + std::sqrt(sys.r) * rng.normal());
        }
        store.append(std::move(ep));
    }
    return store;
}

}  // namespace toy
