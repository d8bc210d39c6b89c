#include "aime/rewards/surrogate.hpp"

#include <cmath>
#include <stdexcept>

namespace aime::rewards {

double symlog(double x) {
    return x >= 0.0 ? std::log1p(x) : -std::log1p(-x);
}

ViperModel train_viper(const EpisodeStore& demos, int budget_steps,
                       const WorldModelConfig& cfg, Rng& rng, int batch,
                       int seq) {
    if (budget_steps <= 0)
        throw std::invalid_argument("video-likelihood model: budget must be positive");
    if (demos.empty())
        throw std::invalid_argument("video-likelihood model: no demonstrations");
    if (cfg.act_dim != 0)
        throw std::invalid_argument("video-likelihood model: must be action-free");

    ViperModel out{WorldModel(cfg, rng), 0};
    Adam opt(nn::AdamConfig{});
    for (int i = 0; i < budget_steps; ++i) {
        auto b = data::sample_obs_batch(demos, batch, seq, rng);
        out.model.train_model_step(b, data::SubsequenceBatch{}, 1.0, opt, rng);
        ++out.trained_steps;
    }
    return out;
}

Vec viper_rewards(const Mat& obs_seq, const ViperModel& viper, Rng& rng) {
    const int T = static_cast<int>(obs_seq.rows()) - 1;
    if (T < 1)
        throw std::invalid_argument("video-likelihood rewards: need two observations");
    data::SubsequenceBatch batch;
    for (int t = 0; t <= T; ++t) batch.obs.push_back(obs_seq.row(t));
    // No free-nats clipping: the reward is the plain per-step evidence.
    auto bd = viper.model.elbo(batch, 0.0, 0.5, rng);
    Vec out(T);
    for (int t = 0; t < T; ++t)
        out(t) = symlog(bd.per_step_recon_obs[t + 1] - bd.per_step_kl_raw[t + 1]);
    return out;
}

}  // namespace aime::rewards
