#include "aime/data/episode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace aime::data {

void Episode::validate() const {
    if (observations.rows() < 1)
        throw std::invalid_argument("episode: needs at least one observation");
    const int T = steps();
    if (has_actions()) {
        if (static_cast<int>(actions.rows()) != T)
            throw std::invalid_argument(
                "episode: action count must be one less than observation count");
        if ((actions.array().abs() > 1.0f).any())
            throw std::invalid_argument("episode: action component outside [-1, 1]");
    }
    if (has_true_rewards() && static_cast<int>(true_rewards.size()) != T)
        throw std::invalid_argument("episode: true_rewards length must equal step count");
    if (has_surrogate_rewards() && static_cast<int>(surrogate_rewards.size()) != T)
        throw std::invalid_argument(
            "episode: surrogate_rewards length must equal step count");
    if (!observations.allFinite() || (has_actions() && !actions.allFinite()))
        throw std::invalid_argument("episode: non-finite values");
}

void EpisodeStore::append(Episode ep) {
    ep.validate();
    if (!episodes_.empty() &&
        ep.observations.cols() != episodes_.front().observations.cols())
        throw std::invalid_argument("append: observation dimension mismatch with store");
    if (action_free_) {
        hidden_actions_.push_back(std::move(ep.actions));
        ep.actions = MatF();
    }
    episodes_.push_back(std::move(ep));
}

const MatF& EpisodeStore::oracle_actions(std::size_t i) const {
    if (!action_free_)
        throw std::logic_error("oracle_actions: store is not action-free");
    if (i >= hidden_actions_.size() || hidden_actions_[i].size() == 0)
        throw std::logic_error("oracle_actions: none recorded for this episode");
    return hidden_actions_[i];
}

bool EpisodeStore::has_oracle_actions(std::size_t i) const {
    return action_free_ && i < hidden_actions_.size() &&
           hidden_actions_[i].size() > 0;
}

int body_share(double alpha, int B) {
    return static_cast<int>(std::floor(alpha * B + 0.5));
}

namespace {

/// Valid start counts per episode for length-L slices; start in [0, T-L].
struct StartIndex {
    std::vector<std::size_t> cum;  // cumulative counts, size = episodes + 1
    std::size_t total() const { return cum.back(); }
};

StartIndex index_starts(const EpisodeStore& store, int L) {
    StartIndex idx;
    idx.cum.resize(store.size() + 1);
    idx.cum[0] = 0;
    for (std::size_t i = 0; i < store.size(); ++i) {
        int T = store.episode(i).steps();
        idx.cum[i + 1] = idx.cum[i] + (T >= L ? static_cast<std::size_t>(T - L + 1) : 0);
    }
    return idx;
}

void draw_rows(const EpisodeStore& store, const StartIndex& idx, int n, int L,
               bool want_actions, std::uint8_t tag, Rng& rng,
               SubsequenceBatch& out, int row0) {
    for (int k = 0; k < n; ++k) {
        std::size_t u = rng.below(idx.total());
        std::size_t e =
            static_cast<std::size_t>(std::upper_bound(idx.cum.begin(), idx.cum.end(), u) -
                                     idx.cum.begin()) -
            1;
        int start = static_cast<int>(u - idx.cum[e]);
        const Episode& ep = store.episode(e);
        int row = row0 + k;
        for (int t = 0; t <= L; ++t)
            out.obs[t].row(row) = ep.observations.row(start + t).cast<double>();
        if (want_actions)
            for (int t = 0; t < L; ++t)
                out.act[t].row(row) = ep.actions.row(start + t).cast<double>();
        bool has_sr = ep.has_surrogate_rewards();
        out.srew_valid[row] = has_sr ? 1 : 0;
        if (has_sr)
            for (int t = 0; t < L; ++t)
                out.srew[t](row) = static_cast<double>(ep.surrogate_rewards(start + t));
        out.source_mask[row] = tag;
    }
}

SubsequenceBatch make_batch(int B, int L, int obs_dim, int act_dim) {
    SubsequenceBatch batch;
    batch.obs.assign(L + 1, Mat::Zero(B, obs_dim));
    if (act_dim > 0) batch.act.assign(L, Mat::Zero(B, act_dim));
    batch.srew.assign(L, Vec::Zero(B));
    batch.source_mask.assign(B, 0);
    batch.srew_valid.assign(B, 0);
    return batch;
}

void require_sampleable(const EpisodeStore& store, const StartIndex& idx, int L,
                        bool need_actions) {
    if (store.empty())
        throw std::invalid_argument("sampler: store '" + store.name() + "' is empty");
    if (idx.total() == 0)
        throw std::invalid_argument("sampler: no episode in '" + store.name() +
                                    "' is long enough for length " + std::to_string(L));
    if (need_actions)
        for (std::size_t i = 0; i < store.size(); ++i)
            if (store.episode(i).steps() >= L && !store.episode(i).has_actions())
                throw std::invalid_argument("sampler: store '" + store.name() +
                                            "' lacks actions");
}

}  // namespace

SubsequenceBatch sample_mixed_batch(const EpisodeStore& body,
                                    const EpisodeStore& online, double alpha,
                                    int B, int L, Rng& rng) {
    if (alpha < 0.0 || alpha > 1.0)
        throw std::invalid_argument("sample_mixed_batch: alpha outside [0, 1]");
    if (B <= 0 || L <= 0)
        throw std::invalid_argument("sample_mixed_batch: B and L must be positive");
    StartIndex body_idx, online_idx;
    if (alpha > 0.0) {
        body_idx = index_starts(body, L);
        require_sampleable(body, body_idx, L, true);
    }
    if (alpha < 1.0) {
        online_idx = index_starts(online, L);
        require_sampleable(online, online_idx, L, true);
    }
    int nb = body_share(alpha, B);
    int no = B - nb;
    int obs_dim = static_cast<int>((nb > 0 ? body : online).episode(0).observations.cols());
    int act_dim = 0;
    for (std::size_t i = 0; i < (nb > 0 ? body : online).size(); ++i) {
        const Episode& ep = (nb > 0 ? body : online).episode(i);
        if (ep.has_actions()) {
            act_dim = static_cast<int>(ep.actions.cols());
            break;
        }
    }
    SubsequenceBatch batch = make_batch(B, L, obs_dim, act_dim);
    if (nb > 0) draw_rows(body, body_idx, nb, L, true, 1, rng, batch, 0);
    if (no > 0) draw_rows(online, online_idx, no, L, true, 0, rng, batch, nb);
    return batch;
}

SubsequenceBatch sample_batch(const EpisodeStore& store, int B, int L, Rng& rng,
                              std::uint8_t source_tag) {
    if (B <= 0 || L <= 0)
        throw std::invalid_argument("sample_batch: B and L must be positive");
    StartIndex idx = index_starts(store, L);
    require_sampleable(store, idx, L, true);
    int obs_dim = static_cast<int>(store.episode(0).observations.cols());
    int act_dim = 0;
    for (std::size_t i = 0; i < store.size(); ++i)
        if (store.episode(i).has_actions()) {
            act_dim = static_cast<int>(store.episode(i).actions.cols());
            break;
        }
    SubsequenceBatch batch = make_batch(B, L, obs_dim, act_dim);
    draw_rows(store, idx, B, L, true, source_tag, rng, batch, 0);
    return batch;
}

SubsequenceBatch sample_obs_batch(const EpisodeStore& store, int B, int L,
                                  Rng& rng) {
    if (B <= 0 || L <= 0)
        throw std::invalid_argument("sample_obs_batch: B and L must be positive");
    StartIndex idx = index_starts(store, L);
    require_sampleable(store, idx, L, false);
    int obs_dim = static_cast<int>(store.episode(0).observations.cols());
    SubsequenceBatch batch = make_batch(B, L, obs_dim, 0);
    draw_rows(store, idx, B, L, false, 1, rng, batch, 0);
    return batch;
}

EpisodeStore subset_regulariser(const EpisodeStore& body, double fraction,
                                Rng& rng) {
    if (body.empty())
        throw std::invalid_argument("subset_regulariser: empty store");
    if (!(fraction > 0.0) || fraction > 1.0)
        throw std::invalid_argument("subset_regulariser: fraction outside (0, 1]");
    std::size_t n = body.size();
    std::size_t k = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(n) - 1e-12));
    k = std::max<std::size_t>(1, std::min(k, n));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(order[i], order[j]);
    }
    std::vector<std::size_t> chosen(order.begin(), order.begin() + k);
    std::sort(chosen.begin(), chosen.end());

    EpisodeStore out(body.name(), body.action_free());
    for (std::size_t i : chosen) {
        Episode ep = body.episode(i);
        if (body.has_oracle_actions(i)) ep.actions = body.oracle_actions(i);
        out.append(std::move(ep));
    }
    return out;
}

}  // namespace aime::data
