#pragma once

#include "aime/nn/rng.hpp"
#include "aime/nn/tape.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace aime::data {

using MatF = Eigen::MatrixXf;
using VecF = Eigen::VectorXf;
using nn::Mat;
using nn::Rng;
using nn::Vec;

/// One trajectory. Observations span T+1 steps; actions, when present, the
/// T transitions between them. Values are stored in single precision, which
/// is also the on-disk precision, so save/load round-trips are exact.
struct Episode {
    MatF observations;                      // [T+1, obs_dim]
    MatF actions;                           // [T, act_dim]; 0x0 when absent
    VecF true_rewards;                      // [T]; evaluation only
    VecF surrogate_rewards;                 // [T]
    std::map<std::string, std::string> meta;

    int steps() const { return static_cast<int>(observations.rows()) - 1; }
    bool has_actions() const { return actions.size() > 0; }
    bool has_true_rewards() const { return true_rewards.size() > 0; }
    bool has_surrogate_rewards() const { return surrogate_rewards.size() > 0; }

    /// Throws std::invalid_argument when sequence lengths disagree or an
    /// action component leaves [-1, 1].
    void validate() const;
};

/// A named dataset of episodes. Action-free stores (demonstrations) strip
/// actions on append; learner-facing reads can never see them because the
/// stored episodes genuinely do not contain them. The stripped actions
/// remain reachable through oracle_actions() for diagnostics only.
/// Episodes are append-only; there is no removal interface.
class EpisodeStore {
public:
    EpisodeStore() = default;
    EpisodeStore(std::string name, bool action_free)
        : name_(std::move(name)), action_free_(action_free) {}

    const std::string& name() const { return name_; }
    bool action_free() const { return action_free_; }
    std::size_t size() const { return episodes_.size(); }
    bool empty() const { return episodes_.empty(); }

    const Episode& episode(std::size_t i) const { return episodes_.at(i); }

    /// Appends a validated episode. On action-free stores the episode's
    /// actions are moved to the hidden oracle side before storage.
    void append(Episode ep);

    /// True actions of episode i as originally recorded. Only meaningful on
    /// action-free stores; throws if none were recorded.
    const MatF& oracle_actions(std::size_t i) const;
    bool has_oracle_actions(std::size_t i) const;

private:
    std::string name_;
    bool action_free_ = false;
    std::vector<Episode> episodes_;
    std::vector<MatF> hidden_actions_;  // parallel to episodes_ when action_free_
};

/// A batch of B contiguous subsequences, L transitions each. obs[t] is
/// [B, obs_dim] for t in 0..L; act[t] is [B, act_dim] for t in 0..L-1.
/// There is deliberately no true-reward field: learners consume this type.
struct SubsequenceBatch {
    std::vector<Mat> obs;
    std::vector<Mat> act;                    // empty for observation-only batches
    std::vector<Vec> srew;                   // [B] per transition; zero where invalid
    std::vector<std::uint8_t> source_mask;   // per row: 1 = body, 0 = online
    std::vector<std::uint8_t> srew_valid;    // per row: surrogate rewards present

    int batch() const { return obs.empty() ? 0 : static_cast<int>(obs[0].rows()); }
    int length() const { return static_cast<int>(obs.size()) - 1; }
};

/// Draws round(alpha*B) subsequences from the body store and the remainder
/// from the online store, each uniform over valid (episode, start) pairs.
/// Body rows come first. Rounding is to nearest with ties toward body.
SubsequenceBatch sample_mixed_batch(const EpisodeStore& body,
                                    const EpisodeStore& online, double alpha,
                                    int B, int L, Rng& rng);

/// Uniform subsequence batch from a single store (actions required).
SubsequenceBatch sample_batch(const EpisodeStore& store, int B, int L, Rng& rng,
                              std::uint8_t source_tag = 1);

/// Observation-only subsequence batch; never touches actions, so it is the
/// sampler for action-free demonstration stores.
SubsequenceBatch sample_obs_batch(const EpisodeStore& store, int B, int L,
                                  Rng& rng);

/// Uniform without-replacement episode subset of ceil(fraction * size)
/// episodes, in original order. fraction must lie in (0, 1].
EpisodeStore subset_regulariser(const EpisodeStore& body, double fraction,
                                Rng& rng);

/// Nearest-integer rounding of alpha*B with ties toward the body share.
int body_share(double alpha, int B);

}  // namespace aime::data
