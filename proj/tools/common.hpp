#pragma once

// Shared plumbing for the command-line tools: config loading, world-model
// construction, and the pretrained-model cache.

#include "aime/data/episode.hpp"
#include "aime/data/store_io.hpp"
#include "aime/driver/driver.hpp"
#include "aime/env/envgym.hpp"
#include "aime/io/checkpoint.hpp"
#include "aime/model/world_model.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tools {

using namespace aime;

/// World-model width flags shared by the training tools.
struct ModelShape {
    int embed = 32;
    int det = 64;
    int stoch = 8;
    int hidden = 64;
};

inline std::string read_text_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

/// Run configuration from a key=value file; defaults when path is empty.
inline driver::RunConfig load_run_config(const std::string& path) {
    if (path.empty()) return {};
    return driver::parse_run_config(read_text_file(path));
}

inline std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        int v = std::stoi(item, &used);
        if (used != item.size())
            throw std::invalid_argument("bad integer list entry: " + item);
        out.push_back(v);
    }
    if (out.empty()) throw std::invalid_argument("empty integer list");
    return out;
}

inline std::string fmt17(double v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
}

inline model::WorldModelConfig world_model_config(const env::EnvSpec& spec,
                                                  const driver::RunConfig& cfg,
                                                  const ModelShape& shape) {
    model::WorldModelConfig mc;
    mc.obs_dim = spec.obs_dim;
    mc.act_dim = spec.act_dim;
    mc.embed_dim = shape.embed;
    mc.det_size = shape.det;
    mc.stoch_size = shape.stoch;
    mc.hidden = shape.hidden;
    mc.free_nats = cfg.free_nats;
    mc.kl_balance = cfg.kl_balance;
    return mc;
}

/// Pretrains in place: iters ascent steps on the body evidence bound.
inline void pretrain_world_model(model::WorldModel& model,
                                 const data::EpisodeStore& body, int iters,
                                 double lr, int batch, int seq, nn::Rng& rng) {
    nn::AdamConfig ac;
    ac.lr = lr;
    nn::Adam opt(ac);
    for (int i = 0; i < iters; ++i) {
        auto b = data::sample_batch(body, batch, seq, rng);
        model.train_model_step(b, {}, 1.0, opt, rng);
    }
}

inline std::map<std::string, nn::Mat> with_prefix(
    const std::map<std::string, nn::Mat>& tensors, const std::string& prefix) {
    std::map<std::string, nn::Mat> out;
    for (const auto& [k, v] : tensors) out[prefix + k] = v;
    return out;
}

inline std::map<std::string, nn::Mat> strip_prefix(
    const std::map<std::string, nn::Mat>& tensors, const std::string& prefix) {
    std::map<std::string, nn::Mat> out;
    for (const auto& [k, v] : tensors)
        if (k.rfind(prefix, 0) == 0) out[k.substr(prefix.size())] = v;
    return out;
}

/// Identity of one model-pretraining run; cached checkpoints are only reused
/// when every entry matches. The model has its own seed, independent of the
/// run seed, so several policy seeds can share one pretrained model.
inline std::map<std::string, std::string> model_cache_manifest(
    const env::EnvSpec& spec, const model::WorldModelConfig& mc, int iters,
    const driver::RunConfig& cfg, std::uint64_t model_seed,
    std::size_t body_episodes) {
    std::map<std::string, std::string> m;
    m["env"] = spec.name;
    m["model_embed"] = std::to_string(mc.embed_dim);
    m["model_det"] = std::to_string(mc.det_size);
    m["model_stoch"] = std::to_string(mc.stoch_size);
    m["model_hidden"] = std::to_string(mc.hidden);
    m["model_min_std"] = fmt17(mc.min_std);
    m["free_nats"] = fmt17(mc.free_nats);
    m["kl_balance"] = fmt17(mc.kl_balance);
    m["pretrain_iters"] = std::to_string(iters);
    m["model_lr"] = fmt17(cfg.model_lr);
    m["batch"] = std::to_string(cfg.batch);
    m["seq"] = std::to_string(cfg.seq);
    m["model_seed"] = std::to_string(model_seed);
    m["body_episodes"] = std::to_string(body_episodes);
    return m;
}

/// Loads a cached pretrained model when cache_dir holds one with an exactly
/// matching manifest; a mismatched cache is an error rather than a silent
/// retrain. With no usable cache, pretrains on the body store and, when
/// cache_dir is nonempty, saves the result for the next run.
inline model::WorldModel load_or_pretrain_model(
    const std::string& cache_dir, const env::EnvSpec& spec,
    const driver::RunConfig& cfg, const ModelShape& shape, int iters,
    std::uint64_t model_seed, const data::EpisodeStore& body,
    std::ostream& log) {
    model::WorldModelConfig mc = world_model_config(spec, cfg, shape);
    nn::Rng init = nn::Rng::stream(model_seed, "model init");
    model::WorldModel model(mc, init);
    auto expected =
        model_cache_manifest(spec, mc, iters, cfg, model_seed, body.size());

    if (!cache_dir.empty() &&
        std::filesystem::exists(cache_dir + "/manifest.txt")) {
        io::Checkpoint ck = io::load_checkpoint(cache_dir);
        for (const auto& [k, v] : expected) {
            auto it = ck.manifest.find(k);
            if (it == ck.manifest.end() || it->second != v)
                throw std::runtime_error(
                    "model cache " + cache_dir + " does not match this run (" +
                    k + ": cached '" +
                    (it == ck.manifest.end() ? std::string("<missing>")
                                             : it->second) +
                    "', expected '" + v + "'); delete it or point elsewhere");
        }
        model.load_state(strip_prefix(ck.tensors, "model/"));
        log << "loaded pretrained model from " << cache_dir << "\n";
        return model;
    }

    log << "pretraining world model: " << iters << " steps on "
        << body.size() << " episodes\n";
    nn::Rng pre = nn::Rng::stream(model_seed, "model pretrain");
    pretrain_world_model(model, body, iters, cfg.model_lr, cfg.batch, cfg.seq,
                         pre);
    if (!cache_dir.empty()) {
        io::save_checkpoint(cache_dir, with_prefix(model.state(), "model/"),
                            expected);
        log << "cached pretrained model at " << cache_dir << "\n";
    }
    return model;
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << text;
}

}  // namespace tools
