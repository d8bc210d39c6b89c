#include "aime/model/world_model.hpp"

#include <cmath>
#include <stdexcept>

namespace aime::model {

Mat LatentState::feat() const {
    Mat f(h.rows(), h.cols() + s_sample.cols());
    f << h, s_sample;
    return f;
}

WorldModel::WorldModel(const WorldModelConfig& cfg, Rng& init_rng)
    : cfg_(cfg),
      encoder_(params_, "encoder", cfg.obs_dim, {cfg.hidden}, cfg.embed_dim,
               init_rng),
      pre_gru_(params_, "pre_gru", cfg.stoch_size + cfg.act_dim, cfg.hidden,
               init_rng),
      gru_(params_, "gru", cfg.hidden, cfg.det_size, init_rng),
      prior_head_(params_, "prior", cfg.det_size, {cfg.hidden},
                  2 * cfg.stoch_size, init_rng),
      post_head_(params_, "posterior", cfg.det_size + cfg.embed_dim,
                 {cfg.hidden}, 2 * cfg.stoch_size, init_rng),
      decoder_(params_, "decoder", cfg.det_size + cfg.stoch_size, {cfg.hidden},
               cfg.obs_dim, init_rng),
      reward_head_(params_, "reward", cfg.det_size + cfg.stoch_size,
                   {cfg.hidden}, 1, init_rng) {
    if (cfg.obs_dim <= 0) throw std::invalid_argument("world model: obs_dim required");
}

Var WorldModel::feat_of(Tape& t, const TapeState& s) {
    return t.concat_cols(s.h, s.s_sample);
}

Var WorldModel::encode_graph(Graph& g, Var obs) const {
    return encoder_.apply(g, obs);
}

Var WorldModel::decode_mean(Graph& g, Var feat) const {
    return decoder_.apply(g, feat);
}

Var WorldModel::reward_mean(Graph& g, Var feat) const {
    return reward_head_.apply(g, feat);
}

TapeState WorldModel::initial_tape_state(Tape& t, int B) const {
    TapeState s;
    s.h = t.constant(Mat::Zero(B, cfg_.det_size));
    s.s_mean = t.constant(Mat::Zero(B, cfg_.stoch_size));
    s.s_std = t.constant(Mat::Ones(B, cfg_.stoch_size));
    s.s_sample = t.constant(Mat::Zero(B, cfg_.stoch_size));
    return s;
}

Var WorldModel::recurrent(Graph& g, const TapeState& prev, Var action) const {
    Tape& t = g.tape();
    Var x = t.concat_cols(prev.s_sample, action);
    Var pre = t.elu_(pre_gru_.apply(g, x));
    return gru_.apply(g, pre, prev.h);
}

TapeState WorldModel::stoch_head(Graph& g, const nn::Mlp& head, Var head_in,
                                 Var h, const Mat& noise) const {
    Tape& t = g.tape();
    Var out = head.apply(g, head_in);
    TapeState s;
    s.h = h;
    s.s_mean = t.slice_cols(out, 0, cfg_.stoch_size);
    s.s_std = t.add_const(t.softplus_(t.slice_cols(out, cfg_.stoch_size,
                                                   cfg_.stoch_size)),
                          cfg_.min_std);
    s.s_sample = t.add(s.s_mean, t.cmul(s.s_std, t.constant(noise)));
    return s;
}

TapeState WorldModel::step_posterior(Graph& g, const TapeState& prev, Var action,
                                     Var embed, const Mat& noise) const {
    Tape& t = g.tape();
    Var h = recurrent(g, prev, action);
    return stoch_head(g, post_head_, t.concat_cols(h, embed), h, noise);
}

TapeState WorldModel::step_prior(Graph& g, const TapeState& prev, Var action,
                                 const Mat& noise) const {
    Var h = recurrent(g, prev, action);
    return stoch_head(g, prior_head_, h, h, noise);
}

namespace {
LatentState detach(Tape& t, const TapeState& s) {
    LatentState out;
    out.h = t.val(s.h);
    out.s_mean = t.val(s.s_mean);
    out.s_std = t.val(s.s_std);
    out.s_sample = t.val(s.s_sample);
    return out;
}

void check_finite(const LatentState& s, const char* where) {
    if (!s.h.allFinite() || !s.s_mean.allFinite() || !s.s_std.allFinite() ||
        !s.s_sample.allFinite())
        throw std::runtime_error(std::string(where) + ": non-finite activations");
}
}  // namespace

Mat WorldModel::encode(const Mat& obs) const {
    Tape t;
    Graph g(t, false);
    return t.val(encoder_.apply(g, t.constant(obs)));
}

LatentState WorldModel::initial_state(int B) const {
    LatentState s;
    s.h = Mat::Zero(B, cfg_.det_size);
    s.s_mean = Mat::Zero(B, cfg_.stoch_size);
    s.s_std = Mat::Ones(B, cfg_.stoch_size);
    s.s_sample = Mat::Zero(B, cfg_.stoch_size);
    return s;
}

LatentState WorldModel::filter_posterior(const LatentState& prev, const Mat& action,
                                         const Mat& embed, Rng& rng) const {
    Tape t;
    Graph g(t, false);
    TapeState prev_ts{t.constant(prev.h), t.constant(prev.s_mean),
                      t.constant(prev.s_std), t.constant(prev.s_sample)};
    Mat noise = rng.normal_mat(prev.batch(), cfg_.stoch_size);
    TapeState next = step_posterior(g, prev_ts, t.constant(action),
                                    t.constant(embed), noise);
    LatentState out = detach(t, next);
    check_finite(out, "filter_posterior");
    return out;
}

LatentState WorldModel::predict_prior(const LatentState& prev, const Mat& action,
                                      Rng& rng) const {
    Tape t;
    Graph g(t, false);
    TapeState prev_ts{t.constant(prev.h), t.constant(prev.s_mean),
                      t.constant(prev.s_std), t.constant(prev.s_sample)};
    Mat noise = rng.normal_mat(prev.batch(), cfg_.stoch_size);
    TapeState next = step_prior(g, prev_ts, t.constant(action), noise);
    LatentState out = detach(t, next);
    check_finite(out, "predict_prior");
    return out;
}

Mat WorldModel::decode(const LatentState& state) const {
    Tape t;
    Graph g(t, false);
    return t.val(decoder_.apply(g, t.constant(state.feat())));
}

Vec WorldModel::reward(const LatentState& state) const {
    Tape t;
    Graph g(t, false);
    return t.val(reward_head_.apply(g, t.constant(state.feat()))).col(0);
}

ElboResult WorldModel::elbo_graph(Graph& g, const SubsequenceBatch& batch,
                                  double free_nats, double kl_balance, Rng& rng,
                                  const ActionProvider* action_provider) const {
    Tape& t = g.tape();
    const int B = batch.batch();
    const int L = batch.length();
    if (B <= 0 || L <= 0) throw std::invalid_argument("elbo: empty batch");
    const bool have_actions = !batch.act.empty();
    if (cfg_.act_dim > 0 && !have_actions && action_provider == nullptr)
        throw std::invalid_argument("elbo: batch is missing actions");

    // One encoder pass over all B*(L+1) rows; block t occupies rows [t*B, t*B+B).
    Mat obs_all(static_cast<Eigen::Index>(B) * (L + 1), cfg_.obs_dim);
    for (int step = 0; step <= L; ++step) obs_all.middleRows(step * B, B) = batch.obs[step];
    Var embed_all = encoder_.apply(g, t.constant(obs_all));

    std::vector<TapeState> states;
    states.reserve(L + 1);
    TapeState prev = initial_tape_state(t, B);
    std::vector<Var> kl_steps, kl_raws;
    for (int step = 0; step <= L; ++step) {
        Var action = (step == 0 || cfg_.act_dim == 0)
                         ? t.constant(Mat::Zero(B, cfg_.act_dim))
                         : (action_provider != nullptr
                                ? (*action_provider)(g, prev, step)
                                : t.constant(batch.act[step - 1]));
        Var h = recurrent(g, prev, action);
        Var prior_out = prior_head_.apply(g, h);
        Var embed = t.slice_rows(embed_all, step * B, B);
        Var post_out = post_head_.apply(g, t.concat_cols(h, embed));

        auto split = [&](Var out) {
            Var mean = t.slice_cols(out, 0, cfg_.stoch_size);
            Var std = t.add_const(
                t.softplus_(t.slice_cols(out, cfg_.stoch_size, cfg_.stoch_size)),
                cfg_.min_std);
            return std::pair<Var, Var>(mean, std);
        };
        auto [pm, ps] = split(prior_out);
        auto [qm, qs] = split(post_out);

        Var kl_post_to_sg_prior = t.mean_all(
            t.gauss_kl(qm, qs, t.stopgrad(pm), t.stopgrad(ps)));
        Var kl_sg_post_to_prior = t.mean_all(
            t.gauss_kl(t.stopgrad(qm), t.stopgrad(qs), pm, ps));
        Var kl_bal = t.add(t.scale(kl_sg_post_to_prior, kl_balance),
                           t.scale(kl_post_to_sg_prior, 1.0 - kl_balance));
        kl_steps.push_back(t.max_const(kl_bal, free_nats));
        kl_raws.push_back(t.mean_all(t.gauss_kl(qm, qs, pm, ps)));

        TapeState cur;
        cur.h = h;
        cur.s_mean = qm;
        cur.s_std = qs;
        cur.s_sample = t.add(qm, t.cmul(qs, t.constant(rng.normal_mat(B, cfg_.stoch_size))));
        states.push_back(cur);
        prev = cur;
    }

    std::vector<Var> feats;
    feats.reserve(L + 1);
    for (const auto& s : states) feats.push_back(feat_of(t, s));
    Var feat_all = t.vstack(feats);
    Var dec_mean = decoder_.apply(g, feat_all);
    Var recon_rows = t.gauss_logprob_unit(dec_mean, obs_all);  // [B*(L+1), 1]
    Var recon_obs = t.scale(t.sum_all(recon_rows), 1.0 / B);

    // Reward reconstruction: target r_t pairs with the state after step t+1.
    int n_valid = 0;
    for (auto v : batch.srew_valid) n_valid += v;
    Var recon_rew{};
    bool have_reward = n_valid > 0 && !batch.srew.empty();
    if (have_reward) {
        Var rew_feat = t.slice_rows(feat_all, B, static_cast<int>(B) * L);
        Var rew_mean = reward_mean(g, rew_feat);
        Mat target(static_cast<Eigen::Index>(B) * L, 1);
        Mat mask(static_cast<Eigen::Index>(B) * L, 1);
        for (int step = 0; step < L; ++step)
            for (int b = 0; b < B; ++b) {
                target(step * B + b, 0) = batch.srew[step](b);
                mask(step * B + b, 0) = batch.srew_valid[b] ? 1.0 : 0.0;
            }
        Var lp = t.gauss_logprob_unit(rew_mean, target);
        recon_rew = t.scale(t.sum_all(t.cmul(lp, t.constant(mask))), 1.0 / n_valid);
    }

    Var kl_total = kl_steps[0];
    for (std::size_t i = 1; i < kl_steps.size(); ++i)
        kl_total = t.add(kl_total, kl_steps[i]);
    Var total = t.sub(recon_obs, kl_total);
    if (have_reward) total = t.add(total, recon_rew);

    ElboResult res;
    res.total = total;
    res.states = std::move(states);
    ElboBreakdown& bd = res.breakdown;
    bd.total = t.val(total)(0, 0);
    bd.recon_obs = t.val(recon_obs)(0, 0);
    bd.recon_reward = have_reward ? t.val(recon_rew)(0, 0) : 0.0;
    bd.kl_loss = t.val(kl_total)(0, 0);
    const Mat& rec_vals = t.val(recon_rows);
    for (int step = 0; step <= L; ++step) {
        bd.per_step_recon_obs.push_back(rec_vals.middleRows(step * B, B).mean());
        bd.per_step_kl_raw.push_back(t.val(kl_raws[step])(0, 0));
        bd.per_step_kl_loss.push_back(t.val(kl_steps[step])(0, 0));
        bd.kl_raw += bd.per_step_kl_raw.back();
    }
    if (!std::isfinite(bd.total)) throw std::runtime_error("elbo: non-finite value");
    return res;
}

ElboBreakdown WorldModel::elbo(const SubsequenceBatch& batch, double free_nats,
                               double kl_balance, Rng& rng) const {
    Tape t;
    Graph g(t, false);
    return elbo_graph(g, batch, free_nats, kl_balance, rng).breakdown;
}

std::vector<LatentState> WorldModel::filter_sequence(const SubsequenceBatch& batch,
                                                     Rng& rng) const {
    const int B = batch.batch();
    const int L = batch.length();
    if (cfg_.act_dim > 0 && batch.act.empty())
        throw std::invalid_argument("filter: batch is missing actions");
    std::vector<LatentState> out;
    out.reserve(L + 1);
    LatentState state = initial_state(B);
    for (int step = 0; step <= L; ++step) {
        Mat action = (step == 0 || cfg_.act_dim == 0)
                         ? Mat::Zero(B, cfg_.act_dim)
                         : Mat(batch.act[step - 1]);
        Mat embed = encode(batch.obs[step]);
        state = filter_posterior(state, action, embed, rng);
        out.push_back(state);
    }
    return out;
}

WorldModel::Imagined WorldModel::imagine(const LatentState& starts,
                                         const PolicyFn& policy, int H,
                                         Rng& rng) const {
    if (H < 1) throw std::invalid_argument("imagine: horizon must be >= 1");
    Imagined out;
    LatentState state = starts;
    for (int k = 0; k < H; ++k) {
        Mat action = policy(state.feat(), rng);
        state = predict_prior(state, action, rng);
        out.actions.push_back(action);
        out.states.push_back(state);
        out.rewards.push_back(reward(state));
    }
    return out;
}

ModelStepReport WorldModel::train_model_step(const SubsequenceBatch& body,
                                             const SubsequenceBatch& online,
                                             double alpha, Adam& opt, Rng& rng) {
    if (alpha < 0.0 || alpha > 1.0)
        throw std::invalid_argument("train_model_step: alpha outside [0, 1]");
    bool use_body = alpha > 0.0 && body.batch() > 0;
    bool use_online = alpha < 1.0 && online.batch() > 0;
    if (alpha > 0.0 && body.batch() == 0 && !use_online)
        throw std::invalid_argument("train_model_step: no usable batch");
    if (!use_body && !use_online)
        throw std::invalid_argument("train_model_step: both batches empty");

    Tape t;
    Graph g(t, true);
    ModelStepReport report;
    Var objective{};
    if (use_body) {
        ElboResult rb = elbo_graph(g, body, cfg_.free_nats, cfg_.kl_balance, rng);
        report.body = rb.breakdown;
        report.has_body = true;
        objective = t.scale(rb.total, use_online ? alpha : 1.0);
    }
    if (use_online) {
        ElboResult ro = elbo_graph(g, online, cfg_.free_nats, cfg_.kl_balance, rng);
        report.online = ro.breakdown;
        report.has_online = true;
        for (const auto& s : ro.states) report.online_posterior.push_back(
            LatentState{t.val(s.h), t.val(s.s_mean), t.val(s.s_std), t.val(s.s_sample)});
        Var term = t.scale(ro.total, use_body ? 1.0 - alpha : 1.0);
        objective = use_body ? t.add(objective, term) : term;
    }
    Var loss = t.neg(objective);
    t.backward(loss);
    report.grad_norm = opt.step(params_, g);
    return report;
}

}  // namespace aime::model
