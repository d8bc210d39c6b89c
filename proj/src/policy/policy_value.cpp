#include "aime/policy/policy_value.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace aime::policy {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * ln(2*pi)
constexpr double kLog2 = 0.6931471805599453;
// Emitted actions saturate just inside (-1, 1) so that atanh stays finite
// and a float32 round-trip cannot land exactly on the boundary.
constexpr double kActionLimit = 1.0 - 1e-6;

double stable_softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// ln(1 - tanh(u)^2) = 2 * (ln 2 - u - softplus(-2u)), summed over columns.
Vec tanh_jacobian_rows(const Mat& u) {
    Vec out = Vec::Zero(u.rows());
    for (Eigen::Index r = 0; r < u.rows(); ++r)
        for (Eigen::Index c = 0; c < u.cols(); ++c)
            out(r) += 2.0 * (kLog2 - u(r, c) - stable_softplus(-2.0 * u(r, c)));
    return out;
}

Mat clamped_atanh(const Mat& actions) {
    return actions
        .unaryExpr([](double a) {
            return std::atanh(std::min(kActionLimit, std::max(-kActionLimit, a)));
        })
        .matrix();
}

void check_unit_range(double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0))
        throw std::invalid_argument(std::string(what) + " must lie in [0, 1]");
}

}  // namespace

// ---------------------------------------------------------------------------
// Policy

Policy::Policy(const PolicyConfig& cfg, Rng& init_rng)
    : cfg_(cfg),
      trunk_(params_, "policy", cfg.feat_dim, cfg.hidden, 2 * cfg.act_dim,
             init_rng, nn::Act::Elu) {
    if (cfg.feat_dim <= 0 || cfg.act_dim <= 0)
        throw std::invalid_argument("policy: dimensions must be positive");
    if (cfg.min_std <= 0.0)
        throw std::invalid_argument("policy: min_std must be positive");
}

Policy::DistVars Policy::dist_graph(Graph& g, Var feat) const {
    Tape& t = g.tape();
    Var out = trunk_.apply(g, feat);
    Var mean = t.slice_cols(out, 0, cfg_.act_dim);
    Var std = t.add_const(t.softplus_(t.slice_cols(out, cfg_.act_dim, cfg_.act_dim)),
                          cfg_.min_std);
    return {mean, std};
}

Policy::SampleVars Policy::sample_graph(Graph& g, Var feat, const Mat& noise) const {
    Tape& t = g.tape();
    DistVars d = dist_graph(g, feat);
    if (noise.rows() != t.val(d.mean).rows() || noise.cols() != cfg_.act_dim)
        throw std::invalid_argument("policy sample: noise shape mismatch");
    Var u = t.add(d.mean, t.cmul(d.std, t.constant(noise)));
    Var action = t.clamp_(t.tanh_(u), -kActionLimit, kActionLimit);

    // log N(u; mean, std), differentiable through u as well as the params.
    Var z = t.cdiv(t.sub(u, d.mean), d.std);
    Var per = t.add_const(t.add(t.scale(t.square_(z), 0.5), t.log_(d.std)),
                          kHalfLog2Pi);
    Var normal_row = t.neg(t.sum_rows(per));
    // Change of variables: subtract sum ln(1 - tanh(u)^2).
    Var jac = t.scale(
        t.add_const(t.neg(t.add(u, t.softplus_(t.scale(u, -2.0)))), kLog2), 2.0);
    Var log_prob = t.sub(normal_row, t.sum_rows(jac));
    return {action, u, log_prob};
}

Var Policy::log_prob_graph(Graph& g, Var feat, const Mat& actions) const {
    Tape& t = g.tape();
    if (actions.cols() != cfg_.act_dim)
        throw std::invalid_argument("policy log_prob: action dimension mismatch");
    DistVars d = dist_graph(g, feat);
    Mat u = clamped_atanh(actions);
    Var normal_row = t.gauss_logprob(d.mean, d.std, u);
    Mat jac = tanh_jacobian_rows(u);
    return t.sub(normal_row, t.constant(jac));
}

Mat Policy::act(const Mat& feat, Mode mode, Rng& rng) const {
    Tape t;
    Graph g(t, false);
    DistVars d = dist_graph(g, t.constant(feat));
    Mat pre = t.val(d.mean);
    if (mode == Mode::Sample)
        pre += t.val(d.std).cwiseProduct(rng.normal_mat(feat.rows(), cfg_.act_dim));
    return pre.array().tanh().min(kActionLimit).max(-kActionLimit).matrix();
}

Vec Policy::log_prob(const Mat& feat, const Mat& actions) const {
    Tape t;
    Graph g(t, false);
    Var lp = log_prob_graph(g, t.constant(feat), actions);
    return t.val(lp).col(0);
}

// ---------------------------------------------------------------------------
// ValueFunction

ValueFunction::ValueFunction(int feat_dim, const std::vector<int>& hidden,
                             Rng& init_rng)
    : net_(params_, "value", feat_dim, hidden, 1, init_rng, nn::Act::Elu),
      target_net_(target_params_, "value", feat_dim, hidden, 1, init_rng,
                  nn::Act::Elu) {
    target_params_.copy_values_from(params_);
}

Vec ValueFunction::value(const Mat& feat) const {
    Tape t;
    Graph g(t, false);
    return t.val(net_.apply(g, t.constant(feat))).col(0);
}

Vec ValueFunction::target(const Mat& feat) const {
    Tape t;
    Graph g(t, false);
    return t.val(target_net_.apply(g, t.constant(feat))).col(0);
}

Var ValueFunction::value_graph(Graph& g, Var feat) const {
    return net_.apply(g, feat);
}

Var ValueFunction::target_graph(Graph& g, Var feat) const {
    return target_net_.apply(g, feat);
}

double ValueFunction::value_update(const Mat& feats, const Vec& targets,
                                   Adam& opt) {
    if (!targets.allFinite())
        throw std::invalid_argument("value update: non-finite targets");
    if (feats.rows() != targets.size())
        throw std::invalid_argument("value update: feats/targets row mismatch");
    Tape t;
    Graph g(t, true);
    Var v = net_.apply(g, t.constant(feats));
    Var diff = t.sub(v, t.constant(Mat(targets)));
    Var loss = t.mean_all(t.square_(diff));
    double loss_value = t.val(loss)(0, 0);
    t.backward(loss);
    opt.step(params_, g);
    return loss_value;
}

void ValueFunction::polyak(double decay) {
    check_unit_range(decay, "polyak decay");
    const auto& live = params_.all();
    auto& tgt = target_params_.all();
    for (std::size_t i = 0; i < live.size(); ++i)
        tgt[i]->value = decay * tgt[i]->value + (1.0 - decay) * live[i]->value;
}

std::map<std::string, Mat> ValueFunction::state() const {
    std::map<std::string, Mat> out;
    for (const auto& [k, v] : params_.state()) out["live/" + k] = v;
    for (const auto& [k, v] : target_params_.state()) out["target/" + k] = v;
    return out;
}

void ValueFunction::load_state(const std::map<std::string, Mat>& s) {
    std::map<std::string, Mat> live, tgt;
    for (const auto& [k, v] : s) {
        if (k.rfind("live/", 0) == 0) live[k.substr(5)] = v;
        else if (k.rfind("target/", 0) == 0) tgt[k.substr(7)] = v;
        else throw std::invalid_argument("value state: unknown key " + k);
    }
    params_.load_state(live);
    target_params_.load_state(tgt);
}

// ---------------------------------------------------------------------------
// TD(lambda)

Vec lambda_returns(const Vec& rewards, const Vec& values, double gamma,
                   double lambda) {
    check_unit_range(gamma, "gamma");
    check_unit_range(lambda, "lambda");
    const Eigen::Index H = rewards.size();
    if (H < 1) throw std::invalid_argument("lambda returns: empty horizon");
    if (values.size() != H + 1)
        throw std::invalid_argument("lambda returns: need H+1 values");
    Vec out(H);
    out(H - 1) = rewards(H - 1) + gamma * values(H);
    for (Eigen::Index t = H - 2; t >= 0; --t)
        out(t) = rewards(t) +
                 gamma * ((1.0 - lambda) * values(t + 1) + lambda * out(t + 1));
    return out;
}

std::vector<Var> lambda_returns_graph(Tape& t, const std::vector<Var>& rewards,
                                      const std::vector<Var>& values,
                                      double gamma, double lambda) {
    check_unit_range(gamma, "gamma");
    check_unit_range(lambda, "lambda");
    const int H = static_cast<int>(rewards.size());
    if (H < 1) throw std::invalid_argument("lambda returns: empty horizon");
    if (values.size() != rewards.size() + 1)
        throw std::invalid_argument("lambda returns: need H+1 values");
    std::vector<Var> out(H);
    out[H - 1] = t.add(rewards[H - 1], t.scale(values[H], gamma));
    for (int step = H - 2; step >= 0; --step) {
        Var mix = t.add(t.scale(values[step + 1], gamma * (1.0 - lambda)),
                        t.scale(out[step + 1], gamma * lambda));
        out[step] = t.add(rewards[step], mix);
    }
    return out;
}

// ---------------------------------------------------------------------------
// AIME behaviour cloning

namespace {

/// Threads reparameterised policy actions into a posterior rollout. The
/// policy's graph may differ from the model's (to freeze one side).
WorldModel::ActionProvider make_action_provider(Graph& policy_graph,
                                                const Policy& policy,
                                                Rng& rng) {
    return [&policy_graph, &policy, &rng](Graph&, const model::TapeState& prev,
                                          int) -> Var {
        Tape& t = policy_graph.tape();
        Var feat = WorldModel::feat_of(t, prev);
        Mat noise = rng.normal_mat(t.val(prev.h).rows(),
                                   policy.config().act_dim);
        return policy.sample_graph(policy_graph, feat, noise).action;
    };
}

}  // namespace

Var aime_loss_graph(Graph& g, const SubsequenceBatch& demo_batch,
                    const WorldModel& model, const Policy& policy, Rng& rng) {
    if (!demo_batch.act.empty())
        throw std::invalid_argument("aime loss: demo batch must be action-free");
    auto provider = make_action_provider(g, policy, rng);
    auto result = model.elbo_graph(g, demo_batch, model.config().free_nats,
                                   model.config().kl_balance, rng, &provider);
    return g.tape().neg(result.total);
}

double aime_loss(const SubsequenceBatch& demo_batch, const WorldModel& model,
                 const Policy& policy, Rng& rng) {
    Tape t;
    Graph g(t, false);
    Var loss = aime_loss_graph(g, demo_batch, model, policy, rng);
    return t.val(loss)(0, 0);
}

// ---------------------------------------------------------------------------
// Combined policy objective

PolicyUpdateReport policy_update(const SubsequenceBatch& demo_batch,
                                 const LatentState& online_starts,
                                 const WorldModel& model, Policy& policy,
                                 const ValueFunction& value,
                                 const PolicyUpdateConfig& cfg, Adam& opt,
                                 Rng& rng) {
    if (cfg.beta < 0.0)
        throw std::invalid_argument("policy update: beta must be >= 0");
    if (cfg.aime_weight < 0.0)
        throw std::invalid_argument("policy update: aime weight must be >= 0");
    const bool use_demo = cfg.aime_weight > 0.0;
    const bool use_value = cfg.beta > 0.0;
    if (!use_demo && !use_value)
        throw std::invalid_argument("policy update: both objective terms are off");
    if (use_demo && demo_batch.obs.empty())
        throw std::invalid_argument("policy update: demo batch required");
    if (use_demo && !demo_batch.act.empty())
        throw std::invalid_argument("policy update: demo batch must be action-free");
    if (use_value && online_starts.batch() == 0)
        throw std::invalid_argument("policy update: online start states required");
    if (use_value && cfg.horizon < 1)
        throw std::invalid_argument("policy update: horizon must be >= 1");

    // The imagination branch is seeded up front so that the noise each branch
    // sees does not depend on whether the other branch is active.
    Rng imag_rng = Rng::stream(rng.bits(), "policy imagination");

    const double nan = std::numeric_limits<double>::quiet_NaN();
    PolicyUpdateReport report;
    report.aime_elbo = nan;
    report.value_term = nan;
    report.entropy = nan;

    Tape t;
    Graph g_train(t, true);
    Graph g_frozen(t, false);
    std::vector<Var> terms;

    if (use_demo) {
        auto provider = make_action_provider(g_train, policy, rng);
        auto demo = model.elbo_graph(g_frozen, demo_batch,
                                     model.config().free_nats,
                                     model.config().kl_balance, rng, &provider);
        report.aime_elbo = demo.breakdown.total;
        terms.push_back(t.scale(demo.total, cfg.aime_weight));
    }

    if (use_value) {
        const int B = online_starts.batch();
        const int A = policy.config().act_dim;
        const int stoch = model.config().stoch_size;
        model::TapeState state{t.constant(online_starts.h),
                               t.constant(online_starts.s_mean),
                               t.constant(online_starts.s_std),
                               t.constant(online_starts.s_sample)};
        std::vector<Var> feats, rewards, values, log_probs;
        feats.push_back(WorldModel::feat_of(t, state));
        values.push_back(value.target_graph(g_frozen, feats.back()));
        for (int k = 0; k < cfg.horizon; ++k) {
            auto sample = policy.sample_graph(g_train, feats.back(),
                                              imag_rng.normal_mat(B, A));
            log_probs.push_back(sample.log_prob);
            state = model.step_prior(g_frozen, state, sample.action,
                                     imag_rng.normal_mat(B, stoch));
            feats.push_back(WorldModel::feat_of(t, state));
            rewards.push_back(model.reward_mean(g_frozen, feats.back()));
            values.push_back(value.target_graph(g_frozen, feats.back()));
        }
        auto returns = lambda_returns_graph(t, rewards, values, cfg.gamma,
                                            cfg.lambda);
        Var value_term = t.mean_all(t.vstack(returns));
        Var entropy = t.neg(t.mean_all(t.vstack(log_probs)));
        report.value_term = t.val(value_term)(0, 0);
        report.entropy = t.val(entropy)(0, 0);
        terms.push_back(t.scale(value_term, cfg.beta));
        terms.push_back(t.scale(entropy, cfg.entropy_w));

        // Detached states + lambda returns, ready for the value regression.
        const int F = model.config().det_size + stoch;
        report.value_feats.resize(static_cast<Eigen::Index>(cfg.horizon) * B, F);
        report.value_targets.resize(static_cast<Eigen::Index>(cfg.horizon) * B);
        for (int k = 0; k < cfg.horizon; ++k) {
            report.value_feats.middleRows(k * B, B) = t.val(feats[k]);
            report.value_targets.segment(k * B, B) = t.val(returns[k]).col(0);
        }
    }

    Var objective = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i)
        objective = t.add(objective, terms[i]);
    report.objective = t.val(objective)(0, 0);

    t.backward(t.neg(objective));
    for (const auto& p : policy.params().all())
        report.gradients[p->name] = g_train.grad_of(*p);
    report.grad_norm = opt.step(policy.params(), g_train);
    return report;
}

}  // namespace aime::policy
