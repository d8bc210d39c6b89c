#include "aime/driver/driver.hpp"

#include "aime/barrier/barrier.hpp"
#include "aime/io/checkpoint.hpp"
#include "aime/rewards/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace aime::driver {

using data::SubsequenceBatch;
using model::LatentState;
using nn::Graph;
using nn::Mat;
using nn::Tape;
using nn::Var;
using nn::Vec;

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

/// Rows of a discriminator minibatch (per side).
constexpr int kDiscBatch = 64;

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void RunConfig::validate() const {
    require(alpha >= 0.0 && alpha <= 1.0, "run config: alpha must be in [0, 1]");
    require(beta >= 0.0, "run config: beta must be >= 0");
    require(gamma >= 0.0 && gamma <= 1.0, "run config: gamma must be in [0, 1]");
    require(td_lambda >= 0.0 && td_lambda <= 1.0,
            "run config: td_lambda must be in [0, 1]");
    require(imagine_horizon >= 1, "run config: imagine_horizon must be >= 1");
    require(batch >= 1, "run config: batch must be >= 1");
    require(seq >= 1, "run config: seq must be >= 1");
    require(env_step_budget >= 0, "run config: env_step_budget must be >= 0");
    require(update_ratio >= 0.0, "run config: update_ratio must be >= 0");
    require(pretrain_iters >= 0, "run config: pretrain_iters must be >= 0");
    require(model_lr > 0.0, "run config: model_lr must be > 0");
    require(policy_lr > 0.0, "run config: policy_lr must be > 0");
    require(value_lr > 0.0, "run config: value_lr must be > 0");
    require(entropy_weight >= 0.0, "run config: entropy_weight must be >= 0");
    require(polyak >= 0.0 && polyak <= 1.0,
            "run config: polyak must be in [0, 1]");
    require(free_nats >= 0.0, "run config: free_nats must be >= 0");
    require(kl_balance >= 0.0 && kl_balance <= 1.0,
            "run config: kl_balance must be in [0, 1]");
    require(surrogate == "ail" || surrogate == "ot" || surrogate == "viper",
            "run config: surrogate must be ail, ot or viper");
    require(eval_every >= 1, "run config: eval_every must be >= 1");
    require(eval_rollouts >= 1, "run config: eval_rollouts must be >= 1");
    require(disc_steps >= 0, "run config: disc_steps must be >= 0");
    require(disc_hidden >= 1, "run config: disc_hidden must be >= 1");
    require(viper_budget >= 1, "run config: viper_budget must be >= 1");
}

namespace {

std::string trimmed(const std::string& s) {
    auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument("run config: bad value for " + key);
    }
    if (used != v.size())
        throw std::invalid_argument("run config: bad value for " + key);
    return out;
}

long parse_long(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    long out;
    try {
        out = std::stol(v, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument("run config: bad value for " + key);
    }
    if (used != v.size())
        throw std::invalid_argument("run config: bad value for " + key);
    return out;
}

int parse_int(const std::string& key, const std::string& v) {
    return static_cast<int>(parse_long(key, v));
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trimmed(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("run config: expected key=value, got '" +
                                        line + "'");
        std::string key = trimmed(line.substr(0, eq));
        std::string val = trimmed(line.substr(eq + 1));
        if (key == "alpha") cfg.alpha = parse_double(key, val);
        else if (key == "beta") cfg.beta = parse_double(key, val);
        else if (key == "gamma") cfg.gamma = parse_double(key, val);
        else if (key == "td_lambda") cfg.td_lambda = parse_double(key, val);
        else if (key == "imagine_horizon") cfg.imagine_horizon = parse_int(key, val);
        else if (key == "batch") cfg.batch = parse_int(key, val);
        else if (key == "seq") cfg.seq = parse_int(key, val);
        else if (key == "env_step_budget") cfg.env_step_budget = parse_long(key, val);
        else if (key == "update_ratio") cfg.update_ratio = parse_double(key, val);
        else if (key == "pretrain_iters") cfg.pretrain_iters = parse_int(key, val);
        else if (key == "model_lr") cfg.model_lr = parse_double(key, val);
        else if (key == "policy_lr") cfg.policy_lr = parse_double(key, val);
        else if (key == "value_lr") cfg.value_lr = parse_double(key, val);
        else if (key == "entropy_weight") cfg.entropy_weight = parse_double(key, val);
        else if (key == "polyak") cfg.polyak = parse_double(key, val);
        else if (key == "free_nats") cfg.free_nats = parse_double(key, val);
        else if (key == "kl_balance") cfg.kl_balance = parse_double(key, val);
        else if (key == "surrogate") cfg.surrogate = val;
        else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_long(key, val));
        else if (key == "eval_every") cfg.eval_every = parse_int(key, val);
        else if (key == "eval_rollouts") cfg.eval_rollouts = parse_int(key, val);
        else if (key == "disc_steps") cfg.disc_steps = parse_int(key, val);
        else if (key == "disc_hidden") cfg.disc_hidden = parse_int(key, val);
        else if (key == "viper_budget") cfg.viper_budget = parse_long(key, val);
        else throw std::invalid_argument("run config: unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

std::string run_config_text(const RunConfig& cfg) {
    std::ostringstream out;
    out.precision(17);
    out << "alpha=" << cfg.alpha << "\n"
        << "beta=" << cfg.beta << "\n"
        << "gamma=" << cfg.gamma << "\n"
        << "td_lambda=" << cfg.td_lambda << "\n"
        << "imagine_horizon=" << cfg.imagine_horizon << "\n"
        << "batch=" << cfg.batch << "\n"
        << "seq=" << cfg.seq << "\n"
        << "env_step_budget=" << cfg.env_step_budget << "\n"
        << "update_ratio=" << cfg.update_ratio << "\n"
        << "pretrain_iters=" << cfg.pretrain_iters << "\n"
        << "model_lr=" << cfg.model_lr << "\n"
        << "policy_lr=" << cfg.policy_lr << "\n"
        << "value_lr=" << cfg.value_lr << "\n"
        << "entropy_weight=" << cfg.entropy_weight << "\n"
        << "polyak=" << cfg.polyak << "\n"
        << "free_nats=" << cfg.free_nats << "\n"
        << "kl_balance=" << cfg.kl_balance << "\n"
        << "surrogate=" << cfg.surrogate << "\n"
        << "seed=" << cfg.seed << "\n"
        << "eval_every=" << cfg.eval_every << "\n"
        << "eval_rollouts=" << cfg.eval_rollouts << "\n"
        << "disc_steps=" << cfg.disc_steps << "\n"
        << "disc_hidden=" << cfg.disc_hidden << "\n"
        << "viper_budget=" << cfg.viper_budget << "\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// Policy pretraining

double pretrain_policy(const WorldModel& model, const EpisodeStore& demos,
                       int iters, Policy& policy, Adam& opt, Rng& rng,
                       int batch, int seq) {
    require(demos.size() > 0, "pretrain: demo store is empty");
    require(iters >= 0, "pretrain: iters must be >= 0");
    double last = kNan;
    for (int it = 0; it < iters; ++it) {
        auto b = data::sample_obs_batch(demos, batch, seq, rng);
        Tape t;
        Graph g(t, true);
        Var loss = policy::aime_loss_graph(g, b, model, policy, rng);
        last = -t.val(loss)(0, 0);
        t.backward(loss);
        opt.step(policy.params(), g);
    }
    return last;
}

// ---------------------------------------------------------------------------
// Environment interaction

Episode collect_episode(env::Env& env, const WorldModel& model,
                        const Policy& policy, Policy::Mode mode, Rng& rng) {
    const auto& spec = env.spec();
    require(model.config().obs_dim == spec.obs_dim,
            "collect: model and environment disagree on obs_dim");
    require(model.config().act_dim == spec.act_dim,
            "collect: model and environment disagree on act_dim");
    const int T = spec.horizon;
    const int O = spec.obs_dim;
    const int A = spec.act_dim;

    Episode ep;
    ep.observations.resize(T + 1, O);
    ep.actions.resize(T, A);
    ep.true_rewards.resize(T);
    ep.meta["policy"] = "agent";

    Vec obs = env.reset(rng);
    ep.observations.row(0) = obs.cast<float>().transpose();
    LatentState state = model.initial_state(1);
    state = model.filter_posterior(state, Mat::Zero(1, A),
                                   model.encode(obs.transpose()), rng);
    for (int t = 0; t < T; ++t) {
        Mat action = policy.act(state.feat(), mode, rng);
        auto res = env.step(action.row(0).transpose());
        ep.observations.row(t + 1) = res.obs.cast<float>().transpose();
        ep.actions.row(t) = action.row(0).cast<float>();
        ep.true_rewards(t) = static_cast<float>(res.reward);
        state = model.filter_posterior(state, action,
                                       model.encode(res.obs.transpose()), rng);
    }
    ep.validate();
    return ep;
}

EvalResult evaluate_policy(env::Env& env, const WorldModel& model,
                           const Policy& policy, int n_rollouts, Rng& rng) {
    require(n_rollouts >= 1, "evaluate: need at least one rollout");
    const bool has_success = env.spec().kind == env::EnvKind::PointmassGoal;
    double sum_return = 0.0;
    int successes = 0;
    for (int i = 0; i < n_rollouts; ++i) {
        Episode ep = collect_episode(env, model, policy, Policy::Mode::Mean, rng);
        sum_return += ep.true_rewards.cast<double>().sum();
        if (has_success && ep.true_rewards(ep.steps() - 1) == 1.0f) ++successes;
    }
    EvalResult out;
    out.mean_return = sum_return / n_rollouts;
    out.success_rate =
        has_success ? static_cast<double>(successes) / n_rollouts : kNan;
    return out;
}

// ---------------------------------------------------------------------------
// The online imitation loop

namespace {

/// Stacks per-step batched states into one large batch of start states.
LatentState concat_states(const std::vector<LatentState>& states) {
    LatentState out;
    if (states.empty()) return out;
    Eigen::Index rows = 0;
    for (const auto& s : states) rows += s.h.rows();
    out.h.resize(rows, states[0].h.cols());
    out.s_mean.resize(rows, states[0].s_mean.cols());
    out.s_std.resize(rows, states[0].s_std.cols());
    out.s_sample.resize(rows, states[0].s_sample.cols());
    Eigen::Index at = 0;
    for (const auto& s : states) {
        out.h.middleRows(at, s.h.rows()) = s.h;
        out.s_mean.middleRows(at, s.h.rows()) = s.s_mean;
        out.s_std.middleRows(at, s.h.rows()) = s.s_std;
        out.s_sample.middleRows(at, s.h.rows()) = s.s_sample;
        at += s.h.rows();
    }
    return out;
}

/// Observation rows 1..T of an episode, in compute precision.
Mat label_rows(const Episode& ep) {
    return ep.observations.bottomRows(ep.steps()).cast<double>();
}

/// Pooled encoder features of all demo transitions (positives for the
/// adversarial reward).
Mat demo_features(const EpisodeStore& demos, const WorldModel& model) {
    std::vector<Mat> parts;
    Eigen::Index rows = 0;
    for (std::size_t i = 0; i < demos.size(); ++i) {
        parts.push_back(model.encode(label_rows(demos.episode(i))));
        rows += parts.back().rows();
    }
    Mat out(rows, parts[0].cols());
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        out.middleRows(at, p.rows()) = p;
        at += p.rows();
    }
    return out;
}

Mat sample_rows(const Mat& pool, int n, nn::Rng& rng) {
    Mat out(n, pool.cols());
    for (int i = 0; i < n; ++i)
        out.row(i) = pool.row(static_cast<Eigen::Index>(
            rng.below(static_cast<std::uint64_t>(pool.rows()))));
    return out;
}

/// Mean squared action error against the demos' held-out actions, or NaN
/// when the demo store carries no actions to compare against.
double probe_action_mse(const WorldModel& model, const Policy& policy,
                        const EpisodeStore& demos, nn::Rng& rng) {
    if (demos.size() == 0) return kNan;
    bool have = true;
    for (std::size_t i = 0; i < demos.size(); ++i)
        if (!(demos.episode(i).has_actions() || demos.has_oracle_actions(i)))
            have = false;
    if (!have) return kNan;
    return barrier::action_mse(model, policy, demos, rng);
}

std::map<std::string, Mat> prefixed(const std::map<std::string, Mat>& m,
                                    const std::string& prefix) {
    std::map<std::string, Mat> out;
    for (const auto& [k, v] : m) out[prefix + k] = v;
    return out;
}

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i)
        out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

void write_checkpoint(const std::string& dir, const env::EnvSpec& spec,
                      const WorldModel& model, const Policy& policy,
                      const ValueFunction& value, const RunConfig& cfg,
                      long env_steps, long grad_steps, bool aborted) {
    if (dir.empty()) return;
    std::map<std::string, Mat> tensors = prefixed(model.state(), "model/");
    auto pol = prefixed(policy.state(), "policy/");
    tensors.insert(pol.begin(), pol.end());
    auto val = prefixed(value.state(), "value/");
    tensors.insert(val.begin(), val.end());
    std::map<std::string, std::string> manifest;
    manifest["surrogate"] = cfg.surrogate;
    manifest["seed"] = std::to_string(cfg.seed);
    manifest["env_steps"] = std::to_string(env_steps);
    manifest["grad_steps"] = std::to_string(grad_steps);
    manifest["aborted_nan"] = aborted ? "1" : "0";
    // Everything needed to rebuild the nets and environment for evaluation.
    const auto& mc = model.config();
    manifest["env"] = spec.name;
    manifest["model_embed"] = std::to_string(mc.embed_dim);
    manifest["model_det"] = std::to_string(mc.det_size);
    manifest["model_stoch"] = std::to_string(mc.stoch_size);
    manifest["model_hidden"] = std::to_string(mc.hidden);
    {
        std::ostringstream ms;
        ms.precision(17);
        ms << mc.min_std;
        manifest["model_min_std"] = ms.str();
    }
    manifest["policy_hidden"] = join_ints(policy.config().hidden);
    {
        std::ostringstream ps;
        ps.precision(17);
        ps << policy.config().min_std;
        manifest["policy_min_std"] = ps.str();
    }
    io::save_checkpoint(dir, tensors, manifest);
}

}  // namespace

RunMetrics run_aime_nob(const RunConfig& cfg, WorldModel& model,
                        Policy& policy, ValueFunction& value,
                        const EpisodeStore& body, const EpisodeStore& demos,
                        env::Env& env, const std::string& checkpoint_dir) {
    cfg.validate();
    require(demos.size() > 0, "run: demo store is empty");
    require(cfg.alpha == 0.0 || body.size() > 0,
            "run: body store is empty but alpha > 0");

    // Independent named streams per consumer: evaluation cadence can never
    // perturb training randomness and vice versa.
    Rng root(cfg.seed);
    Rng rng_pretrain = Rng::stream(root.bits(), "pretrain");
    Rng rng_backend = Rng::stream(root.bits(), "backend");
    Rng rng_collect = Rng::stream(root.bits(), "collect");
    Rng rng_label = Rng::stream(root.bits(), "label");
    Rng rng_grad = Rng::stream(root.bits(), "grad");
    Rng rng_eval = Rng::stream(root.bits(), "eval");

    nn::AdamConfig ac;
    ac.lr = cfg.model_lr;
    Adam opt_model(ac);
    ac.lr = cfg.policy_lr;
    Adam opt_policy(ac);
    ac.lr = cfg.value_lr;
    Adam opt_value(ac);

    // Surrogate reward backend.
    std::unique_ptr<rewards::Discriminator> disc;
    std::unique_ptr<Adam> opt_disc;
    Mat disc_pos;
    rewards::ScaleState ot_scale;
    std::unique_ptr<rewards::ViperModel> viper;
    if (cfg.surrogate == "ail") {
        rewards::DiscriminatorConfig dc;
        dc.feat_dim = model.config().embed_dim;
        dc.hidden = {cfg.disc_hidden, cfg.disc_hidden};
        disc = std::make_unique<rewards::Discriminator>(dc, rng_backend);
        nn::AdamConfig dac;
        dac.lr = cfg.policy_lr;
        opt_disc = std::make_unique<Adam>(dac);
        disc_pos = demo_features(demos, model);
    } else if (cfg.surrogate == "viper") {
        auto vc = model.config();
        vc.act_dim = 0;
        viper = std::make_unique<rewards::ViperModel>(rewards::train_viper(
            demos, static_cast<int>(cfg.viper_budget), vc, rng_backend));
    }

    pretrain_policy(model, demos, cfg.pretrain_iters, policy, opt_policy,
                    rng_pretrain, cfg.batch, cfg.seq);

    RunMetrics out;

    // Record 0 is the pure-offline baseline: the pretrained policy before
    // any environment interaction.
    {
        EpisodeRecord rec;
        rec.episode = 0;
        auto ev = evaluate_policy(env, model, policy, cfg.eval_rollouts, rng_eval);
        rec.eval_return = ev.mean_return;
        rec.eval_success = ev.success_rate;
        rec.action_mse = probe_action_mse(model, policy, demos, rng_eval);
        out.records.push_back(rec);
        out.final_eval_return = ev.mean_return;
        out.final_eval_success = ev.success_rate;
    }

    EpisodeStore online("online", false);
    long env_steps = 0;
    long grad_done = 0;
    int episode = 0;

    policy::PolicyUpdateConfig pc;
    pc.beta = cfg.beta;
    pc.entropy_w = cfg.entropy_weight;
    pc.aime_weight = 1.0;
    pc.horizon = cfg.imagine_horizon;
    pc.gamma = cfg.gamma;
    pc.lambda = cfg.td_lambda;

    while (env_steps < cfg.env_step_budget && !out.aborted_nan) {
        ++episode;
        EpisodeRecord rec;
        rec.episode = episode;

        Episode ep =
            collect_episode(env, model, policy, Policy::Mode::Sample, rng_collect);
        const int T = ep.steps();
        env_steps += T;

        // Update the reward backend on the fresh episode, then label it.
        Vec srew;
        if (cfg.surrogate == "ail") {
            Mat neg = model.encode(label_rows(ep));
            const int m = static_cast<int>(
                std::min<Eigen::Index>(kDiscBatch,
                                       std::min(neg.rows(), disc_pos.rows())));
            for (int k = 0; k < cfg.disc_steps; ++k)
                disc->train_step(sample_rows(neg, m, rng_label),
                                 sample_rows(disc_pos, m, rng_label), *opt_disc,
                                 rng_label);
            srew = rewards::ail_rewards(label_rows(ep), model, *disc);
        } else if (cfg.surrogate == "ot") {
            srew = rewards::ot_rewards(ep, demos, model, ot_scale);
        } else {
            srew = rewards::viper_rewards(ep.observations.cast<double>(), *viper,
                                          rng_label);
        }
        ep.surrogate_rewards = srew.cast<float>();
        rec.surrogate_mean = srew.mean();
        rec.surrogate_min = srew.minCoeff();
        rec.surrogate_max = srew.maxCoeff();
        online.append(std::move(ep));

        // Exact gradient-step accounting: total steps so far must equal
        // floor(update_ratio * env_steps).
        const long target =
            static_cast<long>(std::floor(cfg.update_ratio * env_steps));
        for (; grad_done < target && !out.aborted_nan; ++grad_done) {
            const int nb = data::body_share(cfg.alpha, cfg.batch);
            const int no = cfg.batch - nb;
            SubsequenceBatch bb, ob;
            if (nb > 0) bb = data::sample_batch(body, nb, cfg.seq, rng_grad);
            if (no > 0) ob = data::sample_batch(online, no, cfg.seq, rng_grad, 0);

            auto mrep = model.train_model_step(bb, ob, cfg.alpha, opt_model,
                                               rng_grad);
            if (!std::isfinite(mrep.grad_norm)) {
                out.aborted_nan = true;
                break;
            }
            if (mrep.has_body) rec.model_elbo_body = mrep.body.total;
            if (mrep.has_online) rec.model_elbo_online = mrep.online.total;

            LatentState starts;
            if (cfg.beta > 0.0) {
                if (!mrep.online_posterior.empty())
                    starts = concat_states(mrep.online_posterior);
                else
                    starts = concat_states(model.filter_sequence(bb, rng_grad));
            }
            auto dq = data::sample_obs_batch(demos, cfg.batch, cfg.seq, rng_grad);
            auto prep =
                policy_update(dq, starts, model, policy, value, pc, opt_policy,
                              rng_grad);
            if (!std::isfinite(prep.objective) || !std::isfinite(prep.grad_norm)) {
                out.aborted_nan = true;
                break;
            }
            rec.policy_objective = prep.objective;

            if (cfg.beta > 0.0) {
                double vloss =
                    value.value_update(prep.value_feats, prep.value_targets,
                                       opt_value);
                value.polyak(cfg.polyak);
                if (!std::isfinite(vloss)) {
                    out.aborted_nan = true;
                    break;
                }
                rec.value_loss = vloss;
            }
        }

        rec.env_steps = env_steps;
        rec.grad_steps = grad_done;
        const bool last_episode = env_steps >= cfg.env_step_budget;
        if (!out.aborted_nan &&
            (episode % cfg.eval_every == 0 || last_episode)) {
            auto ev =
                evaluate_policy(env, model, policy, cfg.eval_rollouts, rng_eval);
            rec.eval_return = ev.mean_return;
            rec.eval_success = ev.success_rate;
            rec.action_mse = probe_action_mse(model, policy, demos, rng_eval);
            out.final_eval_return = ev.mean_return;
            out.final_eval_success = ev.success_rate;
        }
        out.records.push_back(rec);
    }

    out.total_env_steps = env_steps;
    out.total_grad_steps = grad_done;
    write_checkpoint(checkpoint_dir, env.spec(), model, policy, value, cfg,
                     env_steps, grad_done, out.aborted_nan);
    return out;
}

}  // namespace aime::driver
