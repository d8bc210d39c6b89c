#include "aime/rewards/surrogate.hpp"

#include <cmath>
#include <stdexcept>

namespace aime::rewards {

Discriminator::Discriminator(const DiscriminatorConfig& cfg, Rng& init_rng)
    : cfg_(cfg) {
    if (cfg.feat_dim <= 0)
        throw std::invalid_argument("discriminator: feature dim must be positive");
    if (cfg.gp_weight < 0.0)
        throw std::invalid_argument("discriminator: penalty weight must be >= 0");
    int prev = cfg.feat_dim;
    for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
        layers_.emplace_back(params_, "disc." + std::to_string(i), prev,
                             cfg.hidden[i], init_rng);
        prev = cfg.hidden[i];
    }
    layers_.emplace_back(params_, "disc." + std::to_string(cfg.hidden.size()),
                         prev, 1, init_rng);
}

Var Discriminator::logits_graph(Graph& g, Var feats) const {
    Tape& t = g.tape();
    Var x = feats;
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i)
        x = t.tanh_(layers_[i].apply(g, x));
    return layers_.back().apply(g, x);
}

Var Discriminator::input_gradient_graph(Graph& g, Var feats) const {
    Tape& t = g.tape();
    // Forward pass, keeping the tanh activations for the chain rule.
    std::vector<Var> acts;
    Var x = feats;
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
        x = t.tanh_(layers_[i].apply(g, x));
        acts.push_back(x);
    }
    // d logit / d (input of the output layer) is the output weight row,
    // identical for every batch row.
    const int N = static_cast<int>(t.val(feats).rows());
    Var d = t.matmul(t.constant(Mat::Ones(N, 1)),
                     t.transpose(g(*layers_.back().W)));
    for (int i = static_cast<int>(layers_.size()) - 2; i >= 0; --i) {
        // Through tanh: multiply by 1 - a^2.
        d = t.cmul(d, t.add_const(t.neg(t.square_(acts[i])), 1.0));
        d = t.matmul(d, t.transpose(g(*layers_[i].W)));
    }
    return d;
}

Vec Discriminator::logits(const Mat& feats) const {
    Tape t;
    Graph g(t, false);
    return t.val(logits_graph(g, t.constant(feats))).col(0);
}

Var discriminator_loss_graph(Graph& g, const Discriminator& disc,
                             const Mat& neg_feats, const Mat& pos_feats,
                             const Mat& interp_feats, double gp_weight) {
    if (neg_feats.rows() == 0 || pos_feats.rows() == 0 ||
        interp_feats.rows() == 0)
        throw std::invalid_argument("discriminator loss: empty batch");
    const int F = disc.config().feat_dim;
    if (neg_feats.cols() != F || pos_feats.cols() != F ||
        interp_feats.cols() != F)
        throw std::invalid_argument("discriminator loss: feature-dim mismatch");
    Tape& t = g.tape();
    Var base = t.sub(t.mean_all(disc.logits_graph(g, t.constant(neg_feats))),
                     t.mean_all(disc.logits_graph(g, t.constant(pos_feats))));
    Var grad_rows = disc.input_gradient_graph(g, t.constant(interp_feats));
    Var penalty = t.mean_all(t.sum_rows(t.square_(grad_rows)));
    return t.add(base, t.scale(penalty, gp_weight));
}

double Discriminator::train_step(const Mat& neg_feats, const Mat& pos_feats,
                                 Adam& opt, Rng& rng) {
    if (neg_feats.rows() == 0 || pos_feats.rows() == 0)
        throw std::invalid_argument("discriminator step: empty batch");
    const Eigen::Index m = std::min(neg_feats.rows(), pos_feats.rows());
    Mat interp(m, cfg_.feat_dim);
    for (Eigen::Index r = 0; r < m; ++r) {
        double u = rng.uniform();
        interp.row(r) = u * neg_feats.row(r) + (1.0 - u) * pos_feats.row(r);
    }
    Tape t;
    Graph g(t, true);
    Var loss = discriminator_loss_graph(g, *this, neg_feats, pos_feats, interp,
                                        cfg_.gp_weight);
    double loss_value = t.val(loss)(0, 0);
    t.backward(loss);
    opt.step(params_, g);
    return loss_value;
}

Vec ail_rewards(const Mat& obs, const WorldModel& model,
                const Discriminator& disc) {
    Vec logit = disc.logits(model.encode(obs));
    Vec out(logit.size());
    for (Eigen::Index i = 0; i < logit.size(); ++i) {
        double d = 1.0 / (1.0 + std::exp(-logit(i)));
        d = std::min(1.0 - 1e-6, std::max(1e-6, d));
        out(i) = std::log(d) - std::log(1.0 - d);
    }
    return out;
}

}  // namespace aime::rewards
