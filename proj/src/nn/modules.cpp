#include "aime/nn/modules.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace aime::nn {

Param* ParamSet::add(std::string name, Mat init) {
    for (const auto& p : params_)
        if (p->name == name) throw std::logic_error("duplicate parameter: " + name);
    auto p = std::make_unique<Param>();
    p->name = std::move(name);
    p->value = std::move(init);
    params_.push_back(std::move(p));
    return params_.back().get();
}

std::size_t ParamSet::count_scalars() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
}

std::map<std::string, Mat> ParamSet::state() const {
    std::map<std::string, Mat> s;
    for (const auto& p : params_) s[p->name] = p->value;
    return s;
}

void ParamSet::load_state(const std::map<std::string, Mat>& state) {
    for (auto& p : params_) {
        auto it = state.find(p->name);
        if (it == state.end())
            throw std::runtime_error("missing parameter in state: " + p->name);
        if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
            throw std::runtime_error("shape mismatch for parameter: " + p->name);
        p->value = it->second;
    }
}

void ParamSet::copy_values_from(const ParamSet& other) {
    if (other.params_.size() != params_.size())
        throw std::logic_error("copy_values_from: size mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i]->value.rows() != other.params_[i]->value.rows() ||
            params_[i]->value.cols() != other.params_[i]->value.cols())
            throw std::logic_error("copy_values_from: shape mismatch");
        params_[i]->value = other.params_[i]->value;
    }
}

Mat Graph::grad_of(const Param& p) const {
    auto it = cache_.find(&p);
    if (it == cache_.end() || !train_)
        return Mat::Zero(p.value.rows(), p.value.cols());
    return tape_.grad_of(it->second);
}

Var activate(Tape& t, Var x, Act a) {
    switch (a) {
        case Act::None: return x;
        case Act::Tanh: return t.tanh_(x);
        case Act::Elu: return t.elu_(x);
    }
    return x;
}

namespace {
Mat xavier(int in, int out, Rng& rng) {
    double a = std::sqrt(6.0 / static_cast<double>(in + out));
    return rng.uniform_mat(in, out, -a, a);
}
}  // namespace

Linear::Linear(ParamSet& ps, const std::string& name, int in, int out, Rng& rng) {
    W = ps.add(name + ".W", xavier(in, out, rng));
    b = ps.add(name + ".b", Mat::Zero(1, out));
}

Var Linear::apply(Graph& g, Var x) const {
    Tape& t = g.tape();
    return t.add_rowvec(t.matmul(x, g(*W)), g(*b));
}

Mlp::Mlp(ParamSet& ps, const std::string& name, int in,
         const std::vector<int>& hidden, int out, Rng& rng, Act act_)
    : act(act_) {
    int prev = in;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
        layers.emplace_back(ps, name + "." + std::to_string(i), prev, hidden[i], rng);
        prev = hidden[i];
    }
    layers.emplace_back(ps, name + "." + std::to_string(hidden.size()), prev, out, rng);
}

Var Mlp::apply(Graph& g, Var x) const {
    Tape& t = g.tape();
    for (std::size_t i = 0; i + 1 < layers.size(); ++i)
        x = activate(t, layers[i].apply(g, x), act);
    return layers.back().apply(g, x);
}

GruCell::GruCell(ParamSet& ps, const std::string& name, int in, int hidden_, Rng& rng)
    : hidden(hidden_) {
    Wx = ps.add(name + ".Wx", xavier(in, 3 * hidden, rng));
    Wh = ps.add(name + ".Wh", xavier(hidden, 3 * hidden, rng));
    b = ps.add(name + ".b", Mat::Zero(1, 3 * hidden));
}

Var GruCell::apply(Graph& g, Var x, Var h) const {
    Tape& t = g.tape();
    Var gx = t.add_rowvec(t.matmul(x, g(*Wx)), g(*b));
    Var gh = t.matmul(h, g(*Wh));
    int H = hidden;
    Var r = t.sigmoid_(t.add(t.slice_cols(gx, 0, H), t.slice_cols(gh, 0, H)));
    Var z = t.sigmoid_(t.add(t.slice_cols(gx, H, H), t.slice_cols(gh, H, H)));
    Var n = t.tanh_(t.add(t.slice_cols(gx, 2 * H, H),
                          t.cmul(r, t.slice_cols(gh, 2 * H, H))));
    // h' = z*h + (1-z)*n
    Var zh = t.cmul(z, h);
    Var n_part = t.sub(n, t.cmul(z, n));
    return t.add(zh, n_part);
}

double Adam::step(ParamSet& ps, const Graph& g) {
    std::vector<Mat> grads;
    grads.reserve(ps.all().size());
    double sq = 0.0;
    for (const auto& p : ps.all()) {
        grads.push_back(g.grad_of(*p));
        sq += grads.back().squaredNorm();
    }
    double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) return std::numeric_limits<double>::quiet_NaN();

    double scale = 1.0;
    if (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) scale = cfg_.grad_clip / norm;

    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < ps.all().size(); ++i) {
        Param& p = *ps.all()[i];
        Mat gmat = grads[i] * scale;
        if (p.m.size() == 0) {
            p.m = Mat::Zero(p.value.rows(), p.value.cols());
            p.v = Mat::Zero(p.value.rows(), p.value.cols());
        }
        p.m = cfg_.beta1 * p.m + (1.0 - cfg_.beta1) * gmat;
        p.v = cfg_.beta2 * p.v + (1.0 - cfg_.beta2) * gmat.array().square().matrix();
        Mat mhat = p.m / bc1;
        Mat vhat = p.v / bc2;
        p.value.array() -= cfg_.lr * mhat.array() / (vhat.array().sqrt() + cfg_.eps);
    }
    return norm;
}

}  // namespace aime::nn
