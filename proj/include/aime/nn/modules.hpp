#pragma once

#include "aime/nn/rng.hpp"
#include "aime/nn/tape.hpp"

#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace aime::nn {

struct Param {
    std::string name;
    Mat value;
    // Adam state, lazily sized on the first optimiser step.
    Mat m, v;
};

/// Owns the parameters of one trainable component. Pointers returned by
/// add() stay valid for the lifetime of the set.
class ParamSet {
public:
    Param* add(std::string name, Mat init);
    const std::vector<std::unique_ptr<Param>>& all() const { return params_; }
    std::vector<std::unique_ptr<Param>>& all() { return params_; }

    std::size_t count_scalars() const;

    /// name -> value, sorted by name (serialization order).
    std::map<std::string, Mat> state() const;
    /// Loads values by name; throws on missing names or shape mismatch.
    void load_state(const std::map<std::string, Mat>& state);

    void copy_values_from(const ParamSet& other);

private:
    std::vector<std::unique_ptr<Param>> params_;
};

/// Per-tape binding of parameters to graph variables. When frozen, params
/// enter the graph as constants and receive no gradient.
class Graph {
public:
    Graph(Tape& tape, bool train) : tape_(tape), train_(train) {}

    Tape& tape() { return tape_; }

    Var operator()(Param& p) {
        auto it = cache_.find(&p);
        if (it != cache_.end()) return it->second;
        Var v = train_ ? tape_.leaf(p.value) : tape_.constant(p.value);
        cache_.emplace(&p, v);
        return v;
    }

    /// Gradient accumulated for p on this tape (zeros if unused/frozen).
    Mat grad_of(const Param& p) const;

private:
    Tape& tape_;
    bool train_;
    std::unordered_map<const Param*, Var> cache_;
};

enum class Act { None, Tanh, Elu };

Var activate(Tape& t, Var x, Act a);

struct Linear {
    Param* W = nullptr;
    Param* b = nullptr;

    Linear() = default;
    Linear(ParamSet& ps, const std::string& name, int in, int out, Rng& rng);
    Var apply(Graph& g, Var x) const;
};

/// Multilayer perceptron: hidden layers with the given activation, linear
/// output head.
struct Mlp {
    std::vector<Linear> layers;
    Act act = Act::Elu;

    Mlp() = default;
    Mlp(ParamSet& ps, const std::string& name, int in,
        const std::vector<int>& hidden, int out, Rng& rng, Act act = Act::Elu);
    Var apply(Graph& g, Var x) const;
};

struct GruCell {
    Param* Wx = nullptr;  // [in, 3H]
    Param* Wh = nullptr;  // [H, 3H]
    Param* b = nullptr;   // [1, 3H]
    int hidden = 0;

    GruCell() = default;
    GruCell(ParamSet& ps, const std::string& name, int in, int hidden, Rng& rng);
    Var apply(Graph& g, Var x, Var h) const;
};

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip = 100.0;
};

/// Adam with global-norm gradient clipping. One instance per ParamSet.
class Adam {
public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

    /// Applies one update from gradients recorded on g's tape.
    /// Returns the pre-clip global gradient norm; if any gradient is
    /// non-finite the update is skipped and NaN is returned.
    double step(ParamSet& ps, const Graph& g);

    long steps_taken() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    long t_ = 0;
};

}  // namespace aime::nn
