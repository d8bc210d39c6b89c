#pragma once

#include <Eigen/Dense>

#include <functional>
#include <vector>

namespace aime::nn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Handle into a Tape. Default-constructed handles are null.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Reverse-mode autodiff tape over dense matrices.
///
/// Values are computed eagerly as the graph is built; backward() replays the
/// recorded closures in reverse order. Rows are the batch dimension
/// throughout. A tape lives for one forward/backward pass and is cleared (or
/// destroyed) afterwards.
class Tape {
public:
    Var constant(Mat value);
    Var leaf(Mat value);

    const Mat& val(Var v) const { return nodes_[v.id].value; }
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

    /// Gradient of the last backward() root w.r.t. v. Zero matrix if v was
    /// never reached.
    Mat grad_of(Var v) const;

    /// Accumulation buffer for v, allocated (zeroed) on first access.
    Mat& grad(Var v);

    /// Seeds d(root)=1 and propagates. root must be 1x1.
    void backward(Var root);

    void clear();
    std::size_t size() const { return nodes_.size(); }

    // -- primitive ops ------------------------------------------------------
    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var cmul(Var a, Var b);
    Var cdiv(Var a, Var b);
    /// a [N,C] plus row vector b [1,C] broadcast over rows.
    Var add_rowvec(Var a, Var b);
    Var scale(Var a, double s);
    Var add_const(Var a, double c);
    Var neg(Var a) { return scale(a, -1.0); }

    Var tanh_(Var a);
    Var sigmoid_(Var a);
    Var elu_(Var a);
    Var softplus_(Var a);
    Var exp_(Var a);
    Var log_(Var a);
    Var square_(Var a);
    /// max(a, c) elementwise; gradient passes only where a > c.
    Var max_const(Var a, double c);
    Var clamp_(Var a, double lo, double hi);

    Var sum_all(Var a);
    Var mean_all(Var a);
    /// Row-wise sum: [N,C] -> [N,1].
    Var sum_rows(Var a);

    Var transpose(Var a);
    Var concat_cols(Var a, Var b);
    Var slice_cols(Var a, int start, int n);
    Var slice_rows(Var a, int start, int n);
    Var vstack(const std::vector<Var>& parts);

    /// Value copy that blocks gradient flow.
    Var stopgrad(Var a);

    // -- fused ops ----------------------------------------------------------
    /// Row-wise diagonal-Gaussian log density of a constant target under
    /// N(mean, std^2): [N,C] inputs -> [N,1].
    Var gauss_logprob(Var mean, Var std, const Mat& target);
    /// Unit-variance version (std = 1).
    Var gauss_logprob_unit(Var mean, const Mat& target);
    /// Row-wise KL( N(mq,sq) || N(mp,sp) ) for diagonal Gaussians -> [N,1].
    Var gauss_kl(Var mq, Var sq, Var mp, Var sp);

private:
    struct Node {
        Mat value;
        Mat grad;
        bool requires_grad = false;
        std::function<void(Tape&)> backward;
    };

    Var push(Mat value, bool requires_grad, std::function<void(Tape&)> fn);
    void accum(Var v, const Mat& g);

    std::vector<Node> nodes_;
};

}  // namespace aime::nn
