#include "aime/nn/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace aime::nn {

namespace {
constexpr double kLn2Pi = 1.8378770664093454836;

Mat stable_softplus(const Mat& x) {
    // log(1+e^x) = max(x,0) + log1p(e^{-|x|})
    return (x.array().max(0.0) + (-x.array().abs()).exp().log1p()).matrix();
}
}  // namespace

Var Tape::push(Mat value, bool requires_grad, std::function<void(Tape&)> fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Mat value) { return push(std::move(value), false, {}); }

Var Tape::leaf(Mat value) { return push(std::move(value), true, {}); }

Mat Tape::grad_of(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

Mat& Tape::grad(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

void Tape::accum(Var v, const Mat& g) {
    if (!nodes_[v.id].requires_grad) return;
    grad(v) += g;
}

namespace {
void require_same_shape(const Mat& a, const Mat& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}
}  // namespace

void Tape::backward(Var root) {
    if (val(root).rows() != 1 || val(root).cols() != 1)
        throw std::invalid_argument("backward root must be a 1x1 scalar");
    grad(root)(0, 0) += 1.0;
    for (int i = root.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
        n.backward(*this);
    }
}

void Tape::clear() { nodes_.clear(); }

Var Tape::matmul(Var a, Var b) {
    if (val(a).cols() != val(b).rows())
        throw std::invalid_argument("matmul: inner dimension mismatch");
    Mat v = val(a) * val(b);
    bool rg = requires_grad(a) || requires_grad(b);
    if (!rg) return constant(std::move(v));
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true, [a, b, out](Tape& t) {
        const Mat& g = t.nodes_[out.id].grad;
        if (t.requires_grad(a)) t.grad(a).noalias() += g * t.val(b).transpose();
        if (t.requires_grad(b)) t.grad(b).noalias() += t.val(a).transpose() * g;
    });
}

Var Tape::add(Var a, Var b) {
    require_same_shape(val(a), val(b), "add");
    Mat v = val(a) + val(b);
    bool rg = requires_grad(a) || requires_grad(b);
    if (!rg) return constant(std::move(v));
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true, [a, b, out](Tape& t) {
        const Mat& g = t.nodes_[out.id].grad;
        t.accum(a, g);
        t.accum(b, g);
    });
}

Var Tape::sub(Var a, Var b) {
    require_same_shape(val(a), val(b), "sub");
    Mat v = val(a) - val(b);
    bool rg = requires_grad(a) || requires_grad(b);
    if (!rg) return constant(std::move(v));
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true, [a, b, out](Tape& t) {
        const Mat& g = t.nodes_[out.id].grad;
        t.accum(a, g);
        t.accum(b, -g);
    });
}

Var Tape::cmul(Var a, Var b) {
    require_same_shape(val(a), val(b), "cmul");
    Mat v = val(a).cwiseProduct(val(b));
    bool rg = requires_grad(a) || requires_grad(b);
    if (!rg) return constant(std::move(v));
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true, [a, b, out](Tape& t) {
        const Mat& g = t.nodes_[out.id].grad;
        if (t.requires_grad(a)) t.grad(a) += g.cwiseProduct(t.val(b));
        if (t.requires_grad(b)) t.grad(b) += g.cwiseProduct(t.val(a));
    });
}

Var Tape::cdiv(Var a, Var b) {
    require_same_shape(val(a), val(b), "cdiv");
    Mat v = val(a).cwiseQuotient(val(b));
    bool rg = requires_grad(a) || requires_grad(b);
    if (!rg) return constant(std::move(v));
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true, [a, b, out](Tape& t) {
        const Mat& g = t.nodes_[out.id].grad;
        const Mat& bv = t.val(b);
        if (t.requires_grad(a)) t.grad(a) += g.cwiseQuotient(bv);
        if (t.requires_grad(b))
            t.grad(b) -= g.cwiseProduct(t.nodes_[out.id].value).cwiseQuotient(bv);
    });
}

Var Tape::add_rowvec(Var a, Var b) {
    if (val(b).rows() != 1 || val(b).cols() != val(a).cols())
        throw std::invalid_argument("add_rowvec: bias must be [1, cols(a)]");
    Mat v = val(a).rowwise() + val(b).row(0);
    bool rg = requires_grad(a) || requires_grad(b);
    if (!rg) return constant(std::move(v));
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true, [a, b, out](Tape& t) {
        const Mat& g = t.nodes_[out.id].grad;
        t.accum(a, g);
        if (t.requires_grad(b)) t.grad(b) += g.colwise().sum();
    });
}

Var Tape::scale(Var a, double s) {
    Mat v = val(a) * s;
    if (!requires_grad(a)) return constant(std::move(v));
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true,
                [a, s, out](Tape& t) { t.grad(a) += t.nodes_[out.id].grad * s; });
}

Var Tape::add_const(Var a, double c) {
    Mat v = val(a).array() + c;
    if (!requires_grad(a)) return constant(std::move(v));
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true,
                [a, out](Tape& t) { t.grad(a) += t.nodes_[out.id].grad; });
}

Var Tape::tanh_(Var a) {
    Mat v = val(a).array().tanh();
    if (!requires_grad(a)) return constant(std::move(v));
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true, [a, out](Tape& t) {
        const Mat& y = t.nodes_[out.id].value;
        t.grad(a).array() += t.nodes_[out.id].grad.array() * (1.0 - y.array().square());
    });
}

Var Tape::sigmoid_(Var a) {
    Mat v = (1.0 / (1.0 + (-val(a).array()).exp())).matrix();
    if (!requires_grad(a)) return constant(std::move(v));
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true, [a, out](Tape& t) {
        const Mat& y = t.nodes_[out.id].value;
        t.grad(a).array() += t.nodes_[out.id].grad.array() * y.array() * (1.0 - y.array());
    });
}

Var Tape::elu_(Var a) {
    Mat v = val(a).unaryExpr([](double x) { return x > 0 ? x : std::expm1(x); });
    if (!requires_grad(a)) return constant(std::move(v));
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true, [a, out](Tape& t) {
        const Mat& x = t.val(a);
        const Mat& y = t.nodes_[out.id].value;
        Mat d = (x.array() > 0).select(Mat::Ones(x.rows(), x.cols()), y.array() + 1.0);
        t.grad(a).array() += t.nodes_[out.id].grad.array() * d.array();
    });
}

Var Tape::softplus_(Var a) {
    Mat v = stable_softplus(val(a));
    if (!requires_grad(a)) return constant(std::move(v));
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true, [a, out](Tape& t) {
        const Mat& x = t.val(a);
        Mat s = 1.0 / (1.0 + (-x.array()).exp());
        t.grad(a).array() += t.nodes_[out.id].grad.array() * s.array();
    });
}

Var Tape::exp_(Var a) {
    Mat v = val(a).array().exp();
    if (!requires_grad(a)) return constant(std::move(v));
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true, [a, out](Tape& t) {
        t.grad(a).array() +=
            t.nodes_[out.id].grad.array() * t.nodes_[out.id].value.array();
    });
}

Var Tape::log_(Var a) {
    Mat v = val(a).array().log();
    if (!requires_grad(a)) return constant(std::move(v));
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true, [a, out](Tape& t) {
        t.grad(a).array() += t.nodes_[out.id].grad.array() / t.val(a).array();
    });
}

Var Tape::square_(Var a) {
    Mat v = val(a).array().square();
    if (!requires_grad(a)) return constant(std::move(v));
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true, [a, out](Tape& t) {
        t.grad(a).array() += 2.0 * t.nodes_[out.id].grad.array() * t.val(a).array();
    });
}

Var Tape::max_const(Var a, double c) {
    Mat v = val(a).array().max(c);
    if (!requires_grad(a)) return constant(std::move(v));
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true, [a, c, out](Tape& t) {
        const Mat& x = t.val(a);
        Mat mask = (x.array() > c).cast<double>();
        t.grad(a).array() += t.nodes_[out.id].grad.array() * mask.array();
    });
}

Var Tape::clamp_(Var a, double lo, double hi) {
    Mat v = val(a).array().max(lo).min(hi);
    if (!requires_grad(a)) return constant(std::move(v));
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true, [a, lo, hi, out](Tape& t) {
        const Mat& x = t.val(a);
        Mat mask = ((x.array() > lo) && (x.array() < hi)).cast<double>();
        t.grad(a).array() += t.nodes_[out.id].grad.array() * mask.array();
    });
}

Var Tape::sum_all(Var a) {
    Mat v(1, 1);
    v(0, 0) = val(a).sum();
    if (!requires_grad(a)) return constant(std::move(v));
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true, [a, out](Tape& t) {
        t.grad(a).array() += t.nodes_[out.id].grad(0, 0);
    });
}

Var Tape::mean_all(Var a) {
    double n = static_cast<double>(val(a).size());
    Mat v(1, 1);
    v(0, 0) = val(a).sum() / n;
    if (!requires_grad(a)) return constant(std::move(v));
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true, [a, n, out](Tape& t) {
        t.grad(a).array() += t.nodes_[out.id].grad(0, 0) / n;
    });
}

Var Tape::sum_rows(Var a) {
    Mat v = val(a).rowwise().sum();
    if (!requires_grad(a)) return constant(std::move(v));
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true, [a, out](Tape& t) {
        const Mat& g = t.nodes_[out.id].grad;
        t.grad(a) += g * Mat::Ones(1, t.val(a).cols());
    });
}

Var Tape::concat_cols(Var a, Var b) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    if (av.rows() != bv.rows()) throw std::invalid_argument("concat_cols: row mismatch");
    Mat v(av.rows(), av.cols() + bv.cols());
    v << av, bv;
    bool rg = requires_grad(a) || requires_grad(b);
    if (!rg) return constant(std::move(v));
    int ca = static_cast<int>(av.cols());
    int cb = static_cast<int>(bv.cols());
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true, [a, b, ca, cb, out](Tape& t) {
        const Mat& g = t.nodes_[out.id].grad;
        if (t.requires_grad(a)) t.grad(a) += g.leftCols(ca);
        if (t.requires_grad(b)) t.grad(b) += g.rightCols(cb);
    });
}

Var Tape::slice_cols(Var a, int start, int n) {
    Mat v = val(a).middleCols(start, n);
    if (!requires_grad(a)) return constant(std::move(v));
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true, [a, start, n, out](Tape& t) {
        t.grad(a).middleCols(start, n) += t.nodes_[out.id].grad;
    });
}

Var Tape::slice_rows(Var a, int start, int n) {
    Mat v = val(a).middleRows(start, n);
    if (!requires_grad(a)) return constant(std::move(v));
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true, [a, start, n, out](Tape& t) {
        t.grad(a).middleRows(start, n) += t.nodes_[out.id].grad;
    });
}

Var Tape::vstack(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("vstack: empty");
    int rows = 0;
    int cols = static_cast<int>(val(parts[0]).cols());
    bool rg = false;
    for (Var p : parts) {
        rows += static_cast<int>(val(p).rows());
        rg = rg || requires_grad(p);
    }
    Mat v(rows, cols);
    int r = 0;
    for (Var p : parts) {
        int n = static_cast<int>(val(p).rows());
        v.middleRows(r, n) = val(p);
        r += n;
    }
    if (!rg) return constant(std::move(v));
    std::vector<Var> ps = parts;
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true, [ps, out](Tape& t) {
        const Mat& g = t.nodes_[out.id].grad;
        int r = 0;
        for (Var p : ps) {
            int n = static_cast<int>(t.val(p).rows());
            if (t.requires_grad(p)) t.grad(p) += g.middleRows(r, n);
            r += n;
        }
    });
}

Var Tape::transpose(Var a) {
    Mat v = val(a).transpose();
    if (!requires_grad(a)) return constant(std::move(v));
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true, [a, out](Tape& t) {
        t.grad(a) += t.nodes_[out.id].grad.transpose();
    });
}

Var Tape::stopgrad(Var a) { return constant(val(a)); }

Var Tape::gauss_logprob(Var mean, Var std, const Mat& target) {
    const Mat& mu = val(mean);
    const Mat& sd = val(std);
    Mat z = (target - mu).cwiseQuotient(sd);
    Mat v = (-0.5 * z.array().square() - sd.array().log() - 0.5 * kLn2Pi)
                .matrix()
                .rowwise()
                .sum();
    bool rg = requires_grad(mean) || requires_grad(std);
    if (!rg) return constant(std::move(v));
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true, [mean, std, target, out](Tape& t) {
        const Mat& g = t.nodes_[out.id].grad;  // [N,1]
        const Mat& mu = t.val(mean);
        const Mat& sd = t.val(std);
        Mat diff = target - mu;
        if (t.requires_grad(mean)) {
            Mat d = diff.cwiseQuotient(sd.cwiseProduct(sd));
            t.grad(mean).array() += d.array().colwise() * g.col(0).array();
        }
        if (t.requires_grad(std)) {
            Mat d = diff.array().square() / sd.array().cube() - 1.0 / sd.array();
            t.grad(std).array() += d.array().colwise() * g.col(0).array();
        }
    });
}

Var Tape::gauss_logprob_unit(Var mean, const Mat& target) {
    const Mat& mu = val(mean);
    double c = 0.5 * kLn2Pi * static_cast<double>(mu.cols());
    Mat v = (-0.5 * (target - mu).array().square()).matrix().rowwise().sum();
    v.array() -= c;
    if (!requires_grad(mean)) return constant(std::move(v));
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true, [mean, target, out](Tape& t) {
        const Mat& g = t.nodes_[out.id].grad;
        Mat diff = target - t.val(mean);
        t.grad(mean).array() += diff.array().colwise() * g.col(0).array();
    });
}

Var Tape::gauss_kl(Var mq, Var sq, Var mp, Var sp) {
    const Mat& mqv = val(mq);
    const Mat& sqv = val(sq);
    const Mat& mpv = val(mp);
    const Mat& spv = val(sp);
    Mat d = mqv - mpv;
    Mat v = ((spv.array() / sqv.array()).log() +
             (sqv.array().square() + d.array().square()) /
                 (2.0 * spv.array().square()) -
             0.5)
                .matrix()
                .rowwise()
                .sum();
    bool rg = requires_grad(mq) || requires_grad(sq) || requires_grad(mp) ||
              requires_grad(sp);
    if (!rg) return constant(std::move(v));
    Var out{static_cast<int>(nodes_.size())};
    return push(std::move(v), true, [mq, sq, mp, sp, out](Tape& t) {
        const Mat& g = t.nodes_[out.id].grad;  // [N,1]
        const Mat& mqv = t.val(mq);
        const Mat& sqv = t.val(sq);
        const Mat& mpv = t.val(mp);
        const Mat& spv = t.val(sp);
        Mat diff = mqv - mpv;
        Mat sp2 = spv.array().square();
        if (t.requires_grad(mq)) {
            Mat d = diff.cwiseQuotient(sp2);
            t.grad(mq).array() += d.array().colwise() * g.col(0).array();
        }
        if (t.requires_grad(mp)) {
            Mat d = -diff.cwiseQuotient(sp2);
            t.grad(mp).array() += d.array().colwise() * g.col(0).array();
        }
        if (t.requires_grad(sq)) {
            Mat d = sqv.cwiseQuotient(sp2).array() - 1.0 / sqv.array();
            t.grad(sq).array() += d.array().colwise() * g.col(0).array();
        }
        if (t.requires_grad(sp)) {
            Mat d = 1.0 / spv.array() -
                    (sqv.array().square() + diff.array().square()) / spv.array().cube();
            t.grad(sp).array() += d.array().colwise() * g.col(0).array();
        }
    });
}

}  // namespace aime::nn
