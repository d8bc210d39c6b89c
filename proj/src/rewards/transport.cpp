#include "aime/rewards/surrogate.hpp"

#include <cmath>
#include <stdexcept>

namespace aime::rewards {

namespace {

/// Row-wise log-sum-exp, stabilised by the row maximum.
Vec lse_rows(const Mat& x) {
    Vec mx = x.rowwise().maxCoeff();
    return mx.array() +
           (x.colwise() - mx).array().exp().rowwise().sum().log();
}

}  // namespace

Mat cosine_cost(const Mat& fa, const Mat& fb) {
    if (fa.rows() == 0 || fb.rows() == 0)
        throw std::invalid_argument("cosine cost: empty feature set");
    if (fa.cols() != fb.cols())
        throw std::invalid_argument("cosine cost: feature dims differ");
    Vec na = fa.rowwise().norm();
    Vec nb = fb.rowwise().norm();
    if (na.minCoeff() <= 0.0 || nb.minCoeff() <= 0.0)
        throw std::invalid_argument("cosine cost: zero-norm feature row");
    Mat sim = (fa * fb.transpose()).cwiseQuotient(na * nb.transpose());
    return (Mat::Ones(fa.rows(), fb.rows()) - sim)
        .cwiseMax(0.0)
        .cwiseMin(2.0);
}

TransportPlan solve_transport(const Mat& cost, double eps_reg, int max_iters) {
    const Eigen::Index T = cost.rows();
    const Eigen::Index Td = cost.cols();
    if (T == 0 || Td == 0)
        throw std::invalid_argument("transport: empty cost matrix");
    if (!cost.allFinite() || cost.minCoeff() < 0.0)
        throw std::invalid_argument("transport: cost must be finite and nonnegative");
    if (eps_reg <= 0.0)
        throw std::invalid_argument("transport: regularisation must be positive");
    if (max_iters < 1)
        throw std::invalid_argument("transport: need at least one iteration");

    const double log_a = -std::log(static_cast<double>(T));
    const double log_b = -std::log(static_cast<double>(Td));
    // Anneal the regulariser from the cost scale down to eps_reg with
    // warm-started dual potentials; a cold start at a small eps stalls.
    const double eps_hi = std::max(cost.mean(), eps_reg);
    const int rounds = eps_hi > eps_reg ? 8 : 1;
    const int per_round = std::max(1, max_iters / rounds);
    Vec f = Vec::Zero(T), gp = Vec::Zero(Td);
    for (int round = 0; round < rounds; ++round) {
        const double frac =
            rounds == 1 ? 1.0
                        : static_cast<double>(round) / (rounds - 1);
        const double eps = eps_hi * std::pow(eps_reg / eps_hi, frac);
        for (int it = 0; it < per_round; ++it) {
            // f_i = eps * (log a_i - lse_j((g_j - c_ij) / eps)); then the
            // symmetric column update.
            f = eps * (Vec::Constant(T, log_a) -
                       lse_rows(((-cost).rowwise() + gp.transpose()) / eps));
            gp = eps * (Vec::Constant(Td, log_b) -
                        lse_rows(((-cost).transpose().rowwise() +
                                  f.transpose()) /
                                 eps));
        }
    }
    Mat plan = (((((-cost).colwise() + f).rowwise() + gp.transpose()) / eps_reg)
                    .array()
                    .exp())
                   .matrix();

    const Vec a = Vec::Constant(T, 1.0 / static_cast<double>(T));
    const Vec b = Vec::Constant(Td, 1.0 / static_cast<double>(Td));
    double raw_err = (plan.rowwise().sum() - a).lpNorm<1>() +
                     (plan.colwise().sum().transpose() - b).lpNorm<1>();

    // Round to the transport polytope: shrink overfull rows/columns, then
    // spread the remaining deficit as a rank-one nonnegative correction.
    for (Eigen::Index i = 0; i < T; ++i) {
        double r = plan.row(i).sum();
        if (r > a(i)) plan.row(i) *= a(i) / r;
    }
    for (Eigen::Index j = 0; j < Td; ++j) {
        double c = plan.col(j).sum();
        if (c > b(j)) plan.col(j) *= b(j) / c;
    }
    Vec err_r = (a - plan.rowwise().sum()).cwiseMax(0.0);
    Vec err_c = (b - plan.colwise().sum().transpose()).cwiseMax(0.0);
    double deficit = err_r.lpNorm<1>();
    if (deficit > 0.0) plan += err_r * err_c.transpose() / deficit;
    plan = plan.cwiseMax(0.0);

    TransportPlan out;
    out.mu = plan;
    out.cost = cost;
    out.total_cost = plan.cwiseProduct(cost).sum();
    out.sinkhorn_marginal_err = raw_err;
    out.iters_used = max_iters;
    return out;
}

Vec ot_rewards(const Episode& traj, const EpisodeStore& demos,
               const WorldModel& model, ScaleState& scale) {
    if (demos.empty())
        throw std::invalid_argument("transport rewards: no demonstrations");
    const int T = traj.steps();
    if (T < 1)
        throw std::invalid_argument("transport rewards: empty trajectory");

    // Observation rows 1..T enter the plan so that reward t labels the
    // transition into observation t+1.
    Mat traj_obs = traj.observations.bottomRows(T).cast<double>();
    Mat traj_feats = model.encode(traj_obs);

    bool have_best = false;
    TransportPlan best;
    for (std::size_t d = 0; d < demos.size(); ++d) {
        const Episode& demo = demos.episode(d);
        Mat demo_obs =
            demo.observations.bottomRows(demo.steps()).cast<double>();
        Mat cost = cosine_cost(traj_feats, model.encode(demo_obs));
        // Sharp enough that a perfect match scores as free at the reward
        // tolerances; the solver anneals down to this, so it still converges.
        double eps = std::max(0.001 * cost.mean(), 1e-10);
        TransportPlan plan = solve_transport(cost, eps, 300);
        if (!have_best || plan.total_cost < best.total_cost) {
            best = std::move(plan);
            have_best = true;
        }
    }

    if (!scale.frozen())
        scale.lambda_scale = 4.0 / std::max(best.total_cost, 1e-8);

    Vec out(T);
    for (int t = 0; t < T; ++t)
        out(t) = -scale.lambda_scale *
                 best.mu.row(t).dot(best.cost.row(t));
    return out;
}

}  // namespace aime::rewards
