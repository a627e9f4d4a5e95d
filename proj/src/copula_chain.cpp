#include "fhmm/copula_chain.hpp"

#include <cmath>
#include <stdexcept>

#include "fhmm/prob_numerics.hpp"

namespace fhmm::copula {

using prob::kEpsRho;
using prob::kEpsTheta;

namespace {

void check_params(const CopulaPairParams& p) {
    if (!(p.theta_prev >= kEpsTheta && p.theta_prev <= 1.0 - kEpsTheta) ||
        !(p.theta_cur >= kEpsTheta && p.theta_cur <= 1.0 - kEpsTheta)) {
        throw std::domain_error("pair_pmf: theta outside clamp box");
    }
    if (!(p.rho >= -1.0 + kEpsRho && p.rho <= 1.0 - kEpsRho)) {
        throw std::domain_error("pair_pmf: rho outside clamp box");
    }
}

}  // namespace

PairPmf pair_pmf(const CopulaPairParams& p) {
    check_params(p);
    const double a = prob::std_normal_quantile(1.0 - p.theta_prev);
    const double b = prob::std_normal_quantile(1.0 - p.theta_cur);
    const double q00 = prob::bvn_cdf(a, b, p.rho);
    PairPmf out;
    out.q[0][0] = q00;
    out.q[0][1] = 1.0 - p.theta_prev - q00;
    out.q[1][0] = 1.0 - p.theta_cur - q00;
    out.q[1][1] = p.theta_cur + p.theta_prev + q00 - 1.0;
    double total = 0.0;
    for (auto& row : out.q) {
        for (double& c : row) {
            if (c < -1e-9) {
                throw std::logic_error("pair_pmf: cell below round-off floor");
            }
            if (c < 0.0) c = 0.0;
            total += c;
        }
    }
    // clamping only absorbs round-off; renormalize the residual
    for (auto& row : out.q)
        for (double& c : row) c /= total;
    return out;
}

PairPmfGrad pair_pmf_grad(const CopulaPairParams& p) {
    check_params(p);
    const double a = prob::std_normal_quantile(1.0 - p.theta_prev);
    const double b = prob::std_normal_quantile(1.0 - p.theta_cur);
    const auto g = prob::bvn_cdf_grad(a, b, p.rho);
    // d a / d theta_prev = -1 / pdf(a), likewise for b
    const double dq00_dtp = -g.da / prob::std_normal_pdf(a);
    const double dq00_dtc = -g.db / prob::std_normal_pdf(b);
    const double dq00_dr = g.drho;

    PairPmfGrad out;
    // q01 = 1 - tp - q00 ; q10 = 1 - tc - q00 ; q11 = tc + tp + q00 - 1
    out.d_theta_prev[0][0] = dq00_dtp;
    out.d_theta_prev[0][1] = -1.0 - dq00_dtp;
    out.d_theta_prev[1][0] = -dq00_dtp;
    out.d_theta_prev[1][1] = 1.0 + dq00_dtp;

    out.d_theta_cur[0][0] = dq00_dtc;
    out.d_theta_cur[0][1] = -dq00_dtc;
    out.d_theta_cur[1][0] = -1.0 - dq00_dtc;
    out.d_theta_cur[1][1] = 1.0 + dq00_dtc;

    out.d_rho[0][0] = dq00_dr;
    out.d_rho[0][1] = -dq00_dr;
    out.d_rho[1][0] = -dq00_dr;
    out.d_rho[1][1] = dq00_dr;
    return out;
}

double chain_log_pmf(const ChainVariationalParams& chain,
                     const std::vector<int>& path) {
    const int n = chain.length();
    if (static_cast<int>(path.size()) != n) {
        throw std::invalid_argument("chain_log_pmf: path length mismatch");
    }
    if (static_cast<int>(chain.rho.size()) != n - 1) {
        throw std::invalid_argument("chain_log_pmf: rho length mismatch");
    }
    double lp = 0.0;
    for (int k = 0; k + 1 < n; ++k) {
        const PairPmf pmf = pair_pmf(chain.pair(k));
        const double cell = pmf.q[path[k]][path[k + 1]];
        if (cell < 1e-300) return -std::numeric_limits<double>::infinity();
        lp += std::log(cell);
    }
    for (int k = 1; k + 1 < n; ++k) {
        const double marg = path[k] ? chain.theta[k] : 1.0 - chain.theta[k];
        if (marg < 1e-300) return -std::numeric_limits<double>::infinity();
        lp -= std::log(marg);
    }
    return lp;
}

PosteriorMarginals posterior_marginals_from_chain(const ChainVariationalParams& chain) {
    PosteriorMarginals out;
    out.theta = chain.theta;
    out.pairs.reserve(chain.rho.size());
    for (int k = 0; k + 1 < chain.length(); ++k) {
        out.pairs.push_back(pair_pmf(chain.pair(k)));
    }
    return out;
}

}  // namespace fhmm::copula
