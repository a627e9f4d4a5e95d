#ifndef FHMM_COPULA_CHAIN_HPP
#define FHMM_COPULA_CHAIN_HPP

#include <vector>

#include <Eigen/Dense>

namespace fhmm::copula {

// Parameters of one bivariate Gaussian-Bernoulli copula pair: Bernoulli
// marginals at the two adjacent time points and the copula correlation.
struct CopulaPairParams {
    double theta_prev;
    double theta_cur;
    double rho;
};

// 2x2 joint mass; first index is the earlier state.
struct PairPmf {
    double q[2][2];
    double marginal_prev() const { return q[1][0] + q[1][1]; }
    double marginal_cur() const { return q[0][1] + q[1][1]; }
};

PairPmf pair_pmf(const CopulaPairParams& p);

// d q[i][j] / d (theta_prev, theta_cur, rho)
struct PairPmfGrad {
    double d_theta_prev[2][2];
    double d_theta_cur[2][2];
    double d_rho[2][2];
};
PairPmfGrad pair_pmf_grad(const CopulaPairParams& p);

// One chain of the variational family: marginals theta[0..n-1] for a
// window of n consecutive time points starting at `offset` in the full
// sequence, and pair correlations rho[0..n-2] where rho[k] couples points
// k and k+1.  Coherence of adjacent pairs holds by construction: both
// pairs touching point k use the same theta[k].
struct ChainVariationalParams {
    int offset = 0;
    std::vector<double> theta;
    std::vector<double> rho;

    int length() const { return static_cast<int>(theta.size()); }
    CopulaPairParams pair(int k) const {
        return {theta[k], theta[k + 1], rho[k]};
    }
};

// log q(path) under the chain: sum of pair log-cells minus interior
// marginal logs.  Returns -inf (no throw) if a referenced cell underflows.
double chain_log_pmf(const ChainVariationalParams& chain,
                     const std::vector<int>& path);

// Per-chain posterior summary: per-time Bernoulli marginals and per-pair
// joint tables.  Chains are independent, so there are no cross-chain tables.
struct PosteriorMarginals {
    std::vector<double> theta;   // length n
    std::vector<PairPmf> pairs;  // length n-1
};

PosteriorMarginals posterior_marginals_from_chain(const ChainVariationalParams& chain);

}  // namespace fhmm::copula

#endif
