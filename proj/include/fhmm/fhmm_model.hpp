#ifndef FHMM_FHMM_MODEL_HPP
#define FHMM_FHMM_MODEL_HPP

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "fhmm/prob_numerics.hpp"

namespace fhmm::model {

// Generative model: M binary chains with transitions A[m], shared emission
// covariance LL^T, emission mean W^T [s_1..s_M, 1].  Initial state of each
// chain is always the stationary distribution of its transition matrix.
struct FhmmParams {
    int num_chains;  // M
    int obs_dim;     // D
    Eigen::MatrixXd emission;  // W, (M+1) x D; last row is the bias row
    prob::CholFactor chol;     // L, D x D
    std::vector<Eigen::Matrix2d> trans;  // A[m], row-stochastic

    FhmmParams(int M, int D, Eigen::MatrixXd W, prob::CholFactor L,
               std::vector<Eigen::Matrix2d> A);

    // p(s^m = 1) under the stationary distribution, for every chain.
    Eigen::VectorXd stationary() const;
};

// Fixed point pi = pi A of a 2x2 row-stochastic matrix; returns p(s=1).
// Throws if both off-diagonal entries vanish (non-ergodic).
double stationary_dist(const Eigen::Matrix2d& A);

struct Simulation {
    Eigen::MatrixXi states;        // T x M, binary
    Eigen::MatrixXd observations;  // T x D
};

Simulation simulate(const FhmmParams& params, int T, std::uint64_t seed);

// Total log-likelihood log sum_s p(y, s) by the forward algorithm on the
// joint 2^M state space, scaled per step.  Guarded at M <= 12.
double exact_loglik(const FhmmParams& params, const Eigen::MatrixXd& y);

// Smoothed posterior marginals of the joint-state forward-backward pass,
// reduced to per-chain Bernoulli means.  Same M guard as exact_loglik.
Eigen::MatrixXd exact_smoothed_marginals(const FhmmParams& params,
                                         const Eigen::MatrixXd& y);

// y_hat[t] = W^T (theta[t], 1): posterior-weighted emission means.
Eigen::MatrixXd smoothed_reconstruction(const Eigen::MatrixXd& W,
                                        const Eigen::MatrixXd& theta);

}  // namespace fhmm::model

#endif
