#ifndef FHMM_SMF_BASELINE_HPP
#define FHMM_SMF_BASELINE_HPP

#include <vector>

#include <Eigen/Dense>

#include "fhmm/fhmm_model.hpp"
#include "fhmm/recognition_net.hpp"

namespace fhmm::smf {

// Posterior of one binary chain under given evidence potentials.
struct ChainPosterior {
    Eigen::MatrixXd gamma;            // T x 2 smoothed marginals
    std::vector<Eigen::Matrix2d> xi;  // length T-1; xi[t](i,j) = q(s_t=i, s_{t+1}=j)
    double log_norm;                  // log sum over paths of pi h A h ...
};

// Scaled forward-backward for a 2-state chain.  h is T x 2 (positive
// potentials), A row-stochastic, pi the initial distribution.
ChainPosterior forward_backward(const Eigen::MatrixXd& h, const Eigen::Matrix2d& A,
                                const Eigen::Vector2d& pi);

// Structured mean-field state: the posterior is a product of independent
// Markov chains, one per latent chain, refit against the others' means.
struct SmfState {
    std::vector<Eigen::MatrixXd> gamma;              // per chain, T x 2
    std::vector<std::vector<Eigen::Matrix2d>> xi;    // per chain, T-1 tables
    bool converged = false;
    int inner_iterations = 0;
};

// Neutral starting point: every marginal 1/2, independent pair tables.
SmfState init_state(int num_chains, int T);

// Variational lower bound of the current state: expected emission and
// transition log-probabilities plus the chain entropies.
double smf_elbo(const model::FhmmParams& params, const Eigen::MatrixXd& y,
                const SmfState& state);

// Round-robin coordinate ascent on the chains until the bound's relative
// change drops below tol or max_inner sweeps elapse.  Each chain update is
// an exact forward-backward against the frozen others, so the bound is
// nondecreasing; a decrease beyond round-off is reported as a logic error.
SmfState smf_e_step(const model::FhmmParams& params, const Eigen::MatrixXd& y,
                    SmfState state, int max_inner = 50, double tol = 1e-6);

struct EmTraceRecord {
    int iteration;
    double elbo;     // bound after the E-step of this iteration
    double seconds;  // wall-clock since fit start
};

struct SmfEmResult {
    model::FhmmParams params;
    SmfState state;
    std::vector<EmTraceRecord> trace;
};

// Variational EM: alternate smf_e_step with the closed-form M-step
// (least-squares W with chain-variance correction, residual-moment
// covariance, transition rows from normalized pair tables).  Stops at
// outer_iterations or when the wall-clock budget runs out; budget 0 returns
// the initialization untouched.
SmfEmResult smf_em_fit(const model::FhmmParams& init, const Eigen::MatrixXd& y,
                       int outer_iterations, double budget_seconds);

enum class Side { Left, Right };

// Posterior marginals q(s=1) for the boundary block of a sequence, with the
// block-adjacent position's marginals pinned to `target_theta` (length M).
// y_block must contain the block rows plus the pinned row: the pinned row is
// the last row for Side::Left and the first row for Side::Right.  Returns
// (rows(y_block)-1) x M marginals for the block positions in sequence order.
Eigen::MatrixXd boundary_posterior_pinned(const model::FhmmParams& params,
                                          const Eigen::MatrixXd& y_block,
                                          const Eigen::VectorXd& target_theta,
                                          Side side, int max_inner = 50,
                                          double tol = 1e-8);

// Convenience wrapper: pins against the recognition networks' marginals at
// the first position adjacent to the boundary block of half-window + 1
// positions.  Returns an empty matrix when the window is degenerate.
Eigen::MatrixXd boundary_posterior(const model::FhmmParams& params,
                                   const Eigen::MatrixXd& y,
                                   const recog::MlpParams& nets,
                                   const recog::MlpSpec& spec, Side side);

}  // namespace fhmm::smf

#endif
