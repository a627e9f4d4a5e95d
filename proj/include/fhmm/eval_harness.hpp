#ifndef FHMM_EVAL_HARNESS_HPP
#define FHMM_EVAL_HARNESS_HPP

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fhmm/elbo_svi.hpp"
#include "fhmm/fhmm_model.hpp"
#include "fhmm/recognition_net.hpp"

namespace fhmm::eval {

// exact_loglik / T; inherits the M <= 12 guard of the exact forward pass.
double loglik_per_timestep(const model::FhmmParams& params,
                           const Eigen::MatrixXd& y);

// Per-dimension mean of (y_t - W^T [theta_t, 1])^2; theta is T x M.
Eigen::VectorXd smoothing_mse(const model::FhmmParams& params,
                              const Eigen::MatrixXd& theta,
                              const Eigen::MatrixXd& y);

// Full-sequence posterior marginals of an amortized model: recognition-net
// outputs on the interior windows, mean-field boundary posteriors (pinned to
// the adjacent net outputs) on the first and last half-window + 1 positions.
Eigen::MatrixXd amortized_marginals(const model::FhmmParams& params,
                                    const recog::MlpParams& nets,
                                    const recog::MlpSpec& spec,
                                    const Eigen::MatrixXd& y);

// Chain order and state labels are not identifiable: permuting chains or
// relabeling a chain's states (w_m -> -w_m, bias -> bias + w_m, A_m
// conjugated by the swap) leaves the likelihood unchanged.  The alignment
// searches all M! x 2^M symmetries for the closest match to `truth`.
struct Alignment {
    std::vector<int> permutation;  // learned chain assigned to each true chain
    std::vector<bool> flipped;     // per true chain: states relabeled
    double distance;               // squared Frobenius over W rows, bias, A
    model::FhmmParams aligned;     // learned params expressed in truth's frame
};

Alignment align_chains(const model::FhmmParams& truth,
                       const model::FhmmParams& learned);  // M <= 8

struct EvalReport {
    std::string algorithm;
    double train_ll;
    double test_ll;
    Eigen::VectorXd mse;  // per dimension, on the test sequence
    double seconds_used;
    bool budget_exhausted_before_first_iteration;
};

struct ComparisonResult {
    EvalReport svi;
    EvalReport smf;
};

// Same-budget head-to-head: trains each algorithm from the same data-driven
// initialization under `budget_seconds` of wall clock, then scores both with
// the exact per-timestep log-likelihood and the smoothing MSE on test data.
ComparisonResult budgeted_comparison(const Eigen::MatrixXd& train_y,
                                     const Eigen::MatrixXd& test_y,
                                     double budget_seconds,
                                     const svi::TrainConfig& config);

}  // namespace fhmm::eval

#endif
