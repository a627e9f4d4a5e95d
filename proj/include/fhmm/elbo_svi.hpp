#ifndef FHMM_ELBO_SVI_HPP
#define FHMM_ELBO_SVI_HPP

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "fhmm/copula_chain.hpp"
#include "fhmm/fhmm_model.hpp"
#include "fhmm/recognition_net.hpp"

namespace fhmm::svi {

struct TrainConfig {
    int delta_t = 4;
    int n_minibatch = 10;
    int iterations = 1000;
    double learning_rate = 1e-3;
    double rmsprop_decay = 0.9;  // gamma
    double rmsprop_eps = 1e-8;
    std::uint64_t seed = 0;
    int num_chains = 1;
    std::vector<int> hidden = {30};
    recog::Activation activation = recog::Activation::Tanh;
    recog::Sharing sharing = recog::Sharing::PerChain;
    bool train_model = true;  // update FHMM parameters
    bool train_nets = true;   // update recognition networks
    int log_every = 100;
    int threads = 1;
    double budget_seconds = 0.0;  // 0 = run all iterations

    recog::MlpSpec net_spec(int data_dim) const;
    void validate() const;
};

struct TraceRecord {
    int iteration;
    double elbo;             // c-scaled minibatch estimate
    double grad_model_norm;  // l2 over FHMM coordinates
    double grad_net_norm;    // l2 over network weights
    double seconds;          // wall-clock since train() start
};
using TrainTrace = std::vector<TraceRecord>;

// Unconstrained coordinates for the FHMM parameters: W entries, the
// Cholesky factor with log-parameterized diagonal, and per-chain 2x2
// transition logits (row-softmaxed).
class ModelParameterization {
public:
    ModelParameterization(int M, int D) : M_(M), D_(D) {}
    int size() const { return (M_ + 1) * D_ + D_ * (D_ + 1) / 2 + 4 * M_; }
    std::vector<double> pack(const model::FhmmParams& p) const;
    model::FhmmParams unpack(const std::vector<double>& x) const;
    int chains() const { return M_; }
    int obs_dim() const { return D_; }

private:
    int M_;
    int D_;
};

// <log p(y_t | s_t)>_q for independent Bernoulli(theta) chain states.
double expected_emission_loglik(const model::FhmmParams& params,
                                const Eigen::VectorXd& theta_t,
                                const Eigen::VectorXd& y_t);

// sum_ij pair[i][j] log A[i][j], entries floored at 1e-12 inside the log.
double expected_transition_loglik(const Eigen::Matrix2d& A,
                                  const copula::PairPmf& pair);

struct EntropyTerms {
    double marginal;  // theta log theta + (1-theta) log(1-theta)
    double pair;      // sum_ij q log q
};
EntropyTerms entropy_terms(double theta, const copula::PairPmf& pair_next);

// A center t (0-based) is valid when the windows for theta_{t-1..t+1} and
// rho_{t}, rho_{t+1} all fit inside the sequence.
int num_valid_centers(int T, int dt);
std::vector<int> valid_centers(int T, int dt);

// Conventional batch factor (T - dt) / n; the training loop itself scales
// by num_valid_centers / n, which keeps the sweep average exactly unbiased.
double batch_factor(int T, int dt, int n_batch_actual);

// The ELBO summand attached to one interior center.
double local_elbo(const model::FhmmParams& params, const recog::MlpParams& nets,
                  const recog::MlpSpec& spec, const Eigen::MatrixXd& y, int t);

// Without-replacement subchain sampling: each epoch is a fresh seeded
// permutation of all valid centers, chunked into minibatches.
class EpochSampler {
public:
    EpochSampler(int T, int dt, int n_minibatch, std::uint64_t seed);
    std::vector<int> next_minibatch();
    int centers_per_epoch() const { return static_cast<int>(centers_.size()); }

private:
    void reshuffle();
    std::vector<int> centers_;
    int n_minibatch_;
    std::uint64_t seed_;
    std::size_t cursor_ = 0;
    std::uint64_t epoch_ = 0;
};

struct StochasticGradient {
    std::vector<double> grad_model;  // d elbo / d unconstrained coords
    std::vector<double> grad_net;
    double elbo_estimate;
};

// c-scaled minibatch gradient of the interior objective, evaluated at the
// model given by `coords` (unpacked internally) and the nets.  Per-center
// work runs on `threads` workers; the reduction order is fixed by center
// position, so results do not depend on the worker count.
StochasticGradient stochastic_gradient(const ModelParameterization& mp,
                                       const std::vector<double>& coords,
                                       const recog::MlpParams& nets,
                                       const recog::MlpSpec& spec,
                                       const Eigen::MatrixXd& y,
                                       const std::vector<int>& minibatch,
                                       double scale, int threads);

struct RmspropState {
    std::vector<double> mean_square;
};

// Ascent step: v <- g v + (1-g) grad^2 ; x <- x + lr grad / (sqrt(v) + eps)
void rmsprop_step(std::vector<double>& x, RmspropState& state,
                  const std::vector<double>& grad, double lr, double gamma,
                  double eps);

struct TrainResult {
    model::FhmmParams params;
    recog::MlpParams nets;
    recog::MlpSpec spec;
    TrainTrace trace;
};

TrainResult train(const TrainConfig& config, const Eigen::MatrixXd& y);

// Deterministic data-driven starting point shared by train() and callers
// that need the same initialization (e.g. baselines).
model::FhmmParams default_init(int M, const Eigen::MatrixXd& y, std::uint64_t seed);

}  // namespace fhmm::svi

#endif
