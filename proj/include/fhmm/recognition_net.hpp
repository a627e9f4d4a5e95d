#ifndef FHMM_RECOGNITION_NET_HPP
#define FHMM_RECOGNITION_NET_HPP

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace fhmm::recog {

enum class Activation { Tanh, Relu, Sigmoid };
enum class Sharing {
    PerChain,      // one trunk per chain; the chain's theta and rho heads
                   // share that trunk's hidden units
    SharedHidden,  // a single trunk shared by every head of every chain
};

struct MlpSpec {
    int window_delta = 4;  // even, >= 2; window covers delta+1 timesteps
    int data_dim = 1;      // D
    int num_chains = 1;    // M
    std::vector<int> hidden = {30};
    Activation activation = Activation::Tanh;
    Sharing sharing = Sharing::PerChain;

    int input_dim() const { return (window_delta + 1) * data_dim; }
    int half_window() const { return window_delta / 2; }
    int trunk_count() const { return sharing == Sharing::PerChain ? num_chains : 1; }
    int head_outputs() const {
        return sharing == Sharing::PerChain ? 2 : 2 * num_chains;
    }
    std::vector<int> layer_dims() const;  // input, hidden..., head
    int params_per_trunk() const;
    int num_params() const { return trunk_count() * params_per_trunk(); }
    void validate() const;  // throws std::invalid_argument
};

struct MlpParams {
    std::vector<double> w;  // flat view handed to the optimizer
};

// Glorot-uniform weights, zero biases (outputs start at theta ~ 0.5, rho ~ 0).
MlpParams init_params(const MlpSpec& spec, std::uint64_t seed);

// Rows t-dt/2 .. t+dt/2 of y concatenated in time order; t is 0-based and
// must lie in the interior [dt/2, T-1-dt/2].
Eigen::VectorXd window(const Eigen::MatrixXd& y, int t, int dt);

struct ForwardCache {
    Eigen::VectorXd input;
    // per trunk, per layer: post-activation values (head layer stores the
    // raw linear outputs)
    std::vector<std::vector<Eigen::VectorXd>> acts;
    std::vector<std::vector<bool>> clamped;  // per trunk, per head output
};

struct RecogOutput {
    Eigen::VectorXd theta;  // length M, in [eps, 1-eps]
    Eigen::VectorXd rho;    // length M, in [-1+eps, 1-eps]
};

RecogOutput recog_forward(const MlpParams& params, const MlpSpec& spec,
                          const Eigen::VectorXd& x,
                          ForwardCache* cache = nullptr);

// Accumulates d(upstream . output)/d(params) into grad (size num_params()).
// Upstream gradients are with respect to the clamped theta/rho outputs;
// clamped coordinates propagate zero.
void recog_backward(const MlpParams& params, const MlpSpec& spec,
                    const ForwardCache& cache, const Eigen::VectorXd& d_theta,
                    const Eigen::VectorXd& d_rho, std::vector<double>& grad);

}  // namespace fhmm::recog

#endif
