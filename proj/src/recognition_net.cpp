#include "fhmm/recognition_net.hpp"

#include <cmath>
#include <stdexcept>

#include "fhmm/prob_numerics.hpp"
#include "fhmm/rng.hpp"

namespace fhmm::recog {

using prob::kEpsRho;
using prob::kEpsTheta;

std::vector<int> MlpSpec::layer_dims() const {
    std::vector<int> dims;
    dims.push_back(input_dim());
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(head_outputs());
    return dims;
}

int MlpSpec::params_per_trunk() const {
    const auto dims = layer_dims();
    int n = 0;
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
        n += dims[l + 1] * dims[l] + dims[l + 1];
    }
    return n;
}

void MlpSpec::validate() const {
    if (window_delta < 2 || window_delta % 2 != 0) {
        throw std::invalid_argument(
            "MlpSpec: window_delta must be even and >= 2 (window width = delta+1)");
    }
    if (data_dim < 1 || num_chains < 1) {
        throw std::invalid_argument("MlpSpec: dimensions must be positive");
    }
    if (hidden.empty()) {
        throw std::invalid_argument("MlpSpec: at least one hidden layer required");
    }
    for (int h : hidden) {
        if (h < 1) throw std::invalid_argument("MlpSpec: hidden sizes must be >= 1");
    }
}

MlpParams init_params(const MlpSpec& spec, std::uint64_t seed) {
    spec.validate();
    MlpParams p;
    p.w.assign(spec.num_params(), 0.0);
    const auto dims = spec.layer_dims();
    int pos = 0;
    for (int trunk = 0; trunk < spec.trunk_count(); ++trunk) {
        Rng rng(Rng::split_seed(seed, 2'000'000 + trunk));
        for (size_t l = 0; l + 1 < dims.size(); ++l) {
            const double a = std::sqrt(6.0 / (dims[l] + dims[l + 1]));
            for (int i = 0; i < dims[l + 1] * dims[l]; ++i) {
                p.w[pos++] = rng.next_symmetric(a);
            }
            pos += dims[l + 1];  // biases stay zero
        }
    }
    return p;
}

Eigen::VectorXd window(const Eigen::MatrixXd& y, int t, int dt) {
    const int hw = dt / 2;
    const int T = static_cast<int>(y.rows());
    const int D = static_cast<int>(y.cols());
    if (t < hw || t > T - 1 - hw) {
        throw std::out_of_range("window: center outside the interior range");
    }
    Eigen::VectorXd x((dt + 1) * D);
    for (int k = 0; k <= dt; ++k) {
        x.segment(k * D, D) = y.row(t - hw + k).transpose();
    }
    return x;
}

namespace {

double apply_act(Activation a, double z) {
    switch (a) {
        case Activation::Tanh: return std::tanh(z);
        case Activation::Relu: return z > 0.0 ? z : 0.0;
        case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-z));
    }
    return 0.0;
}

double act_deriv(Activation a, double post) {
    switch (a) {
        case Activation::Tanh: return 1.0 - post * post;
        case Activation::Relu: return post > 0.0 ? 1.0 : 0.0;
        case Activation::Sigmoid: return post * (1.0 - post);
    }
    return 0.0;
}

}  // namespace

RecogOutput recog_forward(const MlpParams& params, const MlpSpec& spec,
                          const Eigen::VectorXd& x, ForwardCache* cache) {
    if (x.size() != spec.input_dim()) {
        throw std::invalid_argument("recog_forward: input size mismatch");
    }
    if (static_cast<int>(params.w.size()) != spec.num_params()) {
        throw std::invalid_argument("recog_forward: parameter size mismatch");
    }
    const auto dims = spec.layer_dims();
    const int M = spec.num_chains;
    RecogOutput out;
    out.theta.resize(M);
    out.rho.resize(M);
    if (cache) {
        cache->input = x;
        cache->acts.assign(spec.trunk_count(), {});
        cache->clamped.assign(spec.trunk_count(), {});
    }

    int pos = 0;
    for (int trunk = 0; trunk < spec.trunk_count(); ++trunk) {
        Eigen::VectorXd a = x;
        std::vector<Eigen::VectorXd> acts;
        for (size_t l = 0; l + 1 < dims.size(); ++l) {
            const int nin = dims[l], nout = dims[l + 1];
            Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                           Eigen::RowMajor>>
                Wl(params.w.data() + pos, nout, nin);
            pos += nout * nin;
            Eigen::Map<const Eigen::VectorXd> bl(params.w.data() + pos, nout);
            pos += nout;
            Eigen::VectorXd z = Wl * a + bl;
            if (l + 2 < dims.size()) {
                for (int i = 0; i < nout; ++i) z[i] = apply_act(spec.activation, z[i]);
            }
            a = std::move(z);
            if (cache) acts.push_back(a);
        }
        std::vector<bool> clamped(dims.back(), false);
        auto squash_theta = [&](double z, int slot) {
            double v = 1.0 / (1.0 + std::exp(-z));
            if (v < kEpsTheta) { v = kEpsTheta; clamped[slot] = true; }
            if (v > 1.0 - kEpsTheta) { v = 1.0 - kEpsTheta; clamped[slot] = true; }
            return v;
        };
        auto squash_rho = [&](double z, int slot) {
            double v = std::tanh(z);
            if (v < -1.0 + kEpsRho) { v = -1.0 + kEpsRho; clamped[slot] = true; }
            if (v > 1.0 - kEpsRho) { v = 1.0 - kEpsRho; clamped[slot] = true; }
            return v;
        };
        if (spec.sharing == Sharing::PerChain) {
            out.theta[trunk] = squash_theta(a[0], 0);
            out.rho[trunk] = squash_rho(a[1], 1);
        } else {
            for (int m = 0; m < M; ++m) {
                out.theta[m] = squash_theta(a[m], m);
                out.rho[m] = squash_rho(a[M + m], M + m);
            }
        }
        if (cache) {
            cache->acts[trunk] = std::move(acts);
            cache->clamped[trunk] = std::move(clamped);
        }
    }
    return out;
}

void recog_backward(const MlpParams& params, const MlpSpec& spec,
                    const ForwardCache& cache, const Eigen::VectorXd& d_theta,
                    const Eigen::VectorXd& d_rho, std::vector<double>& grad) {
    const int M = spec.num_chains;
    if (d_theta.size() != M || d_rho.size() != M) {
        throw std::invalid_argument("recog_backward: upstream size mismatch");
    }
    if (static_cast<int>(grad.size()) != spec.num_params()) {
        throw std::invalid_argument("recog_backward: gradient size mismatch");
    }
    const auto dims = spec.layer_dims();
    const int nlayers = static_cast<int>(dims.size()) - 1;

    int trunk_base = 0;
    for (int trunk = 0; trunk < spec.trunk_count(); ++trunk) {
        const auto& acts = cache.acts[trunk];
        const auto& clamped = cache.clamped[trunk];
        const Eigen::VectorXd& head = acts.back();  // raw linear outputs

        // upstream through the output squash
        Eigen::VectorXd delta(dims.back());
        auto theta_dz = [&](double z, double up, int slot) {
            if (clamped[slot]) return 0.0;
            const double s = 1.0 / (1.0 + std::exp(-z));
            return up * s * (1.0 - s);
        };
        auto rho_dz = [&](double z, double up, int slot) {
            if (clamped[slot]) return 0.0;
            const double t = std::tanh(z);
            return up * (1.0 - t * t);
        };
        if (spec.sharing == Sharing::PerChain) {
            delta[0] = theta_dz(head[0], d_theta[trunk], 0);
            delta[1] = rho_dz(head[1], d_rho[trunk], 1);
        } else {
            for (int m = 0; m < M; ++m) {
                delta[m] = theta_dz(head[m], d_theta[m], m);
                delta[M + m] = rho_dz(head[M + m], d_rho[m], M + m);
            }
        }

        // walk layers backward; recompute flat offsets per layer
        std::vector<int> layer_off(nlayers);
        int pos = trunk_base;
        for (int l = 0; l < nlayers; ++l) {
            layer_off[l] = pos;
            pos += dims[l + 1] * dims[l] + dims[l + 1];
        }
        for (int l = nlayers - 1; l >= 0; --l) {
            const int nin = dims[l], nout = dims[l + 1];
            const Eigen::VectorXd& in =
                (l == 0) ? cache.input : acts[l - 1];
            Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                     Eigen::RowMajor>>
                Gw(grad.data() + layer_off[l], nout, nin);
            Eigen::Map<Eigen::VectorXd> Gb(grad.data() + layer_off[l] + nout * nin,
                                           nout);
            Gw.noalias() += delta * in.transpose();
            Gb += delta;
            if (l > 0) {
                Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic,
                                               Eigen::Dynamic, Eigen::RowMajor>>
                    Wl(params.w.data() + layer_off[l], nout, nin);
                Eigen::VectorXd prev = Wl.transpose() * delta;
                for (int i = 0; i < nin; ++i) {
                    prev[i] *= act_deriv(spec.activation, acts[l - 1][i]);
                }
                delta = std::move(prev);
            }
        }
        trunk_base += spec.params_per_trunk();
    }
}

}  // namespace fhmm::recog
