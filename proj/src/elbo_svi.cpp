#include "fhmm/elbo_svi.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "fhmm/rng.hpp"

namespace fhmm::svi {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kTransFloor = 1e-12;

double floored_log(double v, double floor) { return std::log(std::fmax(v, floor)); }

// Shared emission-expectation core.  With independent Bernoulli(theta)
// states the expectation of the Gaussian log-density has the closed form
//   log N(y; W^T theta_hat, Sigma) - 1/2 sum_m theta_m(1-theta_m) w_m^T Sigma^-1 w_m
// evaluated through triangular solves only.
double emission_core(const model::FhmmParams& p, const Eigen::VectorXd& theta,
                     const Eigen::VectorXd& y_t, Eigen::VectorXd* d_theta,
                     Eigen::MatrixXd* d_w, Eigen::MatrixXd* d_l) {
    const int M = p.num_chains;
    const int D = p.obs_dim;
    if (theta.size() != M || y_t.size() != D) {
        throw std::invalid_argument("expected_emission_loglik: shape mismatch");
    }
    Eigen::VectorXd shat(M + 1);
    shat.head(M) = theta;
    shat[M] = 1.0;
    const Eigen::VectorXd r = y_t - p.emission.transpose() * shat;
    const Eigen::VectorXd u = p.chol.solve_sigma(r);

    Eigen::MatrixXd g(D, M);  // Sigma^-1 w_m columns
    double quad = 0.0;
    Eigen::VectorXd wg(M);
    for (int m = 0; m < M; ++m) {
        const Eigen::VectorXd wm = p.emission.row(m).transpose();
        g.col(m) = p.chol.solve_sigma(wm);
        wg[m] = wm.dot(g.col(m));
        quad += theta[m] * (1.0 - theta[m]) * wg[m];
    }
    const double val = -0.5 * D * kLog2Pi - 0.5 * p.chol.log_det_sigma() -
                       0.5 * r.dot(u) - 0.5 * quad;

    if (d_theta) {
        for (int m = 0; m < M; ++m) {
            (*d_theta)[m] += p.emission.row(m).dot(u) -
                             0.5 * (1.0 - 2.0 * theta[m]) * wg[m];
        }
    }
    if (d_w) {
        for (int m = 0; m <= M; ++m) {
            d_w->row(m) += shat[m] * u.transpose();
            if (m < M) {
                d_w->row(m) -= theta[m] * (1.0 - theta[m]) * g.col(m).transpose();
            }
        }
    }
    if (d_l) {
        Eigen::MatrixXd sigma_inv(D, D);
        for (int j = 0; j < D; ++j) {
            sigma_inv.col(j) = p.chol.solve_sigma(Eigen::VectorXd::Unit(D, j));
        }
        Eigen::MatrixXd s = -sigma_inv + u * u.transpose();
        for (int m = 0; m < M; ++m) {
            s += theta[m] * (1.0 - theta[m]) * g.col(m) * g.col(m).transpose();
        }
        const Eigen::MatrixXd dl = s * p.chol.matrix();  // 2 * (S/2) * L
        for (int i = 0; i < D; ++i) {
            for (int j = 0; j <= i; ++j) (*d_l)(i, j) += dl(i, j);
        }
    }
    return val;
}

struct CenterGrad {
    Eigen::MatrixXd d_w;
    Eigen::MatrixXd d_l;  // natural lower-triangular units
    std::vector<Eigen::Matrix2d> d_a;
    std::vector<double> d_net;
    double value = 0.0;
};

double local_core(const model::FhmmParams& p, const recog::MlpParams& nets,
                  const recog::MlpSpec& spec, const Eigen::MatrixXd& y, int c,
                  CenterGrad* out) {
    const int M = p.num_chains;
    const int T = static_cast<int>(y.rows());
    const int hw = spec.half_window();
    if (c < hw + 1 || c > T - 2 - hw) {
        throw std::out_of_range("local_elbo: center outside the interior range");
    }

    recog::ForwardCache cm1, c0, cp1;
    const auto prev = recog::recog_forward(nets, spec, recog::window(y, c - 1, spec.window_delta),
                                           out ? &cm1 : nullptr);
    const auto cur = recog::recog_forward(nets, spec, recog::window(y, c, spec.window_delta),
                                          out ? &c0 : nullptr);
    const auto next = recog::recog_forward(nets, spec, recog::window(y, c + 1, spec.window_delta),
                                           out ? &cp1 : nullptr);

    Eigen::VectorXd d_prev = Eigen::VectorXd::Zero(M);
    Eigen::VectorXd d_cur = Eigen::VectorXd::Zero(M);
    Eigen::VectorXd d_next = Eigen::VectorXd::Zero(M);
    Eigen::VectorXd d_rho_cur = Eigen::VectorXd::Zero(M);
    Eigen::VectorXd d_rho_next = Eigen::VectorXd::Zero(M);

    double value = emission_core(p, cur.theta, y.row(c).transpose(),
                                 out ? &d_cur : nullptr, out ? &out->d_w : nullptr,
                                 out ? &out->d_l : nullptr);

    for (int m = 0; m < M; ++m) {
        // transition expectation over the (c-1, c) pair
        const copula::CopulaPairParams pp{prev.theta[m], cur.theta[m], cur.rho[m]};
        const copula::PairPmf pair = copula::pair_pmf(pp);
        const auto& A = p.trans[m];
        for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 2; ++j) {
                value += pair.q[i][j] * floored_log(A(i, j), kTransFloor);
            }
        }
        // marginal entropy term at c (enters with a plus sign)
        const double th = cur.theta[m];
        value += th * std::log(th) + (1.0 - th) * std::log(1.0 - th);

        // pair term for (c, c+1), subtracted
        const copula::CopulaPairParams pn{cur.theta[m], next.theta[m], next.rho[m]};
        const copula::PairPmf pairn = copula::pair_pmf(pn);
        for (const auto& row : pairn.q) {
            for (double q : row) {
                if (q > 0.0) value -= q * std::log(q);
            }
        }

        if (out) {
            const auto gp = copula::pair_pmf_grad(pp);
            for (int i = 0; i < 2; ++i) {
                for (int j = 0; j < 2; ++j) {
                    const double la = floored_log(A(i, j), kTransFloor);
                    d_prev[m] += la * gp.d_theta_prev[i][j];
                    d_cur[m] += la * gp.d_theta_cur[i][j];
                    d_rho_cur[m] += la * gp.d_rho[i][j];
                    out->d_a[m](i, j) += pair.q[i][j] / std::fmax(A(i, j), kTransFloor);
                }
            }
            d_cur[m] += std::log(th / (1.0 - th));
            const auto gn = copula::pair_pmf_grad(pn);
            for (int i = 0; i < 2; ++i) {
                for (int j = 0; j < 2; ++j) {
                    const double up = -(floored_log(pairn.q[i][j], 1e-15) + 1.0);
                    d_cur[m] += up * gn.d_theta_prev[i][j];
                    d_next[m] += up * gn.d_theta_cur[i][j];
                    d_rho_next[m] += up * gn.d_rho[i][j];
                }
            }
        }
    }

    if (out) {
        const Eigen::VectorXd zero = Eigen::VectorXd::Zero(M);
        recog::recog_backward(nets, spec, cm1, d_prev, zero, out->d_net);
        recog::recog_backward(nets, spec, c0, d_cur, d_rho_cur, out->d_net);
        recog::recog_backward(nets, spec, cp1, d_next, d_rho_next, out->d_net);
        out->value = value;
    }
    return value;
}

}  // namespace

recog::MlpSpec TrainConfig::net_spec(int data_dim) const {
    recog::MlpSpec spec;
    spec.window_delta = delta_t;
    spec.data_dim = data_dim;
    spec.num_chains = num_chains;
    spec.hidden = hidden;
    spec.activation = activation;
    spec.sharing = sharing;
    spec.validate();
    return spec;
}

void TrainConfig::validate() const {
    if (n_minibatch < 1) throw std::invalid_argument("TrainConfig: n_minibatch >= 1");
    if (iterations < 1) throw std::invalid_argument("TrainConfig: iterations >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning rate > 0");
    if (!(rmsprop_decay > 0.0 && rmsprop_decay < 1.0)) {
        throw std::invalid_argument("TrainConfig: rmsprop decay in (0,1)");
    }
    if (num_chains < 1) throw std::invalid_argument("TrainConfig: num_chains >= 1");
    if (threads < 1) throw std::invalid_argument("TrainConfig: threads >= 1");
}

std::vector<double> ModelParameterization::pack(const model::FhmmParams& p) const {
    std::vector<double> x;
    x.reserve(size());
    for (int i = 0; i <= M_; ++i) {
        for (int j = 0; j < D_; ++j) x.push_back(p.emission(i, j));
    }
    for (int i = 0; i < D_; ++i) {
        for (int j = 0; j < i; ++j) x.push_back(p.chol.matrix()(i, j));
        x.push_back(std::log(p.chol.matrix()(i, i)));
    }
    for (int m = 0; m < M_; ++m) {
        for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 2; ++j) {
                x.push_back(std::log(std::fmax(p.trans[m](i, j), kTransFloor)));
            }
        }
    }
    return x;
}

model::FhmmParams ModelParameterization::unpack(const std::vector<double>& x) const {
    if (static_cast<int>(x.size()) != size()) {
        throw std::invalid_argument("ModelParameterization: coordinate size mismatch");
    }
    int pos = 0;
    Eigen::MatrixXd w(M_ + 1, D_);
    for (int i = 0; i <= M_; ++i) {
        for (int j = 0; j < D_; ++j) w(i, j) = x[pos++];
    }
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(D_, D_);
    for (int i = 0; i < D_; ++i) {
        for (int j = 0; j < i; ++j) l(i, j) = x[pos++];
        l(i, i) = std::exp(x[pos++]);
    }
    std::vector<Eigen::Matrix2d> a(M_);
    for (int m = 0; m < M_; ++m) {
        for (int i = 0; i < 2; ++i) {
            const double z0 = x[pos], z1 = x[pos + 1];
            pos += 2;
            const double mx = std::fmax(z0, z1);
            const double e0 = std::exp(z0 - mx), e1 = std::exp(z1 - mx);
            a[m](i, 0) = e0 / (e0 + e1);
            a[m](i, 1) = e1 / (e0 + e1);
        }
    }
    return model::FhmmParams(M_, D_, std::move(w), prob::CholFactor(std::move(l)),
                             std::move(a));
}

double expected_emission_loglik(const model::FhmmParams& params,
                                const Eigen::VectorXd& theta_t,
                                const Eigen::VectorXd& y_t) {
    return emission_core(params, theta_t, y_t, nullptr, nullptr, nullptr);
}

double expected_transition_loglik(const Eigen::Matrix2d& A,
                                  const copula::PairPmf& pair) {
    double v = 0.0;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            v += pair.q[i][j] * floored_log(A(i, j), kTransFloor);
        }
    }
    return v;
}

EntropyTerms entropy_terms(double theta, const copula::PairPmf& pair_next) {
    EntropyTerms t{0.0, 0.0};
    if (theta > 0.0) t.marginal += theta * std::log(theta);
    if (theta < 1.0) t.marginal += (1.0 - theta) * std::log(1.0 - theta);
    for (const auto& row : pair_next.q) {
        for (double q : row) {
            if (q > 0.0) t.pair += q * std::log(q);
        }
    }
    return t;
}

int num_valid_centers(int T, int dt) {
    return std::max(0, T - dt - 2);
}

std::vector<int> valid_centers(int T, int dt) {
    const int hw = dt / 2;
    std::vector<int> out;
    for (int c = hw + 1; c <= T - 2 - hw; ++c) out.push_back(c);
    return out;
}

double batch_factor(int T, int dt, int n_batch_actual) {
    if (n_batch_actual <= 0) {
        throw std::invalid_argument("batch_factor: batch size must be positive");
    }
    return static_cast<double>(T - dt) / n_batch_actual;
}

double local_elbo(const model::FhmmParams& params, const recog::MlpParams& nets,
                  const recog::MlpSpec& spec, const Eigen::MatrixXd& y, int t) {
    return local_core(params, nets, spec, y, t, nullptr);
}

EpochSampler::EpochSampler(int T, int dt, int n_minibatch, std::uint64_t seed)
    : centers_(valid_centers(T, dt)), n_minibatch_(n_minibatch), seed_(seed) {
    if (centers_.empty()) {
        throw std::invalid_argument("EpochSampler: sequence too short for any valid center");
    }
    reshuffle();
}

void EpochSampler::reshuffle() {
    Rng rng(Rng::split_seed(seed_, 1'000'000 + epoch_));
    for (std::size_t i = centers_.size(); i > 1; --i) {
        const std::size_t j = rng.next_u64() % i;
        std::swap(centers_[i - 1], centers_[j]);
    }
    cursor_ = 0;
    ++epoch_;
}

std::vector<int> EpochSampler::next_minibatch() {
    if (cursor_ >= centers_.size()) reshuffle();
    const std::size_t end =
        std::min(centers_.size(), cursor_ + static_cast<std::size_t>(n_minibatch_));
    std::vector<int> mb(centers_.begin() + cursor_, centers_.begin() + end);
    cursor_ = end;
    return mb;
}

StochasticGradient stochastic_gradient(const ModelParameterization& mp,
                                       const std::vector<double>& coords,
                                       const recog::MlpParams& nets,
                                       const recog::MlpSpec& spec,
                                       const Eigen::MatrixXd& y,
                                       const std::vector<int>& minibatch,
                                       double scale, int threads) {
    const model::FhmmParams params = mp.unpack(coords);
    const int M = mp.chains();
    const int D = mp.obs_dim();
    const int n = static_cast<int>(minibatch.size());

    std::vector<CenterGrad> slots(n);
    auto run_slot = [&](int k) {
        CenterGrad& g = slots[k];
        g.d_w = Eigen::MatrixXd::Zero(M + 1, D);
        g.d_l = Eigen::MatrixXd::Zero(D, D);
        g.d_a.assign(M, Eigen::Matrix2d::Zero());
        g.d_net.assign(spec.num_params(), 0.0);
        (void)local_core(params, nets, spec, y, minibatch[k], &g);
    };
    if (threads <= 1 || n == 1) {
        for (int k = 0; k < n; ++k) run_slot(k);
    } else {
        std::vector<std::thread> pool;
        const int workers = std::min(threads, n);
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&, w]() {
                for (int k = w; k < n; k += workers) run_slot(k);
            });
        }
        for (auto& t : pool) t.join();
    }

    // fixed-order reduction, independent of worker count
    Eigen::MatrixXd d_w = Eigen::MatrixXd::Zero(M + 1, D);
    Eigen::MatrixXd d_l = Eigen::MatrixXd::Zero(D, D);
    std::vector<Eigen::Matrix2d> d_a(M, Eigen::Matrix2d::Zero());
    std::vector<double> d_net(spec.num_params(), 0.0);
    double value = 0.0;
    for (const CenterGrad& g : slots) {
        d_w += g.d_w;
        d_l += g.d_l;
        for (int m = 0; m < M; ++m) d_a[m] += g.d_a[m];
        for (std::size_t i = 0; i < d_net.size(); ++i) d_net[i] += g.d_net[i];
        value += g.value;
    }

    // chain natural gradients into the unconstrained coordinates
    StochasticGradient out;
    out.grad_model.reserve(mp.size());
    for (int i = 0; i <= M; ++i) {
        for (int j = 0; j < D; ++j) out.grad_model.push_back(scale * d_w(i, j));
    }
    const Eigen::MatrixXd& l = params.chol.matrix();
    for (int i = 0; i < D; ++i) {
        for (int j = 0; j < i; ++j) out.grad_model.push_back(scale * d_l(i, j));
        out.grad_model.push_back(scale * d_l(i, i) * l(i, i));
    }
    for (int m = 0; m < M; ++m) {
        const auto& A = params.trans[m];
        for (int i = 0; i < 2; ++i) {
            const double dot = A(i, 0) * d_a[m](i, 0) + A(i, 1) * d_a[m](i, 1);
            for (int j = 0; j < 2; ++j) {
                out.grad_model.push_back(scale * A(i, j) * (d_a[m](i, j) - dot));
            }
        }
    }
    out.grad_net.resize(d_net.size());
    for (std::size_t i = 0; i < d_net.size(); ++i) out.grad_net[i] = scale * d_net[i];
    out.elbo_estimate = scale * value;

    for (double v : out.grad_model) {
        if (!std::isfinite(v)) throw std::runtime_error("stochastic_gradient: non-finite model gradient");
    }
    for (double v : out.grad_net) {
        if (!std::isfinite(v)) throw std::runtime_error("stochastic_gradient: non-finite net gradient");
    }
    return out;
}

void rmsprop_step(std::vector<double>& x, RmspropState& state,
                  const std::vector<double>& grad, double lr, double gamma,
                  double eps) {
    if (x.size() != grad.size()) {
        throw std::invalid_argument("rmsprop_step: shape mismatch");
    }
    if (state.mean_square.empty()) state.mean_square.assign(x.size(), 0.0);
    if (state.mean_square.size() != x.size()) {
        throw std::invalid_argument("rmsprop_step: state shape mismatch");
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        double& v = state.mean_square[i];
        v = gamma * v + (1.0 - gamma) * grad[i] * grad[i];
        const double step = lr * grad[i] / (std::sqrt(v) + eps);
        if (!std::isfinite(step)) {
            throw std::runtime_error("rmsprop_step: non-finite update");
        }
        x[i] += step;
    }
}

model::FhmmParams default_init(int M, const Eigen::MatrixXd& y, std::uint64_t seed) {
    const int D = static_cast<int>(y.cols());
    const Eigen::VectorXd mean = y.colwise().mean();
    Eigen::VectorXd sd(D);
    for (int d = 0; d < D; ++d) {
        const double var = (y.col(d).array() - mean[d]).square().mean();
        sd[d] = std::fmax(std::sqrt(var), 1e-3);
    }
    Rng rng(Rng::split_seed(seed, 3'000'000));
    Eigen::MatrixXd w(M + 1, D);
    for (int m = 0; m < M; ++m) {
        for (int d = 0; d < D; ++d) w(m, d) = rng.next_symmetric(0.8 * sd[d]);
    }
    // bias chosen so that theta = 1/2 reproduces the data mean
    w.row(M) = (mean - 0.5 * w.topRows(M).colwise().sum().transpose()).transpose();
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(D, D);
    for (int d = 0; d < D; ++d) l(d, d) = 0.7 * sd[d];
    Eigen::Matrix2d a;
    a << 0.85, 0.15, 0.15, 0.85;
    return model::FhmmParams(M, D, std::move(w), prob::CholFactor(std::move(l)),
                             std::vector<Eigen::Matrix2d>(M, a));
}

TrainResult train(const TrainConfig& config, const Eigen::MatrixXd& y) {
    config.validate();
    const int T = static_cast<int>(y.rows());
    const int D = static_cast<int>(y.cols());
    const recog::MlpSpec spec = config.net_spec(D);
    const int M = config.num_chains;

    const ModelParameterization mp(M, D);
    std::vector<double> coords = mp.pack(default_init(M, y, config.seed));
    recog::MlpParams nets = recog::init_params(spec, config.seed);

    EpochSampler sampler(T, config.delta_t, config.n_minibatch, config.seed);
    const double n_centers = sampler.centers_per_epoch();

    RmspropState model_state, net_state;
    TrainTrace trace;
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&]() {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    };

    for (int it = 1; it <= config.iterations; ++it) {
        if (config.budget_seconds > 0.0 && elapsed() > config.budget_seconds) break;
        const std::vector<int> mb = sampler.next_minibatch();
        const double scale = n_centers / static_cast<double>(mb.size());
        StochasticGradient g;
        try {
            g = stochastic_gradient(mp, coords, nets, spec, y, mb, scale,
                                    config.threads);
        } catch (const std::exception& e) {
            throw std::runtime_error("train: iteration " + std::to_string(it) +
                                     ": " + e.what());
        }
        const double lr = config.learning_rate;
        if (config.train_model && lr > 0.0) {
            rmsprop_step(coords, model_state, g.grad_model, lr,
                         config.rmsprop_decay, config.rmsprop_eps);
        }
        if (config.train_nets && lr > 0.0) {
            rmsprop_step(nets.w, net_state, g.grad_net, lr, config.rmsprop_decay,
                         config.rmsprop_eps);
        }
        if (it % config.log_every == 0 || it == config.iterations) {
            double gm = 0.0, gn = 0.0;
            for (double v : g.grad_model) gm += v * v;
            for (double v : g.grad_net) gn += v * v;
            trace.push_back({it, g.elbo_estimate, std::sqrt(gm), std::sqrt(gn),
                             elapsed()});
        }
    }
    return {mp.unpack(coords), std::move(nets), spec, std::move(trace)};
}

}  // namespace fhmm::svi
