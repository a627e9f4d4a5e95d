#include "fhmm/smf_baseline.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "fhmm/elbo_svi.hpp"

namespace fhmm::smf {

namespace {

constexpr double kTransFloor = 1e-12;

double xlogx(double v) { return v > 0.0 ? v * std::log(v) : 0.0; }

// Evidence potentials of chain m against the frozen other chains: the
// expected residual of y_t (Gaussian, shared covariance) gives
// log h_t(1) - log h_t(0) = w_m^T Sigma^-1 r_t - 1/2 w_m^T Sigma^-1 w_m,
// shifted so the larger potential is 1 (forward-backward is scale free).
Eigen::MatrixXd chain_potentials(const model::FhmmParams& p,
                                 const Eigen::MatrixXd& y,
                                 const std::vector<Eigen::MatrixXd>& gamma,
                                 int m) {
    const int T = static_cast<int>(y.rows());
    const int M = p.num_chains;
    const Eigen::VectorXd wm = p.emission.row(m).transpose();
    const Eigen::VectorXd gm = p.chol.solve_sigma(wm);
    const double half_quad = 0.5 * wm.dot(gm);

    Eigen::MatrixXd h(T, 2);
    for (int t = 0; t < T; ++t) {
        Eigen::VectorXd mean_others = p.emission.row(M).transpose();
        for (int l = 0; l < M; ++l) {
            if (l == m) continue;
            mean_others += gamma[l](t, 1) * p.emission.row(l).transpose();
        }
        const double delta = gm.dot(y.row(t).transpose() - mean_others) - half_quad;
        const double shift = std::fmax(0.0, delta);
        h(t, 0) = std::exp(-shift);
        h(t, 1) = std::exp(delta - shift);
    }
    return h;
}

struct MStats {
    Eigen::MatrixXd w;
    Eigen::MatrixXd l;
    std::vector<Eigen::Matrix2d> a;
};

model::FhmmParams m_step(const model::FhmmParams& p, const Eigen::MatrixXd& y,
                         const SmfState& state) {
    const int T = static_cast<int>(y.rows());
    const int M = p.num_chains;
    const int D = p.obs_dim;

    Eigen::MatrixXd s_ss = Eigen::MatrixXd::Zero(M + 1, M + 1);
    Eigen::MatrixXd s_sy = Eigen::MatrixXd::Zero(M + 1, D);
    Eigen::VectorXd ghat(M + 1);
    ghat[M] = 1.0;
    for (int t = 0; t < T; ++t) {
        for (int m = 0; m < M; ++m) ghat[m] = state.gamma[m](t, 1);
        s_ss += ghat * ghat.transpose();
        for (int m = 0; m < M; ++m) {
            s_ss(m, m) += ghat[m] * (1.0 - ghat[m]);  // E[s^2] = E[s]
        }
        s_sy += ghat * y.row(t);
    }
    const Eigen::MatrixXd w = s_ss.ldlt().solve(s_sy);
    Eigen::MatrixXd sigma = (y.transpose() * y - s_sy.transpose() * w) / T;
    sigma = 0.5 * (sigma + sigma.transpose());

    Eigen::MatrixXd lower;
    const double jitter_unit = 1e-10 * (1.0 + sigma.trace() / D);
    for (int attempt = 0;; ++attempt) {
        Eigen::LLT<Eigen::MatrixXd> llt(sigma);
        if (llt.info() == Eigen::Success) {
            lower = Eigen::MatrixXd(llt.matrixL());
            bool ok = true;
            for (int d = 0; d < D; ++d) ok = ok && lower(d, d) > 0.0;
            if (ok) break;
        }
        if (attempt >= 30) {
            throw std::runtime_error("smf_em_fit: residual covariance not positive definite");
        }
        sigma += jitter_unit * std::pow(10.0, attempt) * Eigen::MatrixXd::Identity(D, D);
    }

    std::vector<Eigen::Matrix2d> a(M);
    for (int m = 0; m < M; ++m) {
        Eigen::Matrix2d counts = Eigen::Matrix2d::Zero();
        for (const auto& xi : state.xi[m]) counts += xi;
        for (int i = 0; i < 2; ++i) {
            double row = counts(i, 0) + counts(i, 1);
            if (row <= 0.0) {
                a[m].row(i) << 0.5, 0.5;  // state never visited: neutral row
                continue;
            }
            for (int j = 0; j < 2; ++j) {
                a[m](i, j) = std::fmin(1.0 - 1e-8, std::fmax(1e-8, counts(i, j) / row));
            }
            a[m].row(i) /= a[m].row(i).sum();
        }
    }
    return model::FhmmParams(M, D, w, prob::CholFactor(lower), std::move(a));
}

}  // namespace

ChainPosterior forward_backward(const Eigen::MatrixXd& h, const Eigen::Matrix2d& A,
                                const Eigen::Vector2d& pi) {
    const int T = static_cast<int>(h.rows());
    if (T < 1 || h.cols() != 2) {
        throw std::invalid_argument("forward_backward: h must be T x 2 with T >= 1");
    }
    Eigen::MatrixXd alpha(T, 2);
    Eigen::VectorXd scale(T);
    Eigen::Vector2d a = pi.cwiseProduct(h.row(0).transpose());
    scale[0] = a.sum();
    if (!(scale[0] > 0.0) || !std::isfinite(scale[0])) {
        throw std::invalid_argument("forward_backward: vanishing potential row");
    }
    alpha.row(0) = (a / scale[0]).transpose();
    for (int t = 1; t < T; ++t) {
        a = (A.transpose() * alpha.row(t - 1).transpose())
                .cwiseProduct(h.row(t).transpose());
        scale[t] = a.sum();
        if (!(scale[t] > 0.0) || !std::isfinite(scale[t])) {
            throw std::invalid_argument("forward_backward: vanishing potential row");
        }
        alpha.row(t) = (a / scale[t]).transpose();
    }

    Eigen::MatrixXd beta = Eigen::MatrixXd::Ones(T, 2);
    for (int t = T - 2; t >= 0; --t) {
        const Eigen::Vector2d hb =
            h.row(t + 1).transpose().cwiseProduct(beta.row(t + 1).transpose());
        beta.row(t) = (A * hb).transpose() / scale[t + 1];
    }

    ChainPosterior post;
    post.gamma.resize(T, 2);
    for (int t = 0; t < T; ++t) {
        Eigen::Vector2d g =
            alpha.row(t).transpose().cwiseProduct(beta.row(t).transpose());
        post.gamma.row(t) = (g / g.sum()).transpose();
    }
    post.xi.resize(T - 1);
    for (int t = 0; t + 1 < T; ++t) {
        Eigen::Matrix2d xi;
        for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 2; ++j) {
                xi(i, j) = alpha(t, i) * A(i, j) * h(t + 1, j) * beta(t + 1, j) /
                           scale[t + 1];
            }
        }
        post.xi[t] = xi / xi.sum();
    }
    post.log_norm = scale.array().log().sum();
    return post;
}

SmfState init_state(int num_chains, int T) {
    SmfState s;
    s.gamma.assign(num_chains, Eigen::MatrixXd::Constant(T, 2, 0.5));
    s.xi.assign(num_chains,
                std::vector<Eigen::Matrix2d>(std::max(0, T - 1),
                                             Eigen::Matrix2d::Constant(0.25)));
    return s;
}

double smf_elbo(const model::FhmmParams& params, const Eigen::MatrixXd& y,
                const SmfState& state) {
    const int T = static_cast<int>(y.rows());
    const int M = params.num_chains;
    double elbo = 0.0;
    Eigen::VectorXd theta(M);
    for (int t = 0; t < T; ++t) {
        for (int m = 0; m < M; ++m) theta[m] = state.gamma[m](t, 1);
        elbo += svi::expected_emission_loglik(params, theta, y.row(t).transpose());
    }
    for (int m = 0; m < M; ++m) {
        const double pi1 = model::stationary_dist(params.trans[m]);
        const Eigen::Vector2d pi(1.0 - pi1, pi1);
        for (int i = 0; i < 2; ++i) {
            elbo += state.gamma[m](0, i) * std::log(std::fmax(pi(i), kTransFloor));
            elbo -= xlogx(state.gamma[m](0, i));  // initial-state entropy
        }
        for (int t = 0; t + 1 < T; ++t) {
            const auto& xi = state.xi[m][t];
            for (int i = 0; i < 2; ++i) {
                const double rowmass = xi(i, 0) + xi(i, 1);
                for (int j = 0; j < 2; ++j) {
                    elbo += xi(i, j) *
                            std::log(std::fmax(params.trans[m](i, j), kTransFloor));
                    if (xi(i, j) > 0.0) {
                        elbo -= xi(i, j) * std::log(xi(i, j) / rowmass);
                    }
                }
            }
        }
    }
    return elbo;
}

SmfState smf_e_step(const model::FhmmParams& params, const Eigen::MatrixXd& y,
                    SmfState state, int max_inner, double tol) {
    const int M = params.num_chains;
    state.converged = false;
    double prev = -std::numeric_limits<double>::infinity();
    for (int sweep = 1; sweep <= max_inner; ++sweep) {
        for (int m = 0; m < M; ++m) {
            const Eigen::MatrixXd h = chain_potentials(params, y, state.gamma, m);
            const double pi1 = model::stationary_dist(params.trans[m]);
            const auto post =
                forward_backward(h, params.trans[m], Eigen::Vector2d(1.0 - pi1, pi1));
            state.gamma[m] = post.gamma;
            state.xi[m] = post.xi;
        }
        const double cur = smf_elbo(params, y, state);
        if (cur < prev - 1e-9 * (1.0 + std::abs(prev))) {
            throw std::logic_error("smf_e_step: variational bound decreased");
        }
        state.inner_iterations = sweep;
        if (std::abs(cur - prev) < tol * (1.0 + std::abs(cur))) {
            state.converged = true;
            return state;
        }
        prev = cur;
    }
    return state;
}

SmfEmResult smf_em_fit(const model::FhmmParams& init, const Eigen::MatrixXd& y,
                       int outer_iterations, double budget_seconds) {
    const int T = static_cast<int>(y.rows());
    if (budget_seconds == 0.0) {
        return {init, init_state(init.num_chains, T), {}};
    }
    const double limit = budget_seconds > 0.0
                             ? budget_seconds
                             : std::numeric_limits<double>::infinity();
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&]() {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    };

    SmfEmResult res{init, init_state(init.num_chains, T), {}};
    for (int it = 1; it <= outer_iterations; ++it) {
        res.state = smf_e_step(res.params, y, std::move(res.state));
        res.trace.push_back({it, smf_elbo(res.params, y, res.state), elapsed()});
        if (it == outer_iterations || elapsed() > limit) break;
        res.params = m_step(res.params, y, res.state);
    }
    return res;
}

Eigen::MatrixXd boundary_posterior_pinned(const model::FhmmParams& params,
                                          const Eigen::MatrixXd& y_block,
                                          const Eigen::VectorXd& target_theta,
                                          Side side, int max_inner, double tol) {
    const int n = static_cast<int>(y_block.rows());
    const int M = params.num_chains;
    if (n < 2) throw std::invalid_argument("boundary_posterior_pinned: need >= 2 rows");
    if (target_theta.size() != M) {
        throw std::invalid_argument("boundary_posterior_pinned: target size mismatch");
    }
    const int pin = side == Side::Left ? n - 1 : 0;

    std::vector<Eigen::MatrixXd> gamma(M, Eigen::MatrixXd::Constant(n, 2, 0.5));
    for (int sweep = 0; sweep < max_inner; ++sweep) {
        double delta_max = 0.0;
        for (int m = 0; m < M; ++m) {
            Eigen::MatrixXd h = chain_potentials(params, y_block, gamma, m);
            const double pi1 = model::stationary_dist(params.trans[m]);
            const Eigen::Vector2d pi(1.0 - pi1, pi1);
            const auto first = forward_backward(h, params.trans[m], pi);
            // retarget the pinned row: scaling its potential by target/current
            // reweights every path by the factor attached to its pinned state,
            // which moves that marginal exactly onto the target while keeping
            // the conditional law of the remaining positions intact
            const double t1 =
                std::fmin(1.0 - 1e-12, std::fmax(1e-12, target_theta[m]));
            h(pin, 0) *= (1.0 - t1) / std::fmax(first.gamma(pin, 0), 1e-300);
            h(pin, 1) *= t1 / std::fmax(first.gamma(pin, 1), 1e-300);
            const auto post = forward_backward(h, params.trans[m], pi);
            delta_max = std::fmax(delta_max,
                                  (post.gamma - gamma[m]).cwiseAbs().maxCoeff());
            gamma[m] = post.gamma;
        }
        if (delta_max < tol) break;
    }

    Eigen::MatrixXd out(n - 1, M);
    for (int m = 0; m < M; ++m) {
        for (int k = 0; k < n - 1; ++k) {
            out(k, m) = gamma[m](side == Side::Left ? k : k + 1, 1);
        }
    }
    return out;
}

Eigen::MatrixXd boundary_posterior(const model::FhmmParams& params,
                                   const Eigen::MatrixXd& y,
                                   const recog::MlpParams& nets,
                                   const recog::MlpSpec& spec, Side side) {
    const int M = params.num_chains;
    if (spec.window_delta <= 0) return Eigen::MatrixXd(0, M);
    const int hw = spec.half_window();
    const int T = static_cast<int>(y.rows());
    const int pin_pos = side == Side::Left ? hw + 1 : T - 2 - hw;
    const Eigen::VectorXd target =
        recog::recog_forward(nets, spec, recog::window(y, pin_pos, spec.window_delta))
            .theta;
    const Eigen::MatrixXd block = side == Side::Left ? y.topRows(hw + 2)
                                                     : y.bottomRows(hw + 2);
    return boundary_posterior_pinned(params, block, target, side);
}

}  // namespace fhmm::smf
