#include "fhmm/fhmm_model.hpp"

#include <cmath>
#include <stdexcept>

#include "fhmm/rng.hpp"

namespace fhmm::model {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
}

FhmmParams::FhmmParams(int M, int D, Eigen::MatrixXd W, prob::CholFactor L,
                       std::vector<Eigen::Matrix2d> A)
    : num_chains(M), obs_dim(D), emission(std::move(W)), chol(std::move(L)),
      trans(std::move(A)) {
    if (num_chains < 1 || obs_dim < 1) {
        throw std::invalid_argument("FhmmParams: M and D must be positive");
    }
    if (emission.rows() != num_chains + 1 || emission.cols() != obs_dim) {
        throw std::invalid_argument("FhmmParams: W must be (M+1) x D");
    }
    if (chol.dim() != obs_dim) {
        throw std::invalid_argument("FhmmParams: L must be D x D");
    }
    if (static_cast<int>(trans.size()) != num_chains) {
        throw std::invalid_argument("FhmmParams: need one transition matrix per chain");
    }
    for (const auto& a : trans) {
        for (int i = 0; i < 2; ++i) {
            if (std::abs(a.row(i).sum() - 1.0) > 1e-12 || a(i, 0) < 0.0 || a(i, 1) < 0.0) {
                throw std::invalid_argument("FhmmParams: transition rows must be stochastic");
            }
        }
    }
}

Eigen::VectorXd FhmmParams::stationary() const {
    Eigen::VectorXd pi(num_chains);
    for (int m = 0; m < num_chains; ++m) pi[m] = stationary_dist(trans[m]);
    return pi;
}

double stationary_dist(const Eigen::Matrix2d& A) {
    const double p = A(0, 1);  // 0 -> 1
    const double q = A(1, 0);  // 1 -> 0
    if (p < 1e-12 && q < 1e-12) {
        throw std::domain_error("stationary_dist: non-ergodic transition matrix");
    }
    return p / (p + q);
}

Simulation simulate(const FhmmParams& params, int T, std::uint64_t seed) {
    if (T < 1) throw std::invalid_argument("simulate: T must be >= 1");
    const int M = params.num_chains;
    const int D = params.obs_dim;
    Simulation sim;
    sim.states.resize(T, M);
    sim.observations.resize(T, D);

    for (int m = 0; m < M; ++m) {
        Rng rng(Rng::split_seed(seed, static_cast<std::uint64_t>(m) + 1));
        const double pi1 = stationary_dist(params.trans[m]);
        int s = rng.next_uniform() < pi1 ? 1 : 0;
        sim.states(0, m) = s;
        for (int t = 1; t < T; ++t) {
            s = rng.next_uniform() < params.trans[m](s, 1) ? 1 : 0;
            sim.states(t, m) = s;
        }
    }

    Rng noise(Rng::split_seed(seed, 0));
    Eigen::VectorXd shat(M + 1);
    shat[M] = 1.0;
    Eigen::VectorXd z(D);
    for (int t = 0; t < T; ++t) {
        for (int m = 0; m < M; ++m) shat[m] = sim.states(t, m);
        for (int d = 0; d < D; ++d) z[d] = noise.next_normal();
        sim.observations.row(t) =
            (params.emission.transpose() * shat + params.chol.matrix() * z).transpose();
    }
    return sim;
}

namespace {

struct ForwardResult {
    double loglik;
    // normalized filtering distributions, T x 2^M (empty unless requested)
    Eigen::MatrixXd filtered;
};

// One forward pass over the joint 2^M state space.  The transition operator
// factorizes over chains, so it is applied as M binary tensor contractions
// (cost T * M * 2^M instead of T * 4^M).
ForwardResult joint_forward(const FhmmParams& params, const Eigen::MatrixXd& y,
                            bool keep_filtered) {
    const int M = params.num_chains;
    const int D = params.obs_dim;
    if (M > 12) {
        throw std::domain_error("exact_loglik: joint state space too large (M > 12)");
    }
    if (y.cols() != D || y.rows() < 1) {
        throw std::invalid_argument("exact_loglik: observation shape mismatch");
    }
    const int T = static_cast<int>(y.rows());
    const int S = 1 << M;

    // per-state whitened means L^-1 mu_s and the constant term
    Eigen::MatrixXd vmean(S, D);
    Eigen::VectorXd shat(M + 1);
    shat[M] = 1.0;
    for (int s = 0; s < S; ++s) {
        for (int m = 0; m < M; ++m) shat[m] = (s >> m) & 1;
        vmean.row(s) = params.chol.solve_lower(params.emission.transpose() * shat).transpose();
    }
    const double c0 = -0.5 * D * kLog2Pi - 0.5 * params.chol.log_det_sigma();

    Eigen::VectorXd alpha(S), tmp(S), emis(S);
    for (int s = 0; s < S; ++s) {
        double p = 1.0;
        for (int m = 0; m < M; ++m) {
            const double pi1 = stationary_dist(params.trans[m]);
            p *= ((s >> m) & 1) ? pi1 : 1.0 - pi1;
        }
        alpha[s] = p;
    }

    ForwardResult res;
    res.loglik = 0.0;
    if (keep_filtered) res.filtered.resize(T, S);

    for (int t = 0; t < T; ++t) {
        if (t > 0) {
            for (int m = 0; m < M; ++m) {
                const auto& A = params.trans[m];
                const int bit = 1 << m;
                for (int s = 0; s < S; ++s) {
                    if (s & bit) continue;
                    const double a0 = alpha[s];
                    const double a1 = alpha[s | bit];
                    tmp[s] = a0 * A(0, 0) + a1 * A(1, 0);
                    tmp[s | bit] = a0 * A(0, 1) + a1 * A(1, 1);
                }
                alpha.swap(tmp);
            }
        }
        const Eigen::VectorXd u = params.chol.solve_lower(y.row(t).transpose());
        double maxlog = -std::numeric_limits<double>::infinity();
        for (int s = 0; s < S; ++s) {
            emis[s] = c0 - 0.5 * (u - vmean.row(s).transpose()).squaredNorm();
            maxlog = std::fmax(maxlog, emis[s]);
        }
        double norm = 0.0;
        for (int s = 0; s < S; ++s) {
            alpha[s] *= std::exp(emis[s] - maxlog);
            norm += alpha[s];
        }
        res.loglik += maxlog + std::log(norm);
        alpha /= norm;
        if (keep_filtered) res.filtered.row(t) = alpha.transpose();
    }
    return res;
}

}  // namespace

double exact_loglik(const FhmmParams& params, const Eigen::MatrixXd& y) {
    return joint_forward(params, y, false).loglik;
}

Eigen::MatrixXd exact_smoothed_marginals(const FhmmParams& params,
                                         const Eigen::MatrixXd& y) {
    const ForwardResult fwd = joint_forward(params, y, true);
    const int M = params.num_chains;
    const int S = 1 << M;
    const int T = static_cast<int>(y.rows());

    Eigen::MatrixXd theta(T, M);
    auto reduce = [&](const Eigen::VectorXd& post, int t) {
        for (int m = 0; m < M; ++m) {
            double p1 = 0.0;
            for (int s = 0; s < S; ++s) {
                if ((s >> m) & 1) p1 += post[s];
            }
            theta(t, m) = p1;
        }
    };

    // backward recursion on filtered/predicted ratios:
    //   post_t(i) = filt_t(i) * sum_j A(i,j) post_{t+1}(j) / pred_{t+1}(j)
    Eigen::VectorXd post = fwd.filtered.row(T - 1).transpose();
    reduce(post, T - 1);
    Eigen::VectorXd tmp(S);
    for (int t = T - 2; t >= 0; --t) {
        // pred_{t+1} = A^T filt_t, applied chain by chain
        Eigen::VectorXd pred = fwd.filtered.row(t).transpose();
        for (int m = 0; m < M; ++m) {
            const auto& A = params.trans[m];
            const int bit = 1 << m;
            for (int s = 0; s < S; ++s) {
                if (s & bit) continue;
                const double a0 = pred[s];
                const double a1 = pred[s | bit];
                tmp[s] = a0 * A(0, 0) + a1 * A(1, 0);
                tmp[s | bit] = a0 * A(0, 1) + a1 * A(1, 1);
            }
            pred.swap(tmp);
        }
        Eigen::VectorXd ratio(S);
        for (int s = 0; s < S; ++s) {
            ratio[s] = pred[s] > 0.0 ? post[s] / pred[s] : 0.0;
        }
        // (A ratio)_i = sum_j A(i,j) ratio_j, chain by chain
        for (int m = 0; m < M; ++m) {
            const auto& A = params.trans[m];
            const int bit = 1 << m;
            for (int s = 0; s < S; ++s) {
                if (s & bit) continue;
                const double r0 = ratio[s];
                const double r1 = ratio[s | bit];
                tmp[s] = A(0, 0) * r0 + A(0, 1) * r1;
                tmp[s | bit] = A(1, 0) * r0 + A(1, 1) * r1;
            }
            ratio.swap(tmp);
        }
        post = fwd.filtered.row(t).transpose().cwiseProduct(ratio);
        post /= post.sum();
        reduce(post, t);
    }
    return theta;
}

Eigen::MatrixXd smoothed_reconstruction(const Eigen::MatrixXd& W,
                                        const Eigen::MatrixXd& theta) {
    const int M = static_cast<int>(W.rows()) - 1;
    if (theta.cols() != M) {
        throw std::invalid_argument("smoothed_reconstruction: theta has wrong width");
    }
    if ((theta.array() < 0.0).any() || (theta.array() > 1.0).any()) {
        throw std::invalid_argument("smoothed_reconstruction: theta outside [0,1]");
    }
    const int T = static_cast<int>(theta.rows());
    Eigen::MatrixXd shat(T, M + 1);
    shat.leftCols(M) = theta;
    shat.col(M).setOnes();
    return shat * W;
}

}  // namespace fhmm::model
