#include "fhmm/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "fhmm/smf_baseline.hpp"

namespace fhmm::eval {

namespace {

// Apply a chain permutation and per-chain state relabel to params.
model::FhmmParams transform(const model::FhmmParams& p,
                            const std::vector<int>& perm,
                            const std::vector<bool>& flip) {
    const int M = p.num_chains;
    const int D = p.obs_dim;
    Eigen::MatrixXd w(M + 1, D);
    Eigen::RowVectorXd bias = p.emission.row(M);
    std::vector<Eigen::Matrix2d> a(M);
    Eigen::Matrix2d swap;
    swap << 0, 1, 1, 0;
    for (int m = 0; m < M; ++m) {
        const int src = perm[m];
        if (flip[m]) {
            w.row(m) = -p.emission.row(src);
            bias += p.emission.row(src);
            a[m] = swap * p.trans[src] * swap;
        } else {
            w.row(m) = p.emission.row(src);
            a[m] = p.trans[src];
        }
    }
    w.row(M) = bias;
    return model::FhmmParams(M, D, std::move(w), p.chol, std::move(a));
}

double frame_distance(const model::FhmmParams& truth,
                      const model::FhmmParams& cand) {
    double d = (truth.emission - cand.emission).squaredNorm();
    for (int m = 0; m < truth.num_chains; ++m) {
        d += (truth.trans[m] - cand.trans[m]).squaredNorm();
    }
    return d;
}

EvalReport score(const std::string& tag, const model::FhmmParams& params,
                 const Eigen::MatrixXd& theta_test,
                 const Eigen::MatrixXd& train_y, const Eigen::MatrixXd& test_y,
                 double seconds, bool flagged) {
    EvalReport r;
    r.algorithm = tag;
    r.train_ll = loglik_per_timestep(params, train_y);
    r.test_ll = loglik_per_timestep(params, test_y);
    r.mse = smoothing_mse(params, theta_test, test_y);
    r.seconds_used = seconds;
    r.budget_exhausted_before_first_iteration = flagged;
    return r;
}

Eigen::MatrixXd smf_marginals(const model::FhmmParams& params,
                              const Eigen::MatrixXd& y) {
    const int T = static_cast<int>(y.rows());
    const int M = params.num_chains;
    const auto state =
        smf::smf_e_step(params, y, smf::init_state(M, T));
    Eigen::MatrixXd theta(T, M);
    for (int m = 0; m < M; ++m) theta.col(m) = state.gamma[m].col(1);
    return theta;
}

}  // namespace

double loglik_per_timestep(const model::FhmmParams& params,
                           const Eigen::MatrixXd& y) {
    if (y.rows() < 1) throw std::invalid_argument("loglik_per_timestep: empty data");
    return model::exact_loglik(params, y) / static_cast<double>(y.rows());
}

Eigen::VectorXd smoothing_mse(const model::FhmmParams& params,
                              const Eigen::MatrixXd& theta,
                              const Eigen::MatrixXd& y) {
    if (theta.rows() != y.rows() || theta.cols() != params.num_chains ||
        y.cols() != params.obs_dim) {
        throw std::invalid_argument("smoothing_mse: shape mismatch");
    }
    const Eigen::MatrixXd yhat =
        model::smoothed_reconstruction(params.emission, theta);
    return (y - yhat).array().square().colwise().mean().transpose();
}

Eigen::MatrixXd amortized_marginals(const model::FhmmParams& params,
                                    const recog::MlpParams& nets,
                                    const recog::MlpSpec& spec,
                                    const Eigen::MatrixXd& y) {
    const int T = static_cast<int>(y.rows());
    const int M = params.num_chains;
    const int hw = spec.half_window();
    if (T < 2 * hw + 4) {
        throw std::invalid_argument("amortized_marginals: sequence too short");
    }
    Eigen::MatrixXd theta(T, M);
    for (int t = hw + 1; t <= T - 2 - hw; ++t) {
        theta.row(t) =
            recog::recog_forward(nets, spec, recog::window(y, t, spec.window_delta))
                .theta.transpose();
    }
    const Eigen::MatrixXd left =
        smf::boundary_posterior(params, y, nets, spec, smf::Side::Left);
    const Eigen::MatrixXd right =
        smf::boundary_posterior(params, y, nets, spec, smf::Side::Right);
    theta.topRows(hw + 1) = left;
    theta.bottomRows(hw + 1) = right;
    return theta;
}

Alignment align_chains(const model::FhmmParams& truth,
                       const model::FhmmParams& learned) {
    const int M = truth.num_chains;
    if (learned.num_chains != M || learned.obs_dim != truth.obs_dim) {
        throw std::invalid_argument("align_chains: shape mismatch");
    }
    if (M > 8) {
        throw std::invalid_argument(
            "align_chains: refusing M > 8 (M! * 2^M search space)");
    }
    std::vector<int> perm(M);
    std::iota(perm.begin(), perm.end(), 0);

    Alignment best{{}, {}, std::numeric_limits<double>::infinity(), learned};
    do {
        for (int mask = 0; mask < (1 << M); ++mask) {
            std::vector<bool> flip(M);
            for (int m = 0; m < M; ++m) flip[m] = (mask >> m) & 1;
            const model::FhmmParams cand = transform(learned, perm, flip);
            const double d = frame_distance(truth, cand);
            if (d < best.distance) {
                best.distance = d;
                best.permutation = perm;
                best.flipped = flip;
                best.aligned = cand;
            }
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

ComparisonResult budgeted_comparison(const Eigen::MatrixXd& train_y,
                                     const Eigen::MatrixXd& test_y,
                                     double budget_seconds,
                                     const svi::TrainConfig& config) {
    const int M = config.num_chains;
    const model::FhmmParams init =
        svi::default_init(M, train_y, config.seed);
    const recog::MlpSpec spec =
        config.net_spec(static_cast<int>(train_y.cols()));

    ComparisonResult out{
        EvalReport{}, EvalReport{}};

    if (budget_seconds <= 0.0) {
        const auto nets = recog::init_params(spec, config.seed);
        out.svi = score("svi", init, amortized_marginals(init, nets, spec, test_y),
                        train_y, test_y, 0.0, true);
        out.smf = score("smf", init, smf_marginals(init, test_y), train_y, test_y,
                        0.0, true);
        return out;
    }

    svi::TrainConfig cfg = config;
    cfg.budget_seconds = budget_seconds;
    cfg.iterations = std::numeric_limits<int>::max() / 2;
    const auto svi_res = svi::train(cfg, train_y);
    const bool svi_flag = svi_res.trace.empty();
    out.svi = score("svi", svi_res.params,
                    amortized_marginals(svi_res.params, svi_res.nets,
                                        svi_res.spec, test_y),
                    train_y, test_y,
                    svi_flag ? 0.0 : svi_res.trace.back().seconds, svi_flag);

    const auto smf_res = smf::smf_em_fit(
        init, train_y, std::numeric_limits<int>::max() / 2, budget_seconds);
    const bool smf_flag =
        smf_res.trace.empty() || smf_res.trace.front().seconds > budget_seconds;
    out.smf = score("smf", smf_res.params, smf_marginals(smf_res.params, test_y),
                    train_y, test_y,
                    smf_res.trace.empty() ? 0.0 : smf_res.trace.back().seconds,
                    smf_flag);
    return out;
}

}  // namespace fhmm::eval
