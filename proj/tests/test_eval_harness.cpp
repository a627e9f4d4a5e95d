#include <doctest.h>

#include <cmath>
#include <random>

#include "fhmm/eval_harness.hpp"
#include "fhmm/smf_baseline.hpp"

using namespace fhmm;
using namespace fhmm::eval;

namespace {

model::FhmmParams random_params(int M, int D, unsigned seed) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::MatrixXd w(M + 1, D);
    for (int i = 0; i <= M; ++i) {
        for (int j = 0; j < D; ++j) w(i, j) = u(gen);
    }
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(D, D);
    for (int i = 0; i < D; ++i) {
        for (int j = 0; j < i; ++j) l(i, j) = 0.3 * u(gen);
        l(i, i) = 0.5 + 0.4 * std::abs(u(gen));
    }
    std::vector<Eigen::Matrix2d> a(M);
    for (int m = 0; m < M; ++m) {
        const double p = 0.1 + 0.35 * (u(gen) + 1.0);
        const double q = 0.1 + 0.35 * (u(gen) + 1.0);
        a[m] << 1 - p, p, q, 1 - q;
    }
    return model::FhmmParams(M, D, std::move(w), prob::CholFactor(std::move(l)),
                             std::move(a));
}

// truth with chains permuted by perm and flipped per mask
model::FhmmParams scrambled(const model::FhmmParams& p,
                            const std::vector<int>& perm, unsigned mask) {
    const int M = p.num_chains;
    const int D = p.obs_dim;
    Eigen::MatrixXd w(M + 1, D);
    Eigen::RowVectorXd bias = p.emission.row(M);
    std::vector<Eigen::Matrix2d> a(M);
    Eigen::Matrix2d swap;
    swap << 0, 1, 1, 0;
    // row k of the scrambled model carries true chain perm[k]
    for (int k = 0; k < M; ++k) {
        const int src = perm[k];
        if ((mask >> k) & 1) {
            w.row(k) = -p.emission.row(src);
            bias += p.emission.row(src);
            a[k] = swap * p.trans[src] * swap;
        } else {
            w.row(k) = p.emission.row(src);
            a[k] = p.trans[src];
        }
    }
    w.row(M) = bias;
    return model::FhmmParams(M, D, std::move(w), p.chol, std::move(a));
}

}  // namespace

TEST_CASE("per-timestep log-likelihood") {
    SUBCASE("inert unit model scores the Gaussian cross-entropy") {
        Eigen::MatrixXd w = Eigen::MatrixXd::Zero(2, 1);
        Eigen::MatrixXd l = Eigen::MatrixXd::Identity(1, 1);
        Eigen::Matrix2d a;
        a << 0.6, 0.4, 0.4, 0.6;
        const model::FhmmParams p(1, 1, w, prob::CholFactor(l), {a});
        std::mt19937_64 gen(2);
        std::normal_distribution<double> n(0.0, 1.0);
        Eigen::MatrixXd y(200, 1);
        for (int t = 0; t < 200; ++t) y(t, 0) = n(gen);
        const double expect =
            -0.5 * std::log(2 * M_PI) - 0.5 * y.array().square().mean();
        CHECK(loglik_per_timestep(p, y) ==
              doctest::Approx(expect).epsilon(1e-10).scale(1.0));
    }

    SUBCASE("invariant under chain permutation") {
        const auto p = random_params(2, 2, 3);
        const auto q = scrambled(p, {1, 0}, 0);
        const Eigen::MatrixXd y = model::simulate(p, 40, 7).observations;
        CHECK(loglik_per_timestep(p, y) ==
              doctest::Approx(loglik_per_timestep(q, y)).epsilon(1e-10));
        const auto r = scrambled(p, {0, 1}, 2);  // relabel chain 1
        CHECK(loglik_per_timestep(p, y) ==
              doctest::Approx(loglik_per_timestep(r, y)).epsilon(1e-10));
    }
}

TEST_CASE("smoothing MSE") {
    const auto p = random_params(2, 2, 11);
    const auto sim = model::simulate(p, 50, 13);

    SUBCASE("one-hot posteriors on noiseless data score zero") {
        Eigen::MatrixXd theta(50, 2);
        Eigen::MatrixXd y(50, 2);
        for (int t = 0; t < 50; ++t) {
            Eigen::VectorXd shat(3);
            shat << sim.states(t, 0), sim.states(t, 1), 1.0;
            y.row(t) = (p.emission.transpose() * shat).transpose();
            theta(t, 0) = sim.states(t, 0);
            theta(t, 1) = sim.states(t, 1);
        }
        const auto mse = smoothing_mse(p, theta, y);
        CHECK(mse.maxCoeff() < 1e-20);
    }

    SUBCASE("constant half posterior equals variance around the mid-mixture mean") {
        const Eigen::MatrixXd theta = Eigen::MatrixXd::Constant(50, 2, 0.5);
        const Eigen::RowVectorXd mid =
            p.emission.row(2) + 0.5 * (p.emission.row(0) + p.emission.row(1));
        const auto mse = smoothing_mse(p, theta, sim.observations);
        for (int d = 0; d < 2; ++d) {
            const double direct =
                (sim.observations.col(d).array() - mid[d]).square().mean();
            CHECK(mse[d] == doctest::Approx(direct).epsilon(1e-10));
        }
    }

    SUBCASE("invariant under relabel transforms of params and marginals") {
        Eigen::MatrixXd theta(50, 2);
        std::mt19937_64 gen(5);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int t = 0; t < 50; ++t) {
            theta(t, 0) = u(gen);
            theta(t, 1) = u(gen);
        }
        const auto base = smoothing_mse(p, theta, sim.observations);
        const auto q = scrambled(p, {1, 0}, 1);  // swap chains, flip slot 0
        Eigen::MatrixXd theta_q(50, 2);
        theta_q.col(0) = Eigen::VectorXd::Ones(50) - theta.col(1);
        theta_q.col(1) = theta.col(0);
        const auto moved = smoothing_mse(q, theta_q, sim.observations);
        CHECK((base - moved).cwiseAbs().maxCoeff() < 1e-12);
    }

    SUBCASE("shape mismatch is an error") {
        CHECK_THROWS_AS(
            (void)smoothing_mse(p, Eigen::MatrixXd::Zero(50, 3), sim.observations),
            std::invalid_argument);
    }
}

TEST_CASE("chain alignment") {
    const auto truth = random_params(3, 2, 17);

    SUBCASE("identity when already aligned") {
        const auto a = align_chains(truth, truth);
        CHECK(a.distance == doctest::Approx(0.0).epsilon(1e-14));
        CHECK(a.permutation == std::vector<int>{0, 1, 2});
        CHECK(a.flipped == std::vector<bool>{false, false, false});
    }

    SUBCASE("constructed symmetry is undone exactly") {
        const auto mixed = scrambled(truth, {2, 0, 1}, 0b010);
        const auto a = align_chains(truth, mixed);
        CHECK(a.distance < 1e-20);
        CHECK((a.aligned.emission - truth.emission).cwiseAbs().maxCoeff() < 1e-12);
        for (int m = 0; m < 3; ++m) {
            CHECK((a.aligned.trans[m] - truth.trans[m]).cwiseAbs().maxCoeff() <
                  1e-12);
        }
        // alignment preserves the likelihood
        const Eigen::MatrixXd y = model::simulate(truth, 30, 19).observations;
        CHECK(model::exact_loglik(a.aligned, y) ==
              doctest::Approx(model::exact_loglik(mixed, y)).epsilon(1e-10));
    }

    SUBCASE("small perturbations stay small after alignment") {
        auto bumped = scrambled(truth, {1, 2, 0}, 0b101);
        bumped.emission.array() += 0.01;
        const auto a = align_chains(truth, bumped);
        CHECK(a.distance <= 0.01 * 0.01 * 4 * 2 * 4.0);
    }

    SUBCASE("large M is refused") {
        const auto big = random_params(9, 1, 23);
        CHECK_THROWS_AS((void)align_chains(big, big), std::invalid_argument);
    }
}

TEST_CASE("amortized marginals cover the whole sequence") {
    const auto p = random_params(2, 2, 29);
    const Eigen::MatrixXd y = model::simulate(p, 40, 31).observations;
    recog::MlpSpec spec;
    spec.window_delta = 4;
    spec.data_dim = 2;
    spec.num_chains = 2;
    spec.hidden = {5};
    const auto nets = recog::init_params(spec, 7);
    const auto theta = amortized_marginals(p, nets, spec, y);
    CHECK(theta.rows() == 40);
    CHECK(theta.cols() == 2);
    CHECK(theta.minCoeff() > 0.0);
    CHECK(theta.maxCoeff() < 1.0);
    // interior rows are exactly the net outputs
    const auto direct = recog::recog_forward(nets, spec, recog::window(y, 10, 4));
    CHECK((theta.row(10).transpose() - direct.theta).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("budgeted comparison") {
    const auto truth = random_params(2, 2, 37);
    const Eigen::MatrixXd train_y = model::simulate(truth, 400, 41).observations;
    const Eigen::MatrixXd test_y = model::simulate(truth, 200, 43).observations;
    svi::TrainConfig cfg;
    cfg.num_chains = 2;
    cfg.delta_t = 4;
    cfg.hidden = {8};
    cfg.seed = 11;

    SUBCASE("zero budget flags both arms and scores the initialization") {
        const auto res = budgeted_comparison(train_y, test_y, 0.0, cfg);
        CHECK(res.svi.budget_exhausted_before_first_iteration);
        CHECK(res.smf.budget_exhausted_before_first_iteration);
        CHECK(res.svi.train_ll == res.smf.train_ll);  // same init parameters
        CHECK(std::isfinite(res.svi.test_ll));
        CHECK(res.svi.mse.minCoeff() >= 0.0);
        CHECK(res.smf.mse.minCoeff() >= 0.0);
    }

    SUBCASE("a real budget trains both arms past the initialization") {
        const auto base = budgeted_comparison(train_y, test_y, 0.0, cfg);
        const auto res = budgeted_comparison(train_y, test_y, 3.0, cfg);
        CHECK(!res.svi.budget_exhausted_before_first_iteration);
        CHECK(!res.smf.budget_exhausted_before_first_iteration);
        CHECK(res.svi.train_ll > base.svi.train_ll);
        CHECK(res.smf.train_ll > base.smf.train_ll);
        CHECK(res.svi.seconds_used <= 3.5);
        CHECK(std::isfinite(res.svi.mse.sum()));
        CHECK(std::isfinite(res.smf.mse.sum()));
    }
}
