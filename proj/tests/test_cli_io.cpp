#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "fhmm/cli_io.hpp"
#include "fhmm/smf_baseline.hpp"

using namespace fhmm;
using namespace fhmm::cli;

namespace {

std::filesystem::path tmp_dir() {
    static const auto dir = [] {
        auto d = std::filesystem::temp_directory_path() / "fhmm_cli_tests";
        std::filesystem::create_directories(d);
        return d;
    }();
    return dir;
}

std::string tmp_file(const std::string& name) {
    return (tmp_dir() / name).string();
}

void write_text(const std::string& path, const std::string& body) {
    std::ofstream out(path);
    out << body;
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv{"fhmm"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli::run(static_cast<int>(argv.size()), argv.data());
}

model::FhmmParams small_params(int M, int D, unsigned seed) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::MatrixXd w(M + 1, D);
    for (int i = 0; i <= M; ++i) {
        for (int j = 0; j < D; ++j) w(i, j) = u(gen);
    }
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(D, D);
    for (int i = 0; i < D; ++i) {
        for (int j = 0; j < i; ++j) l(i, j) = 0.2 * u(gen);
        l(i, i) = 0.6 + 0.3 * std::abs(u(gen));
    }
    std::vector<Eigen::Matrix2d> a(M);
    for (int m = 0; m < M; ++m) {
        a[m] << 0.8, 0.2, 0.3, 0.7;
    }
    return model::FhmmParams(M, D, std::move(w), prob::CholFactor(std::move(l)),
                             std::move(a));
}

}  // namespace

TEST_CASE("decimal formatting round-trips bits") {
    std::mt19937_64 gen(1);
    std::uniform_real_distribution<double> u(-1e6, 1e6);
    for (int i = 0; i < 2000; ++i) {
        double v = u(gen) * std::pow(10.0, static_cast<int>(gen() % 41) - 20);
        const double back = std::strtod(format_double(v).c_str(), nullptr);
        CHECK(std::memcmp(&v, &back, sizeof v) == 0);
    }
}

TEST_CASE("CSV loading") {
    SUBCASE("hand-written file loads exactly") {
        const auto path = tmp_file("hand.csv");
        write_text(path, "1,2\n3.5,-4\n5e-1,6\n");
        const auto data = load_csv(path);
        REQUIRE(data.values.rows() == 3);
        REQUIRE(data.values.cols() == 2);
        CHECK(data.values(0, 0) == 1.0);
        CHECK(data.values(1, 1) == -4.0);
        CHECK(data.values(2, 0) == 0.5);
        CHECK(!data.standardization.active);
    }

    SUBCASE("row and column slicing matches index arithmetic") {
        const auto path = tmp_file("slice.csv");
        std::string body;
        for (int t = 0; t < 50; ++t) {
            body += std::to_string(t * 10) + "," + std::to_string(t * 10 + 1) +
                    "," + std::to_string(t * 10 + 2) + "\n";
        }
        write_text(path, body);
        CsvOptions opts;
        opts.row_begin = 5;
        opts.row_end = 20;
        opts.columns = {1, 2};
        const auto data = load_csv(path, opts);
        REQUIRE(data.values.rows() == 15);
        REQUIRE(data.values.cols() == 2);
        for (int k = 0; k < 15; ++k) {
            CHECK(data.values(k, 0) == (5 + k) * 10 + 1);
            CHECK(data.values(k, 1) == (5 + k) * 10 + 2);
        }
    }

    SUBCASE("standardization is recorded and invertible") {
        const auto path = tmp_file("std.csv");
        write_text(path, "1,10\n2,20\n3,30\n4,40\n");
        CsvOptions opts;
        opts.standardize = true;
        const auto data = load_csv(path, opts);
        CHECK(data.standardization.active);
        CHECK(data.values.colwise().mean().cwiseAbs().maxCoeff() < 1e-14);
        CHECK(data.standardization.mean[0] == doctest::Approx(2.5));
        CHECK(data.standardization.mean[1] == doctest::Approx(25.0));
    }

    SUBCASE("NaN cells are parse errors naming the line") {
        const auto path = tmp_file("nan.csv");
        write_text(path, "1,2\n3,NaN\n5,6\n");
        try {
            (void)load_csv(path);
            FAIL("expected an error");
        } catch (const std::runtime_error& e) {
            CHECK(std::string(e.what()).find("line 2") != std::string::npos);
        }
    }

    SUBCASE("ragged rows, empty files, bad ranges are errors") {
        const auto ragged = tmp_file("ragged.csv");
        write_text(ragged, "1,2\n3\n");
        CHECK_THROWS_AS((void)load_csv(ragged), std::runtime_error);
        const auto empty = tmp_file("empty.csv");
        write_text(empty, "");
        CHECK_THROWS_AS((void)load_csv(empty), std::runtime_error);
        const auto ok = tmp_file("ok.csv");
        write_text(ok, "1,2\n3,4\n");
        CsvOptions bad;
        bad.row_begin = 1;
        bad.row_end = 5;
        CHECK_THROWS_AS((void)load_csv(ok, bad), std::runtime_error);
        CsvOptions badcol;
        badcol.columns = {7};
        CHECK_THROWS_AS((void)load_csv(ok, badcol), std::runtime_error);
        CHECK_THROWS_AS((void)load_csv(tmp_file("missing.csv")), std::runtime_error);
    }

    SUBCASE("save and load invert each other") {
        Eigen::MatrixXd m(3, 2);
        m << 0.1, -2.25, 1e-17, 3.0, -0.0, 7.5;
        const auto path = tmp_file("roundtrip.csv");
        save_csv(path, m);
        const auto back = load_csv(path);
        CHECK((back.values - m).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("model file persistence") {
    SUBCASE("round-trip is bit exact, with networks") {
        ModelFile mf(small_params(2, 3, 5));
        mf.has_nets = true;
        mf.spec.window_delta = 4;
        mf.spec.data_dim = 3;
        mf.spec.num_chains = 2;
        mf.spec.hidden = {7, 4};
        mf.spec.activation = recog::Activation::Relu;
        mf.spec.sharing = recog::Sharing::SharedHidden;
        mf.nets = recog::init_params(mf.spec, 11);
        mf.seed = 42;
        mf.iterations = 1234;
        mf.config_hash = "deadbeef";
        const auto path = tmp_file("model1.txt");
        save_model(path, mf);
        const auto back = load_model(path);
        CHECK((back.params.emission - mf.params.emission).cwiseAbs().maxCoeff() ==
              0.0);
        CHECK((back.params.chol.matrix() - mf.params.chol.matrix())
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
        for (int m = 0; m < 2; ++m) {
            CHECK((back.params.trans[m] - mf.params.trans[m]).cwiseAbs().maxCoeff() ==
                  0.0);
        }
        CHECK(back.has_nets);
        CHECK(back.spec.hidden == mf.spec.hidden);
        CHECK(back.spec.activation == mf.spec.activation);
        CHECK(back.spec.sharing == mf.spec.sharing);
        CHECK(back.nets.w == mf.nets.w);
        CHECK(back.seed == 42);
        CHECK(back.iterations == 1234);
        CHECK(back.config_hash == "deadbeef");

        // a second save produces byte-identical output
        const auto path2 = tmp_file("model1b.txt");
        save_model(path2, back);
        CHECK(read_bytes(path) == read_bytes(path2));
    }

    SUBCASE("round-trip without networks, with standardization") {
        ModelFile mf(small_params(1, 2, 9));
        mf.standardization.active = true;
        mf.standardization.mean = Eigen::Vector2d(1.25, -0.5);
        mf.standardization.scale = Eigen::Vector2d(2.0, 0.125);
        const auto path = tmp_file("model2.txt");
        save_model(path, mf);
        const auto back = load_model(path);
        CHECK(!back.has_nets);
        CHECK(back.standardization.active);
        CHECK(back.standardization.mean == mf.standardization.mean);
        CHECK(back.standardization.scale == mf.standardization.scale);
    }

    SUBCASE("version mismatch is rejected") {
        const auto path = tmp_file("model3.txt");
        write_text(path, "fhmm-model/99\nchains 1\n");
        try {
            (void)load_model(path);
            FAIL("expected an error");
        } catch (const std::runtime_error& e) {
            CHECK(std::string(e.what()).find("version") != std::string::npos);
        }
    }
}

TEST_CASE("trace and report files") {
    SUBCASE("trace omits wall-clock unless asked") {
        svi::TrainTrace trace{{100, -1.5, 0.25, 0.125, 3.5},
                              {200, -1.25, 0.5, 0.0625, 7.25}};
        const auto path = tmp_file("trace.txt");
        save_trace(path, trace);
        const std::string body = read_bytes(path);
        CHECK(body.find("seconds") == std::string::npos);
        CHECK(body ==
              "iter 100 elbo -1.5 grad_model 0.25 grad_net 0.125\n"
              "iter 200 elbo -1.25 grad_model 0.5 grad_net 0.0625\n");
        save_trace(path, trace, true);
        CHECK(read_bytes(path).find("seconds 3.5") != std::string::npos);
    }

    SUBCASE("reports round-trip bit exactly") {
        eval::EvalReport a;
        a.algorithm = "svi";
        a.train_ll = -2.3201;
        a.test_ll = -2.3322;
        a.mse = Eigen::Vector2d(0.082, 0.145);
        a.seconds_used = 119.25;
        a.budget_exhausted_before_first_iteration = false;
        eval::EvalReport b = a;
        b.algorithm = "smf";
        b.budget_exhausted_before_first_iteration = true;
        const auto path = tmp_file("report.txt");
        save_report(path, {a, b});
        const auto back = load_report(path);
        REQUIRE(back.size() == 2);
        CHECK(back[0].algorithm == "svi");
        CHECK(back[0].train_ll == a.train_ll);
        CHECK(back[0].test_ll == a.test_ll);
        CHECK(back[0].mse == a.mse);
        CHECK(back[1].budget_exhausted_before_first_iteration);
        const auto path2 = tmp_file("report2.txt");
        save_report(path2, back);
        CHECK(read_bytes(path) == read_bytes(path2));
    }
}

TEST_CASE("command-line round trip") {
    const auto data = tmp_file("cli_data.csv");
    const auto truth_model = tmp_file("cli_truth.txt");

    SUBCASE("simulate, train, eval, infer") {
        CHECK(run_cli({"simulate", "--length", "300", "--chains", "1", "--dims",
                       "2", "--seed", "3", "--out", data, "--model-out",
                       truth_model}) == 0);
        CHECK(std::filesystem::exists(data));
        CHECK(std::filesystem::exists(truth_model));

        const auto model_out = tmp_file("cli_model.txt");
        CHECK(run_cli({"train", "--data", data, "--model-out", model_out,
                       "--algo", "svi", "--chains", "1", "--window", "2",
                       "--hidden", "4", "--iterations", "60", "--seed", "7",
                       "--threads", "2"}) == 0);
        CHECK(std::filesystem::exists(model_out));
        CHECK(std::filesystem::exists(model_out + ".trace"));

        // identical seed and config give a byte-identical model file
        const auto model_again = tmp_file("cli_model_again.txt");
        CHECK(run_cli({"train", "--data", data, "--model-out", model_again,
                       "--algo", "svi", "--chains", "1", "--window", "2",
                       "--hidden", "4", "--iterations", "60", "--seed", "7",
                       "--threads", "1"}) == 0);
        CHECK(read_bytes(model_out) == read_bytes(model_again));

        const auto report = tmp_file("cli_report.txt");
        CHECK(run_cli({"eval", "--data", data, "--model-in", model_out, "--out",
                       report}) == 0);
        const auto reports = load_report(report);
        REQUIRE(reports.size() == 1);
        CHECK(std::isfinite(reports[0].test_ll));
        CHECK(reports[0].mse.minCoeff() >= 0.0);

        // inference from the ground-truth model: for one chain the mean-field
        // posterior is the exact smoothed posterior
        const auto marg = tmp_file("cli_marginals.csv");
        CHECK(run_cli({"infer", "--data", data, "--model-in", truth_model,
                       "--out", marg}) == 0);
        const auto theta = load_csv(marg).values;
        REQUIRE(theta.rows() == 300);
        const auto mf = load_model(truth_model);
        const auto y = load_csv(data).values;
        const auto exact = model::exact_smoothed_marginals(mf.params, y);
        CHECK((theta - exact).cwiseAbs().maxCoeff() < 1e-6);
    }

    SUBCASE("smf training and compare") {
        CHECK(run_cli({"simulate", "--length", "200", "--chains", "1", "--dims",
                       "1", "--seed", "5", "--out", data}) == 0);
        const auto model_out = tmp_file("cli_smf_model.txt");
        CHECK(run_cli({"train", "--data", data, "--model-out", model_out,
                       "--algo", "smf", "--chains", "1", "--iterations", "10",
                       "--seed", "2"}) == 0);
        const auto mf = load_model(model_out);
        CHECK(!mf.has_nets);
        CHECK(mf.iterations == 10);

        const auto test_data = tmp_file("cli_test.csv");
        CHECK(run_cli({"simulate", "--length", "120", "--chains", "1", "--dims",
                       "1", "--seed", "6", "--out", test_data}) == 0);
        const auto report = tmp_file("cli_compare.txt");
        CHECK(run_cli({"compare", "--data", data, "--test-data", test_data,
                       "--out", report, "--chains", "1", "--window", "2",
                       "--hidden", "4", "--budget-seconds", "1.0", "--seed",
                       "4"}) == 0);
        const auto reports = load_report(report);
        REQUIRE(reports.size() == 2);
        CHECK(reports[0].algorithm == "svi");
        CHECK(reports[1].algorithm == "smf");
        CHECK(std::isfinite(reports[0].test_ll));
        CHECK(std::isfinite(reports[1].test_ll));
    }

    SUBCASE("config file drives training and unknown keys fail") {
        CHECK(run_cli({"simulate", "--length", "120", "--chains", "1", "--dims",
                       "1", "--seed", "9", "--out", data}) == 0);
        const auto cfg = tmp_file("train.cfg");
        const auto model_out = tmp_file("cli_cfg_model.txt");
        write_text(cfg, "data=" + data + "\nmodel-out=" + model_out +
                            "\nchains=1\nwindow=2\nhidden=4\niterations=20\n");
        CHECK(run_cli({"train", "--config", cfg}) == 0);
        CHECK(std::filesystem::exists(model_out));

        const auto bad = tmp_file("bad.cfg");
        write_text(bad, "data=" + data + "\nmodel-out=" + model_out +
                            "\nchainz=1\n");
        CHECK(run_cli({"train", "--config", bad}) != 0);
    }

    SUBCASE("bad inputs exit nonzero") {
        CHECK(run_cli({"train", "--data", tmp_file("nonexistent.csv"),
                       "--model-out", tmp_file("x.txt")}) != 0);
        CHECK(run_cli({"definitely-not-a-mode"}) != 0);
    }
}
