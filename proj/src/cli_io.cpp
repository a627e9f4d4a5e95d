#include "fhmm/cli_io.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <CLI11.hpp>

#include "fhmm/smf_baseline.hpp"

namespace fhmm::cli {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open file: " + path);
    return in;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) fail("cannot write file: " + path);
    return out;
}

double parse_number(const std::string& cell, const std::string& path, int line) {
    const char* begin = cell.c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    while (end && *end && std::isspace(static_cast<unsigned char>(*end))) ++end;
    if (end == begin || (end && *end != '\0') || !std::isfinite(v)) {
        fail(path + ": line " + std::to_string(line) + ": non-numeric cell '" +
             cell + "' (missing data is not supported)");
    }
    return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string activation_name(recog::Activation a) {
    switch (a) {
        case recog::Activation::Tanh: return "tanh";
        case recog::Activation::Relu: return "relu";
        case recog::Activation::Sigmoid: return "sigmoid";
    }
    return "tanh";
}

recog::Activation activation_from(const std::string& s) {
    if (s == "tanh") return recog::Activation::Tanh;
    if (s == "relu") return recog::Activation::Relu;
    if (s == "sigmoid") return recog::Activation::Sigmoid;
    fail("unknown activation: " + s);
}

std::string sharing_name(recog::Sharing s) {
    return s == recog::Sharing::PerChain ? "per_chain" : "shared";
}

recog::Sharing sharing_from(const std::string& s) {
    if (s == "per_chain") return recog::Sharing::PerChain;
    if (s == "shared") return recog::Sharing::SharedHidden;
    fail("unknown sharing mode: " + s);
}

void write_vector(std::ofstream& out, const Eigen::VectorXd& v) {
    for (int i = 0; i < v.size(); ++i) {
        out << (i ? " " : "") << format_double(v[i]);
    }
    out << "\n";
}

class LineReader {
public:
    LineReader(std::ifstream& in, std::string path)
        : in_(in), path_(std::move(path)) {}

    std::string next() {
        std::string line;
        if (!std::getline(in_, line)) {
            fail(path_ + ": unexpected end of file at line " +
                 std::to_string(line_no_ + 1));
        }
        ++line_no_;
        return line;
    }

    // "key value..." line; verifies the key and returns the remainder
    std::string expect(const std::string& key) {
        const std::string line = next();
        if (line.rfind(key, 0) != 0 ||
            (line.size() > key.size() && line[key.size()] != ' ')) {
            fail(path_ + ": line " + std::to_string(line_no_) + ": expected '" +
                 key + "', got '" + line + "'");
        }
        return line.size() > key.size() ? line.substr(key.size() + 1) : "";
    }

    std::vector<double> numbers(const std::string& text) {
        std::vector<double> out;
        std::istringstream ss(text);
        std::string tok;
        while (ss >> tok) out.push_back(parse_number(tok, path_, line_no_));
        return out;
    }

private:
    std::ifstream& in_;
    std::string path_;
    int line_no_ = 0;
};

Eigen::MatrixXd standardize_apply(const Eigen::MatrixXd& y,
                                  const Standardization& st) {
    if (!st.active) return y;
    Eigen::MatrixXd z = y;
    for (int d = 0; d < y.cols(); ++d) {
        z.col(d) = (y.col(d).array() - st.mean[d]) / st.scale[d];
    }
    return z;
}

double log_scale_sum(const Standardization& st) {
    return st.active ? st.scale.array().log().sum() : 0.0;
}

}  // namespace

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

CsvData load_csv(const std::string& path, const CsvOptions& options) {
    std::ifstream in = open_in(path);
    std::vector<std::vector<double>> rows;
    std::string line;
    int line_no = 0;
    std::size_t width = 0;
    while (std::getline(in, line)) {
        ++line_no;
        bool blank = true;
        for (char c : line) blank = blank && std::isspace(static_cast<unsigned char>(c));
        if (blank) continue;
        std::vector<double> row;
        for (const std::string& cell : split(line, ',')) {
            row.push_back(parse_number(cell, path, line_no));
        }
        if (rows.empty()) {
            width = row.size();
        } else if (row.size() != width) {
            fail(path + ": line " + std::to_string(line_no) + ": expected " +
                 std::to_string(width) + " columns, got " +
                 std::to_string(row.size()));
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) fail(path + ": line 1: empty file");

    const long total = static_cast<long>(rows.size());
    const long begin = options.row_begin;
    const long end = options.row_end < 0 ? total : options.row_end;
    if (begin < 0 || begin >= end || end > total) {
        fail(path + ": row range [" + std::to_string(begin) + ", " +
             std::to_string(end) + ") invalid for " + std::to_string(total) +
             " rows");
    }
    std::vector<int> cols = options.columns;
    if (cols.empty()) {
        for (std::size_t d = 0; d < width; ++d) cols.push_back(static_cast<int>(d));
    }
    for (int c : cols) {
        if (c < 0 || c >= static_cast<int>(width)) {
            fail(path + ": column index " + std::to_string(c) +
                 " out of range for " + std::to_string(width) + " columns");
        }
    }

    CsvData data;
    data.values.resize(end - begin, static_cast<int>(cols.size()));
    for (long t = begin; t < end; ++t) {
        for (std::size_t j = 0; j < cols.size(); ++j) {
            data.values(t - begin, static_cast<int>(j)) = rows[t][cols[j]];
        }
    }
    if (options.standardize) {
        const int D = static_cast<int>(data.values.cols());
        data.standardization.active = true;
        data.standardization.mean = data.values.colwise().mean();
        data.standardization.scale.resize(D);
        for (int d = 0; d < D; ++d) {
            const double var =
                (data.values.col(d).array() - data.standardization.mean[d])
                    .square()
                    .mean();
            data.standardization.scale[d] = std::fmax(std::sqrt(var), 1e-12);
            data.values.col(d) =
                (data.values.col(d).array() - data.standardization.mean[d]) /
                data.standardization.scale[d];
        }
    }
    return data;
}

void save_csv(const std::string& path, const Eigen::MatrixXd& values) {
    std::ofstream out = open_out(path);
    for (int t = 0; t < values.rows(); ++t) {
        for (int d = 0; d < values.cols(); ++d) {
            out << (d ? "," : "") << format_double(values(t, d));
        }
        out << "\n";
    }
}

void save_model(const std::string& path, const ModelFile& mf) {
    std::ofstream out = open_out(path);
    const int M = mf.params.num_chains;
    const int D = mf.params.obs_dim;
    out << kModelVersion << "\n";
    out << "chains " << M << "\n";
    out << "obs_dim " << D << "\n";
    out << "seed " << mf.seed << "\n";
    out << "iterations " << mf.iterations << "\n";
    out << "config_hash " << (mf.config_hash.empty() ? "-" : mf.config_hash)
        << "\n";
    out << "standardize " << (mf.standardization.active ? 1 : 0) << "\n";
    if (mf.standardization.active) {
        out << "mean ";
        write_vector(out, mf.standardization.mean);
        out << "scale ";
        write_vector(out, mf.standardization.scale);
    }
    out << "W\n";
    for (int i = 0; i <= M; ++i) {
        write_vector(out, mf.params.emission.row(i).transpose());
    }
    out << "L\n";
    for (int i = 0; i < D; ++i) {
        write_vector(out, mf.params.chol.matrix().row(i).head(i + 1).transpose());
    }
    out << "A\n";
    for (int m = 0; m < M; ++m) {
        Eigen::VectorXd flat(4);
        flat << mf.params.trans[m](0, 0), mf.params.trans[m](0, 1),
            mf.params.trans[m](1, 0), mf.params.trans[m](1, 1);
        write_vector(out, flat);
    }
    out << "nets " << (mf.has_nets ? 1 : 0) << "\n";
    if (mf.has_nets) {
        out << "window_delta " << mf.spec.window_delta << "\n";
        out << "activation " << activation_name(mf.spec.activation) << "\n";
        out << "sharing " << sharing_name(mf.spec.sharing) << "\n";
        out << "hidden";
        for (int h : mf.spec.hidden) out << " " << h;
        out << "\n";
        out << "weights " << mf.spec.num_params() << "\n";
        for (std::size_t i = 0; i < mf.nets.w.size(); ++i) {
            out << format_double(mf.nets.w[i])
                << ((i + 1) % 8 == 0 || i + 1 == mf.nets.w.size() ? "\n" : " ");
        }
    }
}

ModelFile load_model(const std::string& path) {
    std::ifstream in = open_in(path);
    LineReader r(in, path);
    const std::string version = r.next();
    if (version != kModelVersion) {
        fail(path + ": unsupported model version '" + version + "' (expected " +
             kModelVersion + ")");
    }
    const int M = std::stoi(r.expect("chains"));
    const int D = std::stoi(r.expect("obs_dim"));
    const std::uint64_t seed = std::stoull(r.expect("seed"));
    const int iterations = std::stoi(r.expect("iterations"));
    std::string hash = r.expect("config_hash");
    if (hash == "-") hash.clear();
    const int standardized = std::stoi(r.expect("standardize"));
    Standardization st;
    if (standardized) {
        st.active = true;
        const auto mean = r.numbers(r.expect("mean"));
        const auto scale = r.numbers(r.expect("scale"));
        if (static_cast<int>(mean.size()) != D || static_cast<int>(scale.size()) != D) {
            fail(path + ": standardization vectors must have " + std::to_string(D) +
                 " entries");
        }
        st.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), D);
        st.scale = Eigen::Map<const Eigen::VectorXd>(scale.data(), D);
    }
    r.expect("W");
    Eigen::MatrixXd w(M + 1, D);
    for (int i = 0; i <= M; ++i) {
        const auto vals = r.numbers(r.next());
        if (static_cast<int>(vals.size()) != D) fail(path + ": bad W row length");
        for (int j = 0; j < D; ++j) w(i, j) = vals[j];
    }
    r.expect("L");
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(D, D);
    for (int i = 0; i < D; ++i) {
        const auto vals = r.numbers(r.next());
        if (static_cast<int>(vals.size()) != i + 1) fail(path + ": bad L row length");
        for (int j = 0; j <= i; ++j) l(i, j) = vals[j];
    }
    r.expect("A");
    std::vector<Eigen::Matrix2d> a(M);
    for (int m = 0; m < M; ++m) {
        const auto vals = r.numbers(r.next());
        if (vals.size() != 4) fail(path + ": bad A row length");
        a[m] << vals[0], vals[1], vals[2], vals[3];
    }
    ModelFile mf(model::FhmmParams(M, D, std::move(w), prob::CholFactor(std::move(l)),
                                   std::move(a)));
    mf.seed = seed;
    mf.iterations = iterations;
    mf.config_hash = std::move(hash);
    mf.standardization = std::move(st);
    const int has_nets = std::stoi(r.expect("nets"));
    if (has_nets) {
        mf.has_nets = true;
        mf.spec.window_delta = std::stoi(r.expect("window_delta"));
        mf.spec.data_dim = D;
        mf.spec.num_chains = M;
        mf.spec.activation = activation_from(r.expect("activation"));
        mf.spec.sharing = sharing_from(r.expect("sharing"));
        mf.spec.hidden.clear();
        for (double h : r.numbers(r.expect("hidden"))) {
            mf.spec.hidden.push_back(static_cast<int>(h));
        }
        mf.spec.validate();
        const int count = std::stoi(r.expect("weights"));
        if (count != mf.spec.num_params()) {
            fail(path + ": weight count does not match the network shape");
        }
        mf.nets.w.reserve(count);
        while (static_cast<int>(mf.nets.w.size()) < count) {
            for (double v : r.numbers(r.next())) mf.nets.w.push_back(v);
        }
        if (static_cast<int>(mf.nets.w.size()) != count) {
            fail(path + ": too many network weights");
        }
    }
    return mf;
}

void save_trace(const std::string& path, const svi::TrainTrace& trace,
                bool include_timing) {
    std::ofstream out = open_out(path);
    for (const auto& rec : trace) {
        out << "iter " << rec.iteration << " elbo " << format_double(rec.elbo)
            << " grad_model " << format_double(rec.grad_model_norm)
            << " grad_net " << format_double(rec.grad_net_norm);
        if (include_timing) out << " seconds " << format_double(rec.seconds);
        out << "\n";
    }
}

void save_report(const std::string& path,
                 const std::vector<eval::EvalReport>& reports) {
    std::ofstream out = open_out(path);
    for (const auto& r : reports) {
        out << "algorithm " << r.algorithm << "\n";
        out << "train_ll " << format_double(r.train_ll) << "\n";
        out << "test_ll " << format_double(r.test_ll) << "\n";
        out << "mse ";
        write_vector(out, r.mse);
        out << "seconds " << format_double(r.seconds_used) << "\n";
        out << "budget_flag " << (r.budget_exhausted_before_first_iteration ? 1 : 0)
            << "\n";
        out << "end\n";
    }
}

std::vector<eval::EvalReport> load_report(const std::string& path) {
    std::ifstream in = open_in(path);
    LineReader r(in, path);
    std::vector<eval::EvalReport> out;
    std::string line;
    while (std::getline(in, line)) {
        eval::EvalReport rep;
        if (line.rfind("algorithm ", 0) != 0) fail(path + ": expected algorithm line");
        rep.algorithm = line.substr(10);
        rep.train_ll = r.numbers(r.expect("train_ll"))[0];
        rep.test_ll = r.numbers(r.expect("test_ll"))[0];
        const auto mse = r.numbers(r.expect("mse"));
        rep.mse = Eigen::Map<const Eigen::VectorXd>(mse.data(),
                                                    static_cast<long>(mse.size()));
        rep.seconds_used = r.numbers(r.expect("seconds"))[0];
        rep.budget_exhausted_before_first_iteration =
            std::stoi(r.expect("budget_flag")) != 0;
        r.expect("end");
        out.push_back(std::move(rep));
    }
    return out;
}

model::FhmmParams simulation_truth(int M, int D) {
    Eigen::MatrixXd w(M + 1, D);
    const double pi = std::acos(-1.0);
    for (int m = 0; m < M; ++m) {
        const double amp = 1.5 * (0.7 + 0.3 * (m + 1.0) / M);
        // Spread the chains over distinct directions so no two rows are
        // close to (anti-)parallel: collinear rows would make the
        // single-chain-on configurations nearly indistinguishable.
        const double phi = pi * (m + 0.25) / M;
        for (int d = 0; d < D; ++d) {
            w(m, d) = amp * (d % 2 == 0 ? std::cos(phi) : std::sin(phi));
        }
    }
    w.row(M).setConstant(0.3);
    Eigen::MatrixXd l = 0.5 * Eigen::MatrixXd::Identity(D, D);
    std::vector<Eigen::Matrix2d> a(M);
    for (int m = 0; m < M; ++m) {
        const double p = 0.10 + 0.02 * m;
        const double q = 0.15 + 0.02 * m;
        a[m] << 1 - p, p, q, 1 - q;
    }
    return model::FhmmParams(M, D, std::move(w), prob::CholFactor(std::move(l)),
                             std::move(a));
}

namespace {

struct CsvFlags {
    std::string columns;
    std::string rows;
    bool standardize = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--columns", columns,
                        "comma-separated 1-based columns to keep");
        cmd->add_option("--rows", rows, "1-based inclusive row range BEGIN:END");
        cmd->add_flag("--standardize", standardize,
                      "z-score each column; the transform is stored with the model");
    }

    CsvOptions options() const {
        CsvOptions o;
        if (!columns.empty()) {
            for (const std::string& tok : split(columns, ',')) {
                const int c = std::stoi(tok);
                if (c < 1) fail("--columns indices are 1-based");
                o.columns.push_back(c - 1);
            }
        }
        if (!rows.empty()) {
            const auto parts = split(rows, ':');
            if (parts.size() != 2) fail("--rows expects BEGIN:END");
            o.row_begin = std::stol(parts[0]) - 1;
            o.row_end = std::stol(parts[1]);
        }
        o.standardize = standardize;
        return o;
    }
};

struct TrainFlags {
    svi::TrainConfig cfg;
    std::string hidden = "30";
    std::string activation = "tanh";
    std::string sharing = "per_chain";
    double budget_seconds = 0.0;

    void attach(CLI::App* cmd, bool with_algo_knobs = true) {
        cmd->add_option("--chains", cfg.num_chains, "number of latent chains");
        cmd->add_option("--window", cfg.delta_t,
                        "window delta (window covers delta+1 steps)");
        cmd->add_option("--seed", cfg.seed, "random seed");
        cmd->add_option("--threads", cfg.threads, "worker threads (0 = hardware)");
        cmd->add_option("--budget-seconds", budget_seconds,
                        "wall-clock budget (0 = unlimited)");
        if (!with_algo_knobs) return;
        cmd->add_option("--iterations", cfg.iterations, "minibatch steps");
        cmd->add_option("--minibatch", cfg.n_minibatch, "subchains per step");
        cmd->add_option("--learning-rate", cfg.learning_rate, "Rmsprop step size");
        cmd->add_option("--decay", cfg.rmsprop_decay, "Rmsprop decay");
        cmd->add_option("--eps", cfg.rmsprop_eps, "Rmsprop epsilon");
        cmd->add_option("--log-every", cfg.log_every, "trace cadence");
        cmd->add_option("--hidden", hidden, "comma-separated hidden layer sizes");
        cmd->add_option("--activation", activation, "tanh | relu | sigmoid");
        cmd->add_option("--sharing", sharing, "per_chain | shared");
    }

    svi::TrainConfig config() const {
        svi::TrainConfig c = cfg;
        c.hidden.clear();
        for (const std::string& tok : split(hidden, ',')) {
            c.hidden.push_back(std::stoi(tok));
        }
        c.activation = activation_from(activation);
        c.sharing = sharing_from(sharing);
        if (c.threads <= 0) {
            c.threads = std::max(1u, std::thread::hardware_concurrency());
        }
        return c;
    }

    std::string hash_text() const {
        std::ostringstream ss;
        ss << cfg.num_chains << '|' << cfg.delta_t << '|' << cfg.n_minibatch << '|'
           << cfg.iterations << '|' << format_double(cfg.learning_rate) << '|'
           << format_double(cfg.rmsprop_decay) << '|'
           << format_double(cfg.rmsprop_eps) << '|' << cfg.seed << '|' << hidden
           << '|' << activation << '|' << sharing;
        return ss.str();
    }
};

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

// Flat key=value config support: entries become --key=value tokens injected
// right after the subcommand, so explicit command-line flags override them
// (options use a take-last policy) and unknown keys fail like unknown flags.
std::vector<std::string> expand_config(std::vector<std::string> args) {
    std::string cfg_path;
    for (auto it = args.begin(); it != args.end();) {
        if (*it == "--config") {
            if (std::next(it) == args.end()) fail("--config expects a file path");
            cfg_path = *std::next(it);
            it = args.erase(it, std::next(it, 2));
        } else if (it->rfind("--config=", 0) == 0) {
            cfg_path = it->substr(9);
            it = args.erase(it);
        } else {
            ++it;
        }
    }
    if (cfg_path.empty()) return args;
    if (args.empty() || args.front().rfind("-", 0) == 0) {
        fail("--config requires a subcommand");
    }
    std::ifstream in = open_in(cfg_path);
    std::vector<std::string> inject;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string body = trim(line);
        if (body.empty() || body[0] == '#') continue;
        const auto pos = body.find('=');
        if (pos == std::string::npos || pos == 0) {
            fail(cfg_path + ": line " + std::to_string(line_no) +
                 ": expected key=value");
        }
        std::string key = trim(body.substr(0, pos));
        std::string val = trim(body.substr(pos + 1));
        if (val.size() >= 2 && ((val.front() == '"' && val.back() == '"') ||
                                (val.front() == '\'' && val.back() == '\''))) {
            val = val.substr(1, val.size() - 2);
        }
        inject.push_back("--" + key + "=" + val);
    }
    args.insert(args.begin() + 1, inject.begin(), inject.end());
    return args;
}

Eigen::MatrixXd model_marginals(const ModelFile& mf, const Eigen::MatrixXd& z) {
    if (mf.has_nets) {
        return eval::amortized_marginals(mf.params, mf.nets, mf.spec, z);
    }
    const auto state = smf::smf_e_step(
        mf.params, z, smf::init_state(mf.params.num_chains,
                                      static_cast<int>(z.rows())));
    Eigen::MatrixXd theta(z.rows(), mf.params.num_chains);
    for (int m = 0; m < mf.params.num_chains; ++m) {
        theta.col(m) = state.gamma[m].col(1);
    }
    return theta;
}

int run_impl(int argc, const char* const* argv) {
    CLI::App app{"Factorial HMM learning: amortized variational inference and a "
                 "mean-field EM baseline"};
    app.require_subcommand(1);

    // ---- simulate ----
    auto* sim_cmd = app.add_subcommand("simulate", "draw a synthetic sequence");
    sim_cmd->option_defaults()->multi_option_policy(
        CLI::MultiOptionPolicy::TakeLast);
    int sim_T = 1000, sim_M = 2, sim_D = 2;
    std::uint64_t sim_seed = 0;
    std::string sim_out, sim_model_out, sim_states_out;
    sim_cmd->add_option("--length", sim_T, "sequence length");
    sim_cmd->add_option("--chains", sim_M, "number of chains");
    sim_cmd->add_option("--dims", sim_D, "observation dimension");
    sim_cmd->add_option("--seed", sim_seed, "random seed");
    sim_cmd->add_option("--out", sim_out, "observations CSV")->required();
    sim_cmd->add_option("--model-out", sim_model_out, "ground-truth model file");
    sim_cmd->add_option("--states-out", sim_states_out, "latent states CSV");
    sim_cmd->callback([&]() {
        const auto truth = simulation_truth(sim_M, sim_D);
        const auto sim = model::simulate(truth, sim_T, sim_seed);
        save_csv(sim_out, sim.observations);
        if (!sim_model_out.empty()) {
            ModelFile mf(truth);
            mf.seed = sim_seed;
            save_model(sim_model_out, mf);
        }
        if (!sim_states_out.empty()) {
            save_csv(sim_states_out, sim.states.cast<double>());
        }
    });

    // ---- train ----
    auto* train_cmd = app.add_subcommand("train", "fit a model to a CSV sequence");
    train_cmd->option_defaults()->multi_option_policy(
        CLI::MultiOptionPolicy::TakeLast);
    std::string tr_data, tr_model_out, tr_trace_out, tr_algo = "svi";
    bool tr_trace_timing = false;
    CsvFlags tr_csv;
    TrainFlags tr;
    train_cmd->add_option("--data", tr_data, "input CSV")->required();
    train_cmd->add_option("--model-out", tr_model_out, "output model file")
        ->required();
    train_cmd->add_option("--algo", tr_algo, "svi | smf");
    train_cmd->add_option("--trace-out", tr_trace_out,
                          "trace path (default: <model-out>.trace)");
    train_cmd->add_flag("--trace-timing", tr_trace_timing,
                        "include wall-clock in the trace (breaks cross-thread "
                        "file identity)");
    tr_csv.attach(train_cmd);
    tr.attach(train_cmd);
    train_cmd->callback([&]() {
        const CsvData data = load_csv(tr_data, tr_csv.options());
        const std::string trace_path =
            tr_trace_out.empty() ? tr_model_out + ".trace" : tr_trace_out;
        if (tr_algo == "svi") {
            svi::TrainConfig cfg = tr.config();
            cfg.budget_seconds = tr.budget_seconds;
            const auto res = svi::train(cfg, data.values);
            ModelFile mf(res.params);
            mf.has_nets = true;
            mf.spec = res.spec;
            mf.nets = res.nets;
            mf.seed = cfg.seed;
            mf.iterations =
                res.trace.empty() ? 0 : res.trace.back().iteration;
            char hex[32];
            std::snprintf(hex, sizeof(hex), "%016llx",
                          static_cast<unsigned long long>(fnv1a(tr.hash_text())));
            mf.config_hash = hex;
            mf.standardization = data.standardization;
            save_model(tr_model_out, mf);
            save_trace(trace_path, res.trace, tr_trace_timing);
        } else if (tr_algo == "smf") {
            const svi::TrainConfig cfg = tr.config();
            const auto init =
                svi::default_init(cfg.num_chains, data.values, cfg.seed);
            const auto res = smf::smf_em_fit(
                init, data.values, cfg.iterations,
                tr.budget_seconds > 0.0 ? tr.budget_seconds : -1.0);
            ModelFile mf(res.params);
            mf.seed = cfg.seed;
            mf.iterations = res.trace.empty() ? 0 : res.trace.back().iteration;
            mf.standardization = data.standardization;
            save_model(tr_model_out, mf);
            std::ofstream out = open_out(trace_path);
            for (const auto& rec : res.trace) {
                out << "iter " << rec.iteration << " elbo "
                    << format_double(rec.elbo);
                if (tr_trace_timing) {
                    out << " seconds " << format_double(rec.seconds);
                }
                out << "\n";
            }
        } else {
            fail("unknown --algo '" + tr_algo + "' (expected svi or smf)");
        }
    });

    // ---- eval ----
    auto* eval_cmd = app.add_subcommand("eval", "score a model on a CSV sequence");
    eval_cmd->option_defaults()->multi_option_policy(
        CLI::MultiOptionPolicy::TakeLast);
    std::string ev_data, ev_model_in, ev_out;
    CsvFlags ev_csv;
    eval_cmd->add_option("--data", ev_data, "input CSV")->required();
    eval_cmd->add_option("--model-in", ev_model_in, "model file")->required();
    eval_cmd->add_option("--out", ev_out, "report path")->required();
    ev_csv.attach(eval_cmd);
    eval_cmd->callback([&]() {
        CsvOptions opts = ev_csv.options();
        opts.standardize = false;  // the stored transform takes precedence
        const CsvData data = load_csv(ev_data, opts);
        const ModelFile mf = load_model(ev_model_in);
        const Eigen::MatrixXd z = standardize_apply(data.values, mf.standardization);
        eval::EvalReport rep;
        rep.algorithm = mf.has_nets ? "svi" : "smf";
        const double ll = eval::loglik_per_timestep(mf.params, z) -
                          log_scale_sum(mf.standardization);
        rep.train_ll = ll;
        rep.test_ll = ll;
        rep.mse = eval::smoothing_mse(mf.params, model_marginals(mf, z), z);
        if (mf.standardization.active) {
            rep.mse.array() *= mf.standardization.scale.array().square();
        }
        rep.seconds_used = 0.0;
        rep.budget_exhausted_before_first_iteration = false;
        save_report(ev_out, {rep});
    });

    // ---- infer ----
    auto* infer_cmd =
        app.add_subcommand("infer", "write posterior marginals for a sequence");
    infer_cmd->option_defaults()->multi_option_policy(
        CLI::MultiOptionPolicy::TakeLast);
    std::string in_data, in_model_in, in_out;
    CsvFlags in_csv;
    infer_cmd->add_option("--data", in_data, "input CSV")->required();
    infer_cmd->add_option("--model-in", in_model_in, "model file")->required();
    infer_cmd->add_option("--out", in_out, "marginals CSV")->required();
    in_csv.attach(infer_cmd);
    infer_cmd->callback([&]() {
        CsvOptions opts = in_csv.options();
        opts.standardize = false;
        const CsvData data = load_csv(in_data, opts);
        const ModelFile mf = load_model(in_model_in);
        const Eigen::MatrixXd z = standardize_apply(data.values, mf.standardization);
        save_csv(in_out, model_marginals(mf, z));
    });

    // ---- compare ----
    auto* cmp_cmd = app.add_subcommand(
        "compare", "same-budget head-to-head of both training algorithms");
    cmp_cmd->option_defaults()->multi_option_policy(
        CLI::MultiOptionPolicy::TakeLast);
    std::string cp_data, cp_test, cp_out;
    CsvFlags cp_csv;
    TrainFlags cp;
    cmp_cmd->add_option("--data", cp_data, "training CSV")->required();
    cmp_cmd->add_option("--test-data", cp_test, "held-out CSV")->required();
    cmp_cmd->add_option("--out", cp_out, "report path")->required();
    cp_csv.attach(cmp_cmd);
    cp.attach(cmp_cmd);
    cmp_cmd->callback([&]() {
        const CsvData train_data = load_csv(cp_data, cp_csv.options());
        CsvOptions test_opts;  // the full test file, transformed like training
        const CsvData test_raw = load_csv(cp_test, test_opts);
        const Eigen::MatrixXd test_z =
            standardize_apply(test_raw.values, train_data.standardization);
        const auto result = eval::budgeted_comparison(
            train_data.values, test_z, cp.budget_seconds, cp.config());
        std::vector<eval::EvalReport> reports{result.svi, result.smf};
        if (train_data.standardization.active) {
            const double off = log_scale_sum(train_data.standardization);
            for (auto& r : reports) {
                r.train_ll -= off;
                r.test_ll -= off;
                r.mse.array() *=
                    train_data.standardization.scale.array().square();
            }
        }
        save_report(cp_out, reports);
    });

    std::vector<std::string> args =
        expand_config(std::vector<std::string>(argv + 1, argv + argc));
    std::vector<const char*> cargs;
    cargs.push_back(argv[0]);
    for (const auto& a : args) cargs.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(cargs.size()), cargs.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
    try {
        return run_impl(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace fhmm::cli
