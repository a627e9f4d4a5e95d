#ifndef FHMM_CLI_IO_HPP
#define FHMM_CLI_IO_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fhmm/elbo_svi.hpp"
#include "fhmm/eval_harness.hpp"
#include "fhmm/fhmm_model.hpp"
#include "fhmm/recognition_net.hpp"

namespace fhmm::cli {

inline constexpr const char* kModelVersion = "fhmm-model/1";

// Per-column affine transform applied at load time and stored with the
// model, so evaluation can report metrics in original units.
struct Standardization {
    bool active = false;
    Eigen::VectorXd mean;
    Eigen::VectorXd scale;  // per-column standard deviation, floored at 1e-12
};

struct CsvOptions {
    std::vector<int> columns;  // 0-based keep list; empty keeps every column
    long row_begin = 0;        // 0-based inclusive
    long row_end = -1;         // 0-based exclusive; -1 runs to the end
    bool standardize = false;
};

struct CsvData {
    Eigen::MatrixXd values;
    Standardization standardization;  // active only when requested
};

// Comma-separated numeric matrix, one row per time step, no header.
// Ragged rows, non-numeric cells (including NaN), and empty files are
// reported with their 1-based line number.
CsvData load_csv(const std::string& path, const CsvOptions& options = {});
void save_csv(const std::string& path, const Eigen::MatrixXd& values);

// Decimal rendering at 17 significant digits: parses back to the same bits.
std::string format_double(double v);

struct ModelFile {
    std::string version = kModelVersion;
    model::FhmmParams params;
    bool has_nets = false;
    recog::MlpSpec spec;    // meaningful only when has_nets
    recog::MlpParams nets;  // meaningful only when has_nets
    std::uint64_t seed = 0;
    std::string config_hash;
    int iterations = 0;
    Standardization standardization;

    explicit ModelFile(model::FhmmParams p) : params(std::move(p)) {}
};

void save_model(const std::string& path, const ModelFile& mf);
ModelFile load_model(const std::string& path);  // rejects version mismatch

// Line-delimited training records.  Wall-clock is off by default so that the
// file is identical across runs that differ only in thread count.
void save_trace(const std::string& path, const svi::TrainTrace& trace,
                bool include_timing = false);

void save_report(const std::string& path,
                 const std::vector<eval::EvalReport>& reports);
std::vector<eval::EvalReport> load_report(const std::string& path);

// Fixed, documented generator used by the `simulate` subcommand: well
// separated emission rows pointing in distinct directions, moderate noise,
// and persistent transition matrices.
model::FhmmParams simulation_truth(int M, int D);

// Entry point behind the `fhmm` binary: subcommands simulate, train, eval,
// infer, compare.  Returns the process exit status; errors are printed to
// stderr.
int run(int argc, const char* const* argv);

}  // namespace fhmm::cli

#endif
