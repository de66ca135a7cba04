#pragma once

#include <string>
#include <vector>

#include "oats/baselines.hpp"
#include "oats/corpus.hpp"
#include "oats/model.hpp"
#include "oats/scheduler.hpp"

namespace oats::trainer {

struct RunPaths {
    std::string manifest;
    std::string reference_csv;
    std::string test_csv;
    std::string generator_checkpoint;
    std::string out_dir;
};

struct RunConfig {
    uint64_t seed = 1;
    long total_steps = 3000;
    int batch_size = 32;
    double epsilon = 1.0;
    double beta = 0.01;
    double snr_threshold_db = 3.0;
    int snr_smooth_window = 5;
    long eval_every = 100;
    bool log_tsis = true;
    model::OptMode optimizer = model::OptMode::Adam;
    double weight_decay = 1e-4;
    model::LrSchedule lr;
    model::ForecasterConfig model;  // context/horizon are overridden by the manifest
    baselines::AugmentConfig augment;
    RunPaths paths;

    void validate() const;
};

RunConfig parse_run_config(const std::string& json_path);
std::string run_config_to_json(const RunConfig& cfg);

struct StepRecord {
    long step = 0;
    std::string mode;  // explore | exploit | uniform
    double wall_ms = 0, sample_ms = 0, tsis_ms = 0, gen_ms = 0, update_ms = 0;
    double train_loss = 0;
    int n_real = 0, n_syn = 0;
};

struct EvalRecord {
    long step = 0;
    double nll = 0, mape = 0;
};

struct TsisTraceRow {
    long step = 0;
    int sample_ref = 0;
    int subset_id = 0;
    double influence = 0;
    bool gated = false;
    bool selected = false;
};

struct RunLog {
    std::vector<StepRecord> steps;
    std::vector<EvalRecord> evals;
    std::vector<Vec> phi_history;  // one snapshot per step
    std::vector<TsisTraceRow> tsis_rows;
    double final_ref_nll = 0, final_test_nll = 0, final_test_mape = 0;
    long tsis_calls = 0;
    long generator_invocations = 0;

    double mean_step_wall_ms() const;
    void write(const std::string& out_dir, const RunConfig& cfg) const;
};

struct TrainResult {
    model::ForecasterParams params;
    RunLog log;
};

// Runs the full online-augmentation loop for the configured method and writes
// run.csv / eval.csv / phi.csv / tsis.csv, a config echo and a summary under
// paths.out_dir (when non-empty).
TrainResult train_run(const RunConfig& cfg);

// (NLL, MAPE) on held-out windows; MAPE uses |y - mu| / (|y| + 1e-3) since
// targets are standardized.
std::pair<double, double> eval_run(const model::ForecasterParams& params,
                                   const std::vector<corpus::SeriesWindow>& test_windows);

// Reference-set hygiene, applied to every update batch: windows carrying the
// reserved reference subset id must never be trained on.
void assert_no_reference_windows(const std::vector<corpus::SeriesWindow>& batch);

}  // namespace oats::trainer
