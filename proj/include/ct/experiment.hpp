#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ct/config.hpp"
#include "ct/dataset.hpp"
#include "ct/metrics.hpp"
#include "ct/models.hpp"

// Training and evaluation protocol: per-task cross-entropy summed unweighted,
// Adam, epoch-wise validation with lowest-val-loss selection, multi-seed
// sweeps, prediction dumps and macro-F1 reports.

namespace ct::exp {

struct ExperimentConfig {
    std::filesystem::path manifest_path;
    std::filesystem::path out_dir;
    int epochs = 100;
    double lr = 1e-3;
    int batch_size = 32;
    std::vector<std::uint64_t> seeds = {0, 1, 2};
    data::SensorSelect sensors = data::SensorSelect::all;
    dsp::StftConfig stft;
    std::vector<models::ConvBlockSpec> blocks;  // ctl sites are set per architecture
    int fdy_basis = 4;
    double fdy_temperature = 31.0;
    std::string config_hash;

    // Reads data.manifest, train.*, stft.*, backbone.* keys.
    static ExperimentConfig from_config(const Config& cfg);
};

// Block list syntax: "16k3p,32k3p,64k3pf,64k3f" - channels, then optional
// k<kernel>, s<stride>, p (2x2 max pool), f (frequency dynamic conv).
std::vector<models::ConvBlockSpec> parse_blocks(const std::string& desc);
std::string blocks_to_string(const std::vector<models::ConvBlockSpec>& blocks);

// Loaded dataset shared across runs of one sweep (read-only after creation).
struct Session {
    data::DatasetManifest manifest;
    data::SpectrogramStore store;
    explicit Session(const ExperimentConfig& cfg);
};

struct SingleRun {
    std::vector<std::string> task_names;  // tasks carried by this model
    std::vector<double> train_loss;       // per epoch, sample-weighted mean
    std::vector<double> val_loss;
    int selected_epoch = -1;
    double selected_val_loss = 0.0;
    std::filesystem::path checkpoint;
    std::filesystem::path descriptor;
};

struct RunRecord {
    models::ArchKind arch = models::ArchKind::stl;
    std::uint64_t seed = 0;
    std::vector<SingleRun> runs;  // one entry; stl on multi-main-task data gets one per task
    std::filesystem::path dir;
    std::filesystem::path dump;  // merged test-split prediction dump
    std::filesystem::path meta;
};

RunRecord train_one(const ExperimentConfig& cfg, Session& session, models::ArchKind arch,
                    std::uint64_t seed);
RunRecord train_one(const ExperimentConfig& cfg, models::ArchKind arch, std::uint64_t seed);

struct SweepResult {
    std::vector<RunRecord> records;
    std::vector<std::string> failures;  // "<arch>-s<seed>: <error>"
    bool ok() const { return failures.empty(); }
};

// Runs every (architecture, seed) cell; failures are recorded and the sweep
// continues. Output is independent of the job count.
SweepResult sweep(const ExperimentConfig& cfg, const std::vector<models::ArchKind>& archs,
                  int jobs = 1);

// ---------------------------------------------------------------------------
// Prediction dumps: csv columns id,task,truth,predicted,logits
// (logits are semicolon-joined).

struct DumpRow {
    std::string id;
    std::string task;
    int truth = 0;
    int predicted = 0;
    std::vector<float> logits;
};

void write_dump(const std::filesystem::path& path, const std::vector<DumpRow>& rows);
std::vector<DumpRow> read_dump(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Evaluation.

struct EvalResult {
    std::map<std::string, double> per_task_f1;  // every task present in the dump
    std::string headline_task;                  // "fault" or "compound"
    double headline = 0.0;
    double component_mean = 0.0;  // motor: mean of the four component scores
    bool is_compound = false;
};

EvalResult evaluate_dump(const std::filesystem::path& dump, const data::DatasetManifest& manifest);
EvalResult evaluate_run(const RunRecord& record, const data::DatasetManifest& manifest);

// Re-evaluates a stored checkpoint's validation loss (protocol fidelity
// check against SingleRun::selected_val_loss).
double revalidate(const ExperimentConfig& cfg, Session& session, const SingleRun& run);

}  // namespace ct::exp
