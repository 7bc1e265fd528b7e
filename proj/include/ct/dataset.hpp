#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ct/dsp.hpp"
#include "ct/tensor.hpp"

// Manifests, stratified splits, label encoding and the spectrogram cache
// that bridges raw signals to model input batches.
//
// Manifest file: comma-separated text with a header row. Task schemas are
// carried in leading comment lines:
//
//   #task <name> <main|auxiliary> <class1,class2,...>
//   id,signal,split,<task columns...>,<covariate columns...>
//
// Class index = position in the schema's class list, stable across runs.

namespace ct::data {

enum class Split { train, val, test };
const char* to_string(Split s);
Split split_from_string(const std::string& s);

struct TaskSchema {
    std::string name;
    std::vector<std::string> classes;
    bool is_main = true;

    int class_index(const std::string& value) const;  // -1 when unknown
};

struct ManifestRow {
    std::string id;
    std::string signal_path;  // relative to the manifest's directory
    Split split = Split::train;
    std::vector<int> labels;             // one index per task, schema order
    std::vector<std::string> covariates; // values for covariate columns
};

class DatasetManifest {
public:
    std::vector<TaskSchema> tasks;
    std::vector<std::string> covariate_columns;
    std::vector<ManifestRow> rows;
    std::filesystem::path root;  // directory holding the manifest file

    static DatasetManifest load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    // Unique ids, labels within range, train and val splits nonempty.
    void validate(bool allow_empty_test = true) const;

    int task_index(const std::string& name) const;  // -1 when absent
    std::vector<std::size_t> split_rows(Split s) const;
    std::vector<std::int64_t> label_counts(int task) const;
    std::string content_hash() const;  // over ids and split assignment
};

// ---------------------------------------------------------------------------
// Batching.

enum class SensorSelect { all, sensor_a };

struct BatchConfig {
    int batch_size = 32;
    std::uint64_t shuffle_seed = 0;
    std::int64_t epoch = 0;  // each epoch reshuffles deterministically
    bool shuffle = true;
    SensorSelect sensors = SensorSelect::all;
};

struct Batch {
    Tensor<float> inputs;                  // [B, channels, F, T]
    std::vector<std::vector<int>> labels;  // [task][B]
    std::vector<std::string> ids;
};

// Owns the spectrogram cache under <root>/cache/<stft-key>/ and the per-bin
// standardization statistics fitted on the training split.
class SpectrogramStore {
public:
    SpectrogramStore(const DatasetManifest& manifest, dsp::StftConfig cfg);

    // Computes missing cache entries, fits (or reloads) standardization
    // statistics, and loads every spectrogram into memory.
    void prepare();

    const dsp::StftConfig& stft() const { return cfg_; }
    int channels() const { return channels_; }
    int input_channels(SensorSelect sel) const {
        return sel == SensorSelect::sensor_a ? 1 : channels_;
    }

    // Log-standardized spectrogram for one manifest row.
    Tensor<float> standardized(std::size_t row, SensorSelect sel) const;

private:
    const DatasetManifest* manifest_;
    dsp::StftConfig cfg_;
    std::filesystem::path cache_dir_;
    std::vector<Tensor<float>> raw_;  // raw power spectrograms per row
    int channels_ = 0;
    bool prepared_ = false;
};

// Deterministic batch stream for one split; the last partial batch is kept.
std::vector<Batch> make_batches(const SpectrogramStore& store, const DatasetManifest& manifest,
                                Split split, const BatchConfig& cfg);

}  // namespace ct::data
