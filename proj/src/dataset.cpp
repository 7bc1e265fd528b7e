#include <cstdio>

#include "ct/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "ct/rng.hpp"
#include "ct/siggen.hpp"

namespace ct::data {

const char* to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw FormatError("unknown split '" + s + "'");
}

int TaskSchema::class_index(const std::string& value) const {
    for (std::size_t i = 0; i < classes.size(); ++i)
        if (classes[i] == value) return static_cast<int>(i);
    return -1;
}

namespace {

// Minimal CSV field handling with double-quote escaping.
std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

std::vector<std::string> csv_split(const std::string& line, int lineno) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    if (quoted) throw FormatError("line " + std::to_string(lineno) + ": unterminated quote");
    out.push_back(cur);
    return out;
}

}  // namespace

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open manifest: " + path.string());
    DatasetManifest m;
    m.root = path.parent_path();

    std::string line;
    int lineno = 0;
    std::vector<std::string> header;
    std::vector<int> task_cols;   // column -> task index, -1 otherwise
    std::vector<int> covar_cols;
    int id_col = -1, signal_col = -1, split_col = -1;
    std::set<std::string> seen_ids;

    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        if (line[0] == '#') {
            std::istringstream ss(line.substr(1));
            std::string tag;
            ss >> tag;
            if (tag == "task") {
                TaskSchema t;
                std::string role, classes;
                ss >> t.name >> role >> classes;
                if (t.name.empty() || classes.empty())
                    throw FormatError("line " + std::to_string(lineno) + ": malformed #task line");
                t.is_main = role == "main";
                std::istringstream cs(classes);
                std::string c;
                while (std::getline(cs, c, ',')) t.classes.push_back(c);
                m.tasks.push_back(std::move(t));
            }
            continue;
        }
        auto fields = csv_split(line, lineno);
        if (header.empty()) {
            header = fields;
            task_cols.assign(header.size(), -1);
            for (std::size_t c = 0; c < header.size(); ++c) {
                if (header[c] == "id") id_col = static_cast<int>(c);
                else if (header[c] == "signal") signal_col = static_cast<int>(c);
                else if (header[c] == "split") split_col = static_cast<int>(c);
                else {
                    int ti = m.task_index(header[c]);
                    if (ti >= 0) {
                        task_cols[c] = ti;
                    } else {
                        covar_cols.push_back(static_cast<int>(c));
                        m.covariate_columns.push_back(header[c]);
                    }
                }
            }
            if (id_col < 0 || signal_col < 0 || split_col < 0)
                throw FormatError(path.string() + ": header must contain id, signal, split");
            for (const auto& t : m.tasks)
                if (m.task_index(t.name) >= 0 &&
                    std::find(header.begin(), header.end(), t.name) == header.end())
                    throw FormatError(path.string() + ": no column for task '" + t.name + "'");
            continue;
        }
        if (fields.size() != header.size())
            throw FormatError("line " + std::to_string(lineno) + ": expected " +
                              std::to_string(header.size()) + " fields, got " +
                              std::to_string(fields.size()));
        ManifestRow row;
        row.id = fields[static_cast<std::size_t>(id_col)];
        if (!seen_ids.insert(row.id).second)
            throw FormatError("line " + std::to_string(lineno) + ": duplicate id '" + row.id + "'");
        row.signal_path = fields[static_cast<std::size_t>(signal_col)];
        row.split = split_from_string(fields[static_cast<std::size_t>(split_col)]);
        row.labels.assign(m.tasks.size(), -1);
        for (std::size_t c = 0; c < fields.size(); ++c) {
            if (task_cols[c] >= 0) {
                const auto ti = static_cast<std::size_t>(task_cols[c]);
                const int idx = m.tasks[ti].class_index(fields[c]);
                if (idx < 0)
                    throw FormatError("line " + std::to_string(lineno) + ": label '" + fields[c] +
                                      "' not in class list of task '" + m.tasks[ti].name + "'");
                row.labels[ti] = idx;
            }
        }
        for (int cc : covar_cols) row.covariates.push_back(fields[static_cast<std::size_t>(cc)]);
        m.rows.push_back(std::move(row));
    }
    if (header.empty()) throw FormatError(path.string() + ": missing header row");
    m.validate();
    return m;
}

void DatasetManifest::save(const std::filesystem::path& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write manifest: " + path.string());
    for (const auto& t : tasks) {
        f << "#task " << t.name << " " << (t.is_main ? "main" : "auxiliary") << " ";
        for (std::size_t i = 0; i < t.classes.size(); ++i) {
            if (i) f << ",";
            f << t.classes[i];
        }
        f << "\n";
    }
    f << "id,signal,split";
    for (const auto& t : tasks) f << "," << t.name;
    for (const auto& c : covariate_columns) f << "," << c;
    f << "\n";
    for (const auto& r : rows) {
        f << csv_escape(r.id) << "," << csv_escape(r.signal_path) << "," << to_string(r.split);
        for (std::size_t t = 0; t < tasks.size(); ++t)
            f << "," << csv_escape(tasks[t].classes[static_cast<std::size_t>(r.labels[t])]);
        for (const auto& c : r.covariates) f << "," << csv_escape(c);
        f << "\n";
    }
}

void DatasetManifest::validate(bool allow_empty_test) const {
    if (tasks.empty()) throw FormatError("manifest defines no tasks");
    std::set<std::string> ids;
    std::size_t n_train = 0, n_val = 0, n_test = 0;
    for (const auto& r : rows) {
        if (!ids.insert(r.id).second) throw FormatError("duplicate id '" + r.id + "'");
        if (r.labels.size() != tasks.size()) throw FormatError("row '" + r.id + "' missing labels");
        for (std::size_t t = 0; t < tasks.size(); ++t)
            if (r.labels[t] < 0 || r.labels[t] >= static_cast<int>(tasks[t].classes.size()))
                throw FormatError("row '" + r.id + "' has out-of-range label for task '" +
                                  tasks[t].name + "'");
        if (r.split == Split::train) ++n_train;
        else if (r.split == Split::val) ++n_val;
        else ++n_test;
    }
    if (n_train == 0 || n_val == 0)
        throw FormatError("train and val splits must be nonempty (train=" + std::to_string(n_train) +
                          ", val=" + std::to_string(n_val) + ")");
    if (!allow_empty_test && n_test == 0) throw FormatError("test split is empty");
}

int DatasetManifest::task_index(const std::string& name) const {
    for (std::size_t i = 0; i < tasks.size(); ++i)
        if (tasks[i].name == name) return static_cast<int>(i);
    return -1;
}

std::vector<std::size_t> DatasetManifest::split_rows(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (rows[i].split == s) out.push_back(i);
    return out;
}

std::vector<std::int64_t> DatasetManifest::label_counts(int task) const {
    std::vector<std::int64_t> counts(tasks[static_cast<std::size_t>(task)].classes.size(), 0);
    for (const auto& r : rows) ++counts[static_cast<std::size_t>(r.labels[static_cast<std::size_t>(task)])];
    return counts;
}

std::string DatasetManifest::content_hash() const {
    std::string s;
    for (const auto& r : rows) {
        s += r.id;
        s += '|';
        s += to_string(r.split);
        s += '\n';
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx",
                  static_cast<unsigned long long>(ct::detail::fnv1a64(s)));
    return out;
}

// ---------------------------------------------------------------------------

SpectrogramStore::SpectrogramStore(const DatasetManifest& manifest, dsp::StftConfig cfg)
    : manifest_(&manifest), cfg_(std::move(cfg)) {
    cfg_.validate();
    cache_dir_ = manifest.root / "cache" / cfg_.cache_key();
}

void SpectrogramStore::prepare() {
    std::filesystem::create_directories(cache_dir_);
    raw_.clear();
    raw_.reserve(manifest_->rows.size());
    for (const auto& row : manifest_->rows) {
        const auto spg = cache_dir_ / (row.id + ".spg");
        if (!std::filesystem::exists(spg)) {
            const auto sig = manifest_->root / row.signal_path;
            if (!std::filesystem::exists(sig))
                throw IoError("missing signal for sample '" + row.id + "': " + sig.string());
            auto wave = gen::read_sigf(sig);
            dsp::write_spg(spg, dsp::stft_power<float>(wave, cfg_));
        }
        raw_.push_back(dsp::read_spg(spg));
        if (raw_.size() > 1 && raw_.back().shape() != raw_.front().shape())
            throw ShapeError("sample '" + row.id + "' spectrogram shape differs from the rest");
    }
    if (raw_.empty()) throw IoError("dataset has no samples");
    channels_ = raw_.front().dim(0);

    // Standardization statistics: fitted on the train split only, persisted
    // beside the cache, keyed by the manifest's split assignment.
    const auto stats_path =
        cache_dir_ / ("stats-" + manifest_->content_hash() + ".tsv");
    if (std::filesystem::exists(stats_path)) {
        std::ifstream f(stats_path);
        cfg_.bin_mean.clear();
        cfg_.bin_std.clear();
        double m, s;
        while (f >> m >> s) {
            cfg_.bin_mean.push_back(m);
            cfg_.bin_std.push_back(s);
        }
        if (static_cast<int>(cfg_.bin_mean.size()) != raw_.front().dim(1))
            throw FormatError("stale standardization stats: " + stats_path.string());
        cfg_.stats_fitted = true;
    } else {
        dsp::StandardizeAccumulator acc;
        for (std::size_t i : manifest_->split_rows(Split::train)) acc.add(raw_[i], cfg_.log_floor);
        acc.finalize(cfg_);
        std::ofstream f(stats_path);
        if (!f) throw IoError("cannot write stats: " + stats_path.string());
        f.precision(17);
        for (std::size_t b = 0; b < cfg_.bin_mean.size(); ++b)
            f << cfg_.bin_mean[b] << "\t" << cfg_.bin_std[b] << "\n";
    }
    prepared_ = true;
}

Tensor<float> SpectrogramStore::standardized(std::size_t row, SensorSelect sel) const {
    if (!prepared_) throw StateError("spectrogram store not prepared");
    if (row >= raw_.size())
        throw IoError("missing cache entry for sample index " + std::to_string(row));
    auto spec = dsp::log_standardize(raw_[row], cfg_);
    if (sel == SensorSelect::sensor_a && spec.dim(0) > 1)
        return ops::slice<float>(nullptr, spec, 0, 0, 1);
    return spec;
}

std::vector<Batch> make_batches(const SpectrogramStore& store, const DatasetManifest& manifest,
                                Split split, const BatchConfig& cfg) {
    if (cfg.batch_size <= 0) throw ConfigError("batch size must be positive");
    auto order = manifest.split_rows(split);
    if (cfg.shuffle) {
        Pcg32 rng(mix_seed(cfg.shuffle_seed, "epoch", static_cast<std::uint64_t>(cfg.epoch)));
        rng.shuffle(order.begin(), order.end());
    }
    std::vector<Batch> out;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
        const int B = static_cast<int>(end - start);
        Batch batch;
        batch.labels.assign(manifest.tasks.size(), {});
        ct::Vec<float> vals;
        Shape one;
        for (std::size_t k = start; k < end; ++k) {
            const std::size_t row = order[k];
            auto spec = store.standardized(row, cfg.sensors);
            if (one.empty()) {
                one = spec.shape();
                vals.reserve(static_cast<std::size_t>(B) * spec.size());
            } else if (spec.shape() != one) {
                throw ShapeError("spectrogram shapes differ within batch");
            }
            vals.insert(vals.end(), spec.values().begin(), spec.values().end());
            batch.ids.push_back(manifest.rows[row].id);
            for (std::size_t t = 0; t < manifest.tasks.size(); ++t)
                batch.labels[t].push_back(manifest.rows[row].labels[t]);
        }
        batch.inputs = Tensor<float>(Shape{B, one[0], one[1], one[2]}, std::move(vals));
        out.push_back(std::move(batch));
    }
    return out;
}

}  // namespace ct::data
