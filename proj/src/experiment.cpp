#include "ct/experiment.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "ct/kernels.hpp"
#include "ct/nn.hpp"
#include "ct/rng.hpp"

namespace ct::exp {

namespace {

using models::ArchKind;

dsp::StftConfig stft_from_config(const Config& cfg) {
    dsp::StftConfig s;
    s.window_len = cfg.get_int("stft.window", 256);
    s.hop = cfg.get_int("stft.hop", 128);
    const std::string wk = cfg.get_or("stft.window_kind", "hann");
    if (wk == "hann") s.window = dsp::WindowKind::hann;
    else if (wk == "rect" || wk == "rectangular") s.window = dsp::WindowKind::rectangular;
    else throw ConfigError("stft.window_kind must be hann or rect");
    s.sample_rate = cfg.get_double("stft.sample_rate", 16000.0);
    s.log_floor = cfg.get_double("stft.log_floor", 1e-10);
    s.validate();
    return s;
}

}  // namespace

std::vector<models::ConvBlockSpec> parse_blocks(const std::string& desc) {
    std::vector<models::ConvBlockSpec> out;
    std::istringstream ss(desc);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        models::ConvBlockSpec b;
        b.pool = false;
        std::size_t i = 0;
        auto read_int = [&](const char* what) {
            std::size_t j = i;
            while (j < item.size() && std::isdigit(static_cast<unsigned char>(item[j]))) ++j;
            if (j == i) throw ConfigError(std::string("backbone blocks: expected ") + what +
                                          " in '" + item + "'");
            int v = std::stoi(item.substr(i, j - i));
            i = j;
            return v;
        };
        b.out_channels = read_int("channel count");
        while (i < item.size()) {
            const char c = item[i++];
            if (c == 'k') b.kernel = read_int("kernel size");
            else if (c == 's') b.stride = read_int("stride");
            else if (c == 'p') b.pool = true;
            else if (c == 'f') b.fdy = true;
            else throw ConfigError("backbone blocks: unknown flag '" + std::string(1, c) + "' in '" +
                                   item + "'");
        }
        out.push_back(b);
    }
    if (out.empty()) throw ConfigError("backbone blocks: empty description");
    return out;
}

std::string blocks_to_string(const std::vector<models::ConvBlockSpec>& blocks) {
    std::string out;
    for (const auto& b : blocks) {
        if (!out.empty()) out += ",";
        out += std::to_string(b.out_channels) + "k" + std::to_string(b.kernel);
        if (b.stride != 1) out += "s" + std::to_string(b.stride);
        if (b.pool) out += "p";
        if (b.fdy) out += "f";
    }
    return out;
}

ExperimentConfig ExperimentConfig::from_config(const Config& cfg) {
    ExperimentConfig e;
    e.manifest_path = cfg.get("data.manifest");
    e.out_dir = cfg.get_or("out", "runs");
    e.epochs = cfg.get_int("train.epochs", 100);
    e.lr = cfg.get_double("train.lr", 1e-3);
    e.batch_size = cfg.get_int("train.batch_size", 32);
    if (e.epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (!(e.lr > 0)) throw ConfigError("train.lr must be positive");
    e.seeds.clear();
    for (const auto& s : cfg.get_list("train.seeds", {"0", "1", "2"}))
        e.seeds.push_back(std::stoull(s));
    if (e.seeds.empty()) throw ConfigError("train.seeds must name at least one seed");
    const std::string sensors = cfg.get_or("train.sensors", "all");
    if (sensors == "all") e.sensors = data::SensorSelect::all;
    else if (sensors == "sensor_a") e.sensors = data::SensorSelect::sensor_a;
    else throw ConfigError("train.sensors must be all or sensor_a");
    e.stft = stft_from_config(cfg);
    e.blocks = parse_blocks(cfg.get_or("backbone.blocks", "16k3p,32k3p,64k3p,64k3"));
    e.fdy_basis = cfg.get_int("backbone.fdy_basis", 4);
    e.fdy_temperature = cfg.get_double("backbone.fdy_temperature", 31.0);
    e.config_hash = cfg.hash();
    return e;
}

Session::Session(const ExperimentConfig& cfg)
    : manifest(data::DatasetManifest::load(cfg.manifest_path)), store(manifest, cfg.stft) {
    store.prepare();
}

namespace {

struct ModelPlan {
    std::vector<models::TaskSpec> tasks;
    std::vector<int> task_cols;  // manifest task index per model task
    std::string suffix;          // file suffix for stl component models
};

std::vector<ModelPlan> plan_models(ArchKind arch, const data::DatasetManifest& manifest) {
    std::vector<ModelPlan> plans;
    if (arch == ArchKind::stl) {
        for (std::size_t t = 0; t < manifest.tasks.size(); ++t) {
            if (!manifest.tasks[t].is_main) continue;  // stl trains evaluated tasks only
            ModelPlan p;
            p.tasks = {{manifest.tasks[t].name, static_cast<int>(manifest.tasks[t].classes.size()),
                        models::TaskRole::main}};
            p.task_cols = {static_cast<int>(t)};
            p.suffix = "-" + manifest.tasks[t].name;
            plans.push_back(std::move(p));
        }
        if (plans.empty()) throw ConfigError("stl: manifest has no main task");
        if (plans.size() == 1) plans[0].suffix.clear();
    } else {
        ModelPlan p;
        for (std::size_t t = 0; t < manifest.tasks.size(); ++t) {
            p.tasks.push_back({manifest.tasks[t].name,
                               static_cast<int>(manifest.tasks[t].classes.size()),
                               manifest.tasks[t].is_main ? models::TaskRole::main
                                                         : models::TaskRole::auxiliary});
            p.task_cols.push_back(static_cast<int>(t));
        }
        plans.push_back(std::move(p));
    }
    return plans;
}

models::BackboneSpec make_backbone(const ExperimentConfig& cfg, const Session& ses) {
    models::BackboneSpec bb;
    bb.in_channels = ses.store.input_channels(cfg.sensors);
    bb.freq_bins = cfg.stft.freq_bins();
    bb.blocks = cfg.blocks;
    bb.fdy_basis = cfg.fdy_basis;
    bb.fdy_temperature = cfg.fdy_temperature;
    return bb;
}

// Total loss over one batch: unweighted sum of per-task cross-entropies.
template <typename T>
Tensor<T> batch_loss(Tape<T>* tape, const models::MultiTaskModel<T>& model,
                     const data::Batch& batch, const std::vector<int>& task_cols) {
    auto logits = model.forward(tape, batch.inputs);
    Tensor<T> total;
    for (std::size_t t = 0; t < logits.size(); ++t) {
        auto ce = nn::softmax_cross_entropy(
            tape, logits[t], batch.labels[static_cast<std::size_t>(task_cols[t])]);
        total = t == 0 ? ce : ops::add(tape, total, ce);
    }
    return total;
}

double dataset_loss(const ExperimentConfig& cfg, Session& ses,
                    const models::MultiTaskModel<float>& model, const std::vector<int>& task_cols,
                    data::Split split) {
    data::BatchConfig bc;
    bc.batch_size = cfg.batch_size;
    bc.shuffle = false;
    bc.sensors = cfg.sensors;
    double total = 0.0;
    std::int64_t n = 0;
    for (const auto& batch : data::make_batches(ses.store, ses.manifest, split, bc)) {
        const double l = static_cast<double>(batch_loss<float>(nullptr, model, batch, task_cols).item());
        total += l * batch.inputs.dim(0);
        n += batch.inputs.dim(0);
    }
    return total / static_cast<double>(n);
}

SingleRun train_single(const ExperimentConfig& cfg, Session& ses, ArchKind arch,
                       const ModelPlan& plan, std::uint64_t seed, std::uint64_t component,
                       const std::filesystem::path& dir) {
    auto backbone = make_backbone(cfg, ses);
    auto model = models::build_model<float>(arch, backbone, plan.tasks,
                                            mix_seed(seed, "init", component));
    nn::AdamState<float> adam;
    adam.lr = static_cast<float>(cfg.lr);

    SingleRun run;
    for (const auto& t : plan.tasks) run.task_names.push_back(t.name);

    std::vector<Tensor<float>> best_params;
    double best_val = std::numeric_limits<double>::infinity();

    const std::uint64_t shuffle_seed = mix_seed(seed, "shuffle", component);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        data::BatchConfig bc;
        bc.batch_size = cfg.batch_size;
        bc.shuffle = true;
        bc.shuffle_seed = shuffle_seed;
        bc.epoch = epoch;
        bc.sensors = cfg.sensors;

        double epoch_loss = 0.0;
        std::int64_t n = 0;
        int batch_idx = 0;
        for (const auto& batch : data::make_batches(ses.store, ses.manifest, data::Split::train, bc)) {
            Tape<float> tape;
            model.bind(tape);
            auto loss = batch_loss(&tape, model, batch, plan.task_cols);
            const double lval = loss.item();
            if (!std::isfinite(lval))
                throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) +
                                      ", batch " + std::to_string(batch_idx));
            tape.backward(loss);
            auto refs = model.param_refs();
            std::vector<Tensor<float>> grads;
            grads.reserve(refs.size());
            for (auto& r : refs) grads.push_back(tape.grad(*r.value));
            model.unbind();
            nn::adam_step(adam, refs, grads);
            epoch_loss += lval * batch.inputs.dim(0);
            n += batch.inputs.dim(0);
            ++batch_idx;
        }
        run.train_loss.push_back(epoch_loss / static_cast<double>(n));

        const double val = dataset_loss(cfg, ses, model, plan.task_cols, data::Split::val);
        run.val_loss.push_back(val);
        if (val < best_val) {  // strict: ties keep the earliest epoch
            best_val = val;
            run.selected_epoch = epoch;
            best_params.clear();
            for (auto& r : model.param_refs()) best_params.push_back(*r.value);
        }
    }
    run.selected_val_loss = best_val;

    // restore the selected epoch's parameters
    {
        auto refs = model.param_refs();
        for (std::size_t i = 0; i < refs.size(); ++i) *refs[i].value = best_params[i];
    }

    run.checkpoint = dir / ("checkpoint" + plan.suffix + ".ctlw");
    run.descriptor = dir / ("model" + plan.suffix + ".txt");
    {
        auto refs = model.param_refs();
        std::vector<nn::ParamRef<float>> crefs(refs.begin(), refs.end());
        nn::save_checkpoint(run.checkpoint, crefs);
    }
    models::save_descriptor(run.descriptor, {arch, model.backbone, plan.tasks});

    std::ofstream curve(dir / ("loss" + plan.suffix + ".tsv"));
    curve.precision(17);
    curve << "epoch\ttrain\tval\n";
    for (std::size_t e = 0; e < run.train_loss.size(); ++e)
        curve << e << "\t" << run.train_loss[e] << "\t" << run.val_loss[e] << "\n";

    // test predictions with the selected parameters
    data::BatchConfig bc;
    bc.batch_size = cfg.batch_size;
    bc.shuffle = false;
    bc.sensors = cfg.sensors;
    std::vector<DumpRow> rows;
    for (const auto& batch : data::make_batches(ses.store, ses.manifest, data::Split::test, bc)) {
        auto logits = model.forward(nullptr, batch.inputs);
        for (std::size_t t = 0; t < plan.tasks.size(); ++t) {
            const auto& lg = logits[t];
            const int K = lg.dim(1);
            for (int b = 0; b < lg.dim(0); ++b) {
                DumpRow row;
                row.id = batch.ids[static_cast<std::size_t>(b)];
                row.task = plan.tasks[t].name;
                row.truth =
                    batch.labels[static_cast<std::size_t>(plan.task_cols[t])][static_cast<std::size_t>(b)];
                int arg = 0;
                for (int k = 1; k < K; ++k)
                    if (lg.at({b, k}) > lg.at({b, arg})) arg = k;
                row.predicted = arg;
                for (int k = 0; k < K; ++k) row.logits.push_back(lg.at({b, k}));
                rows.push_back(std::move(row));
            }
        }
    }
    const auto dump_part = dir / ("predictions" + plan.suffix + ".csv");
    write_dump(dump_part, rows);
    return run;
}

}  // namespace

RunRecord train_one(const ExperimentConfig& cfg, Session& ses, ArchKind arch, std::uint64_t seed) {
    RunRecord rec;
    rec.arch = arch;
    rec.seed = seed;
    rec.dir = cfg.out_dir / (std::string(models::to_string(arch)) + "-s" + std::to_string(seed));
    if (std::filesystem::exists(rec.dir))
        throw IoError("run directory already exists (runs never overwrite): " + rec.dir.string());
    std::filesystem::create_directories(rec.dir);

    const auto plans = plan_models(arch, ses.manifest);
    std::vector<DumpRow> merged;
    for (std::size_t p = 0; p < plans.size(); ++p) {
        auto run = train_single(cfg, ses, arch, plans[p], seed, p, rec.dir);
        const auto part = rec.dir / ("predictions" + plans[p].suffix + ".csv");
        auto rows = read_dump(part);
        merged.insert(merged.end(), rows.begin(), rows.end());
        if (plans.size() > 1) std::filesystem::remove(part);
        rec.runs.push_back(std::move(run));
    }
    rec.dump = rec.dir / "predictions.csv";
    if (plans.size() > 1) write_dump(rec.dump, merged);

    rec.meta = rec.dir / "meta.txt";
    std::ofstream meta(rec.meta);
    meta.precision(17);
    meta << "config_hash = " << cfg.config_hash << "\n";
    meta << "arch = " << models::to_string(arch) << "\n";
    meta << "seed = " << seed << "\n";
    meta << "kernels = " << kernels::backend_name(kernels::active()) << "\n";
    for (std::size_t r = 0; r < rec.runs.size(); ++r) {
        const std::string p = "run" + std::to_string(r) + ".";
        meta << p << "selected_epoch = " << rec.runs[r].selected_epoch << "\n";
        meta << p << "selected_val_loss = " << rec.runs[r].selected_val_loss << "\n";
    }
    return rec;
}

RunRecord train_one(const ExperimentConfig& cfg, ArchKind arch, std::uint64_t seed) {
    Session ses(cfg);
    return train_one(cfg, ses, arch, seed);
}

SweepResult sweep(const ExperimentConfig& cfg, const std::vector<models::ArchKind>& archs,
                  int jobs) {
    if (archs.empty()) throw ConfigError("sweep: empty architecture list");
    if (jobs < 1) jobs = 1;
    Session ses(cfg);

    struct Cell {
        models::ArchKind arch;
        std::uint64_t seed;
    };
    std::vector<Cell> cells;
    for (auto a : archs)
        for (auto s : cfg.seeds) cells.push_back({a, s});

    std::vector<RunRecord> records(cells.size());
    std::vector<std::string> errors(cells.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            try {
                records[i] = train_one(cfg, ses, cells[i].arch, cells[i].seed);
            } catch (const std::exception& e) {
                errors[i] = std::string(models::to_string(cells[i].arch)) + "-s" +
                            std::to_string(cells[i].seed) + ": " + e.what();
            }
        }
    };
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    SweepResult out;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (!errors[i].empty()) out.failures.push_back(errors[i]);
        else out.records.push_back(std::move(records[i]));
    }
    return out;
}

// ---------------------------------------------------------------------------

void write_dump(const std::filesystem::path& path, const std::vector<DumpRow>& rows) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write predictions: " + path.string());
    f << "id,task,truth,predicted,logits\n";
    char buf[32];
    for (const auto& r : rows) {
        f << r.id << "," << r.task << "," << r.truth << "," << r.predicted << ",";
        for (std::size_t i = 0; i < r.logits.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(r.logits[i]));
            if (i) f << ";";
            f << buf;
        }
        f << "\n";
    }
}

std::vector<DumpRow> read_dump(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read predictions: " + path.string());
    std::vector<DumpRow> rows;
    std::string line;
    if (!std::getline(f, line)) throw FormatError("empty prediction dump: " + path.string());
    int lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        DumpRow r;
        std::string truth, pred, logits;
        if (!std::getline(ss, r.id, ',') || !std::getline(ss, r.task, ',') ||
            !std::getline(ss, truth, ',') || !std::getline(ss, pred, ',') ||
            !std::getline(ss, logits))
            throw FormatError(path.string() + " line " + std::to_string(lineno) + ": bad row");
        r.truth = std::stoi(truth);
        r.predicted = std::stoi(pred);
        std::istringstream ls(logits);
        std::string v;
        while (std::getline(ls, v, ';')) r.logits.push_back(std::stof(v));
        rows.push_back(std::move(r));
    }
    return rows;
}

EvalResult evaluate_dump(const std::filesystem::path& dump, const data::DatasetManifest& manifest) {
    const auto rows = read_dump(dump);
    EvalResult out;

    std::map<std::string, std::size_t> row_of;
    for (std::size_t i = 0; i < manifest.rows.size(); ++i) row_of[manifest.rows[i].id] = i;

    // confusion matrix per task present in the dump
    std::map<std::string, metrics::ConfusionMatrix> cms;
    std::map<std::string, std::map<std::string, std::pair<int, int>>> by_task_id;  // truth,pred
    for (const auto& r : rows) {
        const int t = manifest.task_index(r.task);
        if (t < 0) throw FormatError("dump names unknown task '" + r.task + "'");
        auto it = row_of.find(r.id);
        if (it == row_of.end()) throw FormatError("dump names unknown sample '" + r.id + "'");
        if (manifest.rows[it->second].labels[static_cast<std::size_t>(t)] != r.truth)
            throw FormatError("dump truth disagrees with manifest for sample '" + r.id + "'");
        auto cmit = cms.find(r.task);
        if (cmit == cms.end())
            cmit = cms.emplace(r.task, metrics::ConfusionMatrix(static_cast<int>(
                                           manifest.tasks[static_cast<std::size_t>(t)].classes.size())))
                       .first;
        cmit->second.add(r.truth, r.predicted);
        by_task_id[r.task][r.id] = {r.truth, r.predicted};
    }
    if (cms.empty()) throw FormatError("prediction dump has no rows: " + dump.string());
    for (const auto& [task, cm] : cms) out.per_task_f1[task] = metrics::macro_f1(cm);

    const bool compound = manifest.task_index("irf") >= 0 && manifest.task_index("orf") >= 0 &&
                          manifest.task_index("misalignment") >= 0 &&
                          manifest.task_index("unbalance") >= 0;
    if (compound) {
        const std::array<std::string, 4> comp{"irf", "orf", "misalignment", "unbalance"};
        for (const auto& c : comp)
            if (!by_task_id.count(c)) throw FormatError("dump missing component task '" + c + "'");
        metrics::ConfusionMatrix cm(metrics::kCompoundClasses);
        for (const auto& [id, unused] : by_task_id.at("irf")) {
            (void)unused;
            std::array<int, 4> truth{}, pred{};
            for (int c = 0; c < 4; ++c) {
                const auto& m = by_task_id.at(comp[static_cast<std::size_t>(c)]);
                auto it = m.find(id);
                if (it == m.end())
                    throw FormatError("sample '" + id + "' missing predictions for task '" +
                                      comp[static_cast<std::size_t>(c)] + "'");
                truth[static_cast<std::size_t>(c)] = it->second.first;
                pred[static_cast<std::size_t>(c)] = it->second.second;
            }
            cm.add(metrics::aggregate_compound(truth[0], truth[1], truth[2], truth[3]),
                   metrics::aggregate_compound(pred[0], pred[1], pred[2], pred[3]));
        }
        out.is_compound = true;
        out.headline_task = "compound";
        out.headline = metrics::macro_f1(cm);
        double sum = 0.0;
        for (const auto& c : comp) sum += out.per_task_f1.at(c);
        out.component_mean = sum / 4.0;
    } else {
        // headline = the first main task; a pure function of that task's rows
        std::string main_task;
        for (const auto& t : manifest.tasks)
            if (t.is_main) {
                main_task = t.name;
                break;
            }
        if (!out.per_task_f1.count(main_task))
            throw FormatError("dump is missing the main task '" + main_task + "'");
        out.headline_task = main_task;
        out.headline = out.per_task_f1.at(main_task);
    }
    return out;
}

EvalResult evaluate_run(const RunRecord& record, const data::DatasetManifest& manifest) {
    return evaluate_dump(record.dump, manifest);
}

double revalidate(const ExperimentConfig& cfg, Session& ses, const SingleRun& run) {
    const auto desc = models::load_descriptor(run.descriptor);
    auto model = models::build_model<float>(desc.kind, desc.backbone, desc.tasks, 0);
    auto refs = model.param_refs();
    std::vector<nn::ParamRef<float>> crefs(refs.begin(), refs.end());
    nn::apply_checkpoint(crefs, nn::load_checkpoint<float>(run.checkpoint));

    std::vector<int> task_cols;
    for (const auto& t : desc.tasks) {
        const int idx = ses.manifest.task_index(t.name);
        if (idx < 0) throw FormatError("descriptor task '" + t.name + "' not in manifest");
        task_cols.push_back(idx);
    }
    return dataset_loss(cfg, ses, model, task_cols, data::Split::val);
}

}  // namespace ct::exp
