#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "ct/dataset.hpp"
#include "ct/rng.hpp"
#include "ct/siggen.hpp"

namespace data = ct::data;
namespace fs = std::filesystem;

namespace {

const char* kManifestText =
    "#task fault main normal,worn,broken\n"
    "#task speed auxiliary low,high\n"
    "id,signal,split,fault,speed,rig\n"
    "a,signals/a.sigf,train,normal,low,r1\n"
    "b,signals/b.sigf,val,worn,high,r2\n"
    "c,signals/c.sigf,test,broken,low,r1\n";

fs::path write_manifest(const std::string& text, const char* name) {
    const auto dir = fs::temp_directory_path() / "ct_manifest_tests";
    fs::create_directories(dir);
    const auto path = dir / name;
    std::ofstream f(path);
    f << text;
    return path;
}

// Small shared motor dataset for store/batch tests (generated once).
const fs::path& motor_dataset() {
    static fs::path dir = [] {
        auto spec = ct::gen::GenSpec::defaults(ct::gen::Benchmark::motor);
        spec.total_samples = 540;
        spec.duration = 0.2;
        spec.seed = 12;
        fs::path d = fs::temp_directory_path() / "ct_dataset_test_motor";
        fs::remove_all(d);
        ct::gen::build_dataset(spec, d);
        return d;
    }();
    return dir;
}

ct::dsp::StftConfig small_stft() {
    ct::dsp::StftConfig cfg;
    cfg.window_len = 128;
    cfg.hop = 64;
    cfg.sample_rate = 8000;
    return cfg;
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("manifest load, validation and round trip") {
    auto path = write_manifest(kManifestText, "ok.csv");
    auto m = data::DatasetManifest::load(path);
    REQUIRE(m.rows.size() == 3);
    CHECK(m.tasks.size() == 2);
    CHECK(m.tasks[0].name == "fault");
    CHECK(m.tasks[0].is_main);
    CHECK_FALSE(m.tasks[1].is_main);
    CHECK(m.covariate_columns == std::vector<std::string>{"rig"});
    CHECK(m.rows[0].labels == std::vector<int>{0, 0});
    CHECK(m.rows[1].labels == std::vector<int>{1, 1});
    CHECK(m.rows[1].covariates == std::vector<std::string>{"r2"});
    CHECK(m.task_index("speed") == 1);
    CHECK(m.task_index("nope") == -1);

    // save -> load is identity on content
    const auto copy = path.parent_path() / "copy.csv";
    m.save(copy);
    auto m2 = data::DatasetManifest::load(copy);
    CHECK(m2.rows.size() == m.rows.size());
    for (std::size_t i = 0; i < m.rows.size(); ++i) {
        CHECK(m2.rows[i].id == m.rows[i].id);
        CHECK(m2.rows[i].labels == m.rows[i].labels);
        CHECK(m2.rows[i].split == m.rows[i].split);
        CHECK(m2.rows[i].covariates == m.rows[i].covariates);
    }
}

TEST_CASE("manifest format errors carry row context") {
    auto dup = write_manifest(
        "#task fault main a,b\nid,signal,split,fault\nx,p,train,a\nx,q,val,b\n", "dup.csv");
    CHECK_THROWS_WITH_AS(data::DatasetManifest::load(dup),
                         doctest::Contains("duplicate id"), ct::FormatError);

    auto badlabel = write_manifest(
        "#task fault main a,b\nid,signal,split,fault\nx,p,train,a\ny,q,val,zz\n", "badlabel.csv");
    try {
        data::DatasetManifest::load(badlabel);
        FAIL("expected FormatError");
    } catch (const ct::FormatError& e) {
        CHECK(std::string(e.what()).find("line 4") != std::string::npos);
        CHECK(std::string(e.what()).find("zz") != std::string::npos);
    }

    auto empty_val = write_manifest(
        "#task fault main a,b\nid,signal,split,fault\nx,p,train,a\n", "noval.csv");
    CHECK_THROWS_AS(data::DatasetManifest::load(empty_val), ct::FormatError);

    // quoted fields with commas survive the round trip
    auto quoted = write_manifest(
        "#task fault main a,b\nid,signal,split,fault,note\nx,\"p,with,commas\",train,a,\"hi "
        "\"\"there\"\"\"\ny,q,val,b,plain\n",
        "quoted.csv");
    auto m = data::DatasetManifest::load(quoted);
    CHECK(m.rows[0].signal_path == "p,with,commas");
    CHECK(m.rows[0].covariates[0] == "hi \"there\"");
}

TEST_CASE("batches are deterministic, complete and sensor-sliced") {
    auto manifest = data::DatasetManifest::load(motor_dataset() / "manifest.csv");
    data::SpectrogramStore store(manifest, small_stft());
    store.prepare();
    CHECK(store.channels() == 2);

    data::BatchConfig bc;
    bc.batch_size = 64;
    bc.shuffle_seed = 5;
    bc.sensors = data::SensorSelect::all;
    auto batches = data::make_batches(store, manifest, data::Split::train, bc);
    const auto train_rows = manifest.split_rows(data::Split::train);
    // sizes: full batches then the kept partial remainder
    std::size_t seen = 0;
    std::set<std::string> ids;
    for (std::size_t b = 0; b < batches.size(); ++b) {
        const auto n = static_cast<std::size_t>(batches[b].inputs.dim(0));
        CHECK((b + 1 < batches.size() ? n == 64 : n == train_rows.size() - seen));
        seen += n;
        for (const auto& id : batches[b].ids) CHECK(ids.insert(id).second);
        CHECK(batches[b].inputs.dim(1) == 2);
    }
    CHECK(seen == train_rows.size());  // every sample exactly once per epoch

    // identical shuffle seed and epoch reproduce the order; epochs differ
    auto again = data::make_batches(store, manifest, data::Split::train, bc);
    CHECK(again[0].ids == batches[0].ids);
    CHECK(again[0].inputs.bit_equal(batches[0].inputs));
    auto next_epoch = bc;
    next_epoch.epoch = 1;
    auto shifted = data::make_batches(store, manifest, data::Split::train, next_epoch);
    CHECK(shifted[0].ids != batches[0].ids);

    // sensor-a-only batches equal channel 0 of the both-sensor batches
    auto simo = bc;
    simo.sensors = data::SensorSelect::sensor_a;
    auto sbatches = data::make_batches(store, manifest, data::Split::train, simo);
    CHECK(sbatches[0].inputs.dim(1) == 1);
    auto sliced = ct::ops::slice<float>(nullptr, batches[0].inputs, 1, 0, 1);
    CHECK(sbatches[0].inputs.bit_equal(sliced));

    // labels align with the manifest
    for (std::size_t t = 0; t < manifest.tasks.size(); ++t)
        for (std::size_t i = 0; i < batches[0].ids.size(); ++i) {
            std::size_t row = 0;
            for (std::size_t r = 0; r < manifest.rows.size(); ++r)
                if (manifest.rows[r].id == batches[0].ids[i]) row = r;
            CHECK(batches[0].labels[t][i] == manifest.rows[row].labels[t]);
        }
}

TEST_CASE("store caches spectrograms and fits train-only statistics") {
    auto manifest = data::DatasetManifest::load(motor_dataset() / "manifest.csv");
    data::SpectrogramStore store(manifest, small_stft());
    store.prepare();
    CHECK(store.stft().stats_fitted);

    // statistics match a direct fit over the train split only
    ct::dsp::StandardizeAccumulator acc;
    auto cfg = small_stft();
    for (auto row : manifest.split_rows(data::Split::train)) {
        auto wave = ct::gen::read_sigf(manifest.root / manifest.rows[row].signal_path);
        acc.add(ct::dsp::stft_power<float>(wave, cfg), cfg.log_floor);
    }
    ct::dsp::StftConfig direct = cfg;
    acc.finalize(direct);
    REQUIRE(direct.bin_mean.size() == store.stft().bin_mean.size());
    for (std::size_t b = 0; b < direct.bin_mean.size(); ++b) {
        CHECK(store.stft().bin_mean[b] == doctest::Approx(direct.bin_mean[b]).epsilon(1e-12));
        CHECK(store.stft().bin_std[b] == doctest::Approx(direct.bin_std[b]).epsilon(1e-12));
    }

    // a second store over the same cache reproduces identical batches
    data::SpectrogramStore store2(manifest, small_stft());
    store2.prepare();
    CHECK(store2.standardized(0, data::SensorSelect::all)
              .bit_equal(store.standardized(0, data::SensorSelect::all)));

    // missing signal file is reported with the sample id
    auto broken = manifest;
    broken.rows[3].signal_path = "signals/gone.sigf";
    data::SpectrogramStore bstore(broken, small_stft());
    // wipe that sample's cache entry so prepare must regenerate it
    fs::remove(motor_dataset() / "cache" / small_stft().cache_key() /
               (broken.rows[3].id + ".spg"));
    CHECK_THROWS_WITH_AS(bstore.prepare(), doctest::Contains(broken.rows[3].id.c_str()),
                         ct::IoError);
}

TEST_CASE("split integrity") {
    auto manifest = data::DatasetManifest::load(motor_dataset() / "manifest.csv");
    std::set<std::string> train_ids, other;
    for (const auto& r : manifest.rows)
        (r.split == data::Split::train ? train_ids : other).insert(r.id);
    for (const auto& id : other) CHECK(train_ids.count(id) == 0);
    CHECK(!manifest.split_rows(data::Split::train).empty());
    CHECK(!manifest.split_rows(data::Split::val).empty());
    CHECK(!manifest.split_rows(data::Split::test).empty());
}

}  // TEST_SUITE
