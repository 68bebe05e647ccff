#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "crs/ablate.hpp"
#include "crs/report.hpp"

#include "test_util.hpp"

using namespace crs;

namespace {

std::vector<AblateRow> sample_rows() {
    std::vector<AblateRow> rows;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        rows.push_back({ConsistencyMode::ST, seed, 0.31 + 0.01 * seed, 1.5, 0.4});
        rows.push_back({ConsistencyMode::STC, seed, 0.12 + 0.01 * seed, 2.5, 0.9});
    }
    return rows;
}

} // namespace

TEST_CASE("report CSV writes and parses back") {
    auto dir = crs_test::temp_dir("report_csv");
    const std::string path = (dir / "report.csv").string();
    auto rows = sample_rows();
    write_report_csv(path, rows);
    auto bytes = read_file_bytes(path);
    auto table = parse_report_csv(std::string(bytes.begin(), bytes.end()));
    REQUIRE_EQ(table.rows.size(), rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK_EQ(table.rows[i].mode, rows[i].mode);
        CHECK_EQ(table.rows[i].seed, rows[i].seed);
        CHECK_EQ(doctest::Approx(table.rows[i].ari).epsilon(1e-9), rows[i].ari);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("CSV parse failures name the problem and the line") {
    CHECK_THROWS_WITH_AS((void)parse_report_csv("mode,seed,ari\nST,1,0.5\n"),
                         doctest::Contains("inference_seconds"), parse_error);
    try {
        (void)parse_report_csv("mode,seed,ari,inference_seconds\nST,1,0.5\n");
        FAIL("expected parse_error");
    } catch (const parse_error& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    try {
        (void)parse_report_csv("mode,seed,ari,inference_seconds\nST,1,zebra,2\n");
        FAIL("expected parse_error");
    } catch (const parse_error& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    CHECK_THROWS_AS((void)parse_report_csv(""), parse_error);
}

TEST_CASE("charts are deterministic byte for byte") {
    auto rows = sample_rows();
    ReportTable table{rows};
    auto a = render_report_charts(table);
    auto b = render_report_charts(table);
    REQUIRE_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK_EQ(a[i].first, b[i].first);
        CHECK(a[i].second == b[i].second);
    }
}

TEST_CASE("a one-row report renders a single-bar chart") {
    ReportTable table;
    table.rows.push_back({ConsistencyMode::STN, 7, 0.2, 3.0, 0.8});
    auto charts = render_report_charts(table);
    REQUIRE_EQ(charts.size(), 2u);
    const std::string& svg = charts[0].second;
    std::size_t bars = 0;
    for (std::size_t pos = 0; (pos = svg.find("<rect", pos)) != std::string::npos; ++pos) ++bars;
    CHECK_EQ(bars, 2u);  // background + one bar
    CHECK(svg.find("STN") != std::string::npos);
    CHECK(svg.find("reference") != std::string::npos);
}

TEST_CASE("published reference values annotate the ARI chart") {
    CHECK_EQ(reference_ari().at(ConsistencyMode::ST), 0.13);
    CHECK_EQ(reference_ari().at(ConsistencyMode::STL), 0.082);
    CHECK_EQ(reference_ari().at(ConsistencyMode::STN), 0.045);
    CHECK_EQ(reference_ari().at(ConsistencyMode::STC), 0.035);
    ReportTable table{sample_rows()};
    auto charts = render_report_charts(table);
    CHECK(charts[0].second.find("0.13") != std::string::npos);
    CHECK(charts[0].second.find("0.035") != std::string::npos);
}

TEST_CASE("median helper") {
    CHECK_EQ(median({3.0}), 3.0);
    CHECK_EQ(median({1.0, 2.0, 9.0}), 2.0);
    CHECK_EQ(median({1.0, 2.0, 3.0, 10.0}), 2.5);
}

TEST_CASE("identity preservation counts objects surviving the blanked slice") {
    // gt: two objects on every frame; pred: object 1 intact after the blank,
    // object 2 lost.
    LabelMap gt(4, 4, 4, 0), pred(4, 4, 4, 0);
    for (int z = 0; z < 4; ++z) {
        gt.at(z, 0, 0) = 1;
        gt.at(z, 0, 1) = 1;
        gt.at(z, 3, 3) = 2;
        pred.at(z, 0, 0) = 1;
        pred.at(z, 0, 1) = 1;
        if (z < 2) pred.at(z, 3, 3) = 2;
    }
    const int blank = 1;
    CHECK_EQ(identity_preservation(pred, gt, blank), 0.5);
    // half coverage still counts as preserved
    pred.at(2, 0, 1) = 0;
    CHECK_EQ(identity_preservation(pred, gt, blank), 0.5);
    CHECK_THROWS_AS((void)identity_preservation(pred, gt, 3), bounds_error);
}

TEST_CASE("a micro ablation cell runs end to end and writes its artifacts") {
    AblateConfig cfg;
    cfg.modes = {ConsistencyMode::STN};
    cfg.seeds = {4};
    cfg.synth.z = 4;
    cfg.synth.y = 16;
    cfg.synth.x = 16;
    cfg.synth.object_count = 1;
    cfg.synth.radius_min = 2.0;
    cfg.synth.radius_max = 3.0;
    cfg.synth.noise_sigma = 0.01;
    cfg.volumes_per_cell = 2;
    cfg.blank_slice = 2;
    cfg.train.model.encoder.widths = {4, 4, 4, 4, 4};
    cfg.train.model.decoder.hidden_width = 2;
    cfg.train.model.decoder.objects_per_sequence = 1;
    cfg.train.model.decoder.sequence_length = 4;
    cfg.train.infer.chunk_length = 4;
    cfg.train.learning_rate = 1e-3;
    cfg.train.epochs = 3;
    cfg.train.teacher_forced_epochs = 1;
    cfg.train.checkpoint_every = 100;
    cfg.train.validate_every = 100;
    auto dir = crs_test::temp_dir("ablate_micro");
    cfg.out_dir = (dir / "out").string();
    cfg.workers = 1;
    AblateReport report = ablate(cfg);
    REQUIRE_EQ(report.rows.size(), 1u);
    CHECK_EQ(report.rows[0].mode, ConsistencyMode::STN);
    CHECK_EQ(report.rows[0].seed, 4u);
    CHECK(report.rows[0].ari >= 0.0);
    CHECK(std::filesystem::exists(report.csv_path));
    REQUIRE_EQ(report.chart_paths.size(), 2u);
    for (const auto& p : report.chart_paths) CHECK(std::filesystem::exists(p));
    std::filesystem::remove_all(dir);
}

TEST_CASE("ablate config validation") {
    AblateConfig cfg;
    cfg.modes = {};
    CHECK_THROWS_AS(cfg.validate(), usage_error);
    AblateConfig cfg2;
    cfg2.synth.z = 4;
    cfg2.blank_slice = 0;
    CHECK_THROWS_AS(cfg2.validate(), config_error);
}
