#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "crs/encoder.hpp"

#include "test_util.hpp"

using namespace crs;

namespace {

ModelConfig default_cfg() {
    ModelConfig cfg;
    cfg.decoder.hidden_width = 4;
    return cfg;
}

} // namespace

TEST_CASE("encode yields the five-level shape contract") {
    ModelConfig cfg = default_cfg();  // widths (64,48,32,16,8)
    auto store = init_model_params(cfg, 3);
    Tape t;
    auto m = bind_model(t, store, cfg);
    CounterRng rng(1);
    VarId in = t.constant(crs_test::random_tensor(2, 64, 64, rng, 0.0, 1.0));
    PyramidVars pyr = encode(t, m, in);
    const int expect_w[5] = {64, 48, 32, 16, 8};
    const int expect_hw[5] = {4, 8, 16, 32, 64};
    for (int k = 0; k < kPyramidLevels; ++k) {
        const Tensor& f = t.val(pyr.level[k]);
        CHECK_EQ(f.c, expect_w[k]);
        CHECK_EQ(f.h, expect_hw[k]);
        CHECK_EQ(f.w, expect_hw[k]);
        CHECK(f.all_finite());
    }
}

TEST_CASE("zero input with zero biases gives an all-zero pyramid") {
    ModelConfig cfg = default_cfg();
    auto store = init_model_params(cfg, 3);  // biases start at zero
    Tape t;
    auto m = bind_model(t, store, cfg);
    VarId in = t.constant(Tensor(2, 32, 32));
    PyramidVars pyr = encode(t, m, in);
    for (int k = 0; k < kPyramidLevels; ++k)
        for (double v : t.val(pyr.level[k]).data) CHECK_EQ(v, 0.0);
}

TEST_CASE("encode is a pure function of its input") {
    ModelConfig cfg = default_cfg();
    auto store = init_model_params(cfg, 5);
    CounterRng rng(2);
    Tensor input = crs_test::random_tensor(2, 32, 32, rng, 0.0, 1.0);
    std::vector<std::vector<double>> first;
    for (int run = 0; run < 2; ++run) {
        Tape t;
        auto m = bind_model(t, store, cfg);
        PyramidVars pyr = encode(t, m, t.constant(input));
        for (int k = 0; k < kPyramidLevels; ++k) {
            if (run == 0)
                first.push_back(t.val(pyr.level[k]).data);
            else
                CHECK(t.val(pyr.level[k]).data == first[static_cast<std::size_t>(k)]);
        }
    }
}

TEST_CASE("encode rejects dims not divisible by sixteen") {
    ModelConfig cfg = default_cfg();
    auto store = init_model_params(cfg, 3);
    Tape t;
    auto m = bind_model(t, store, cfg);
    CHECK_THROWS_AS((void)encode(t, m, t.constant(Tensor(2, 24, 32))), shape_error);
    CHECK_THROWS_AS((void)encode(t, m, t.constant(Tensor(3, 32, 32))), shape_error);
}

TEST_CASE("project maps every level to the decoder width") {
    ModelConfig cfg = default_cfg();
    cfg.decoder.hidden_width = 6;
    auto store = init_model_params(cfg, 7);
    Tape t;
    auto m = bind_model(t, store, cfg);
    CounterRng rng(3);
    VarId in = t.constant(crs_test::random_tensor(2, 32, 32, rng, 0.0, 1.0));
    PyramidVars proj = project(t, m, encode(t, m, in));
    for (int k = 0; k < kPyramidLevels; ++k) {
        const Tensor& f = t.val(proj.level[k]);
        CHECK_EQ(f.c, 6);
        CHECK_EQ(f.h, 32 / level_stride(k));
    }
}

TEST_CASE("zeroed projection kernels blank the projected pyramid") {
    ModelConfig cfg = default_cfg();
    auto store = init_model_params(cfg, 7);
    for (int k = 0; k < kPyramidLevels; ++k) {
        auto& w = store.at("proj.l" + std::to_string(k) + ".w").value;
        std::fill(w.data.begin(), w.data.end(), 0.0);
    }
    Tape t;
    auto m = bind_model(t, store, cfg);
    CounterRng rng(4);
    VarId in = t.constant(crs_test::random_tensor(2, 32, 32, rng, 0.0, 1.0));
    PyramidVars proj = project(t, m, encode(t, m, in));
    for (int k = 0; k < kPyramidLevels; ++k)
        for (double v : t.val(proj.level[k]).data) CHECK_EQ(v, 0.0);
}

TEST_CASE("identity 1x1 projection passes features through when widths agree") {
    ModelConfig cfg = default_cfg();
    cfg.encoder.widths = {4, 4, 4, 4, 4};
    cfg.decoder.hidden_width = 4;
    auto store = init_model_params(cfg, 7);
    for (int k = 0; k < kPyramidLevels; ++k) {
        auto& w = store.at("proj.l" + std::to_string(k) + ".w").value;
        std::fill(w.data.begin(), w.data.end(), 0.0);
        for (int c = 0; c < 4; ++c) w.at(c * 4 + c, 0, 0) = 1.0;  // identity
    }
    Tape t;
    auto m = bind_model(t, store, cfg);
    CounterRng rng(5);
    VarId in = t.constant(crs_test::random_tensor(2, 32, 32, rng, 0.0, 1.0));
    PyramidVars enc = encode(t, m, in);
    PyramidVars proj = project(t, m, enc);
    for (int k = 0; k < kPyramidLevels; ++k)
        CHECK(t.val(proj.level[k]).data == t.val(enc.level[k]).data);
}

TEST_CASE("make_encoder_input replicates intensity and appends the estimate") {
    Frame f(16, 16, 0.25);
    Tensor est(1, 16, 16, 1.0);
    Tensor in = make_encoder_input(f, est, 4);
    CHECK_EQ(in.c, 4);
    for (int c = 0; c < 3; ++c) CHECK_EQ(in.at(c, 3, 3), 0.25);
    CHECK_EQ(in.at(3, 3, 3), 1.0);
    Tensor bad(1, 8, 8);
    CHECK_THROWS_AS((void)make_encoder_input(f, bad, 2), shape_error);
}
