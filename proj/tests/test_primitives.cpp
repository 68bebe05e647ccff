#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "crs/convlstm.hpp"
#include "crs/kernels.hpp"
#include "crs/tape.hpp"

#include "test_util.hpp"

using namespace crs;
using crs_test::random_tensor;

TEST_CASE("conv2d with a 1x1 identity kernel passes input through") {
    CounterRng rng(1);
    Tensor x = random_tensor(3, 5, 4, rng);
    Tensor w(3 * 3, 1, 1);  // (C_out=3, C_in=3, 1, 1)
    for (int co = 0; co < 3; ++co) w.at(co * 3 + co, 0, 0) = 1.0;
    Tensor out = conv2d_fwd(x, w, nullptr);
    REQUIRE(out.same_shape(x));
    for (std::size_t i = 0; i < x.data.size(); ++i) CHECK_EQ(out.data[i], x.data[i]);
}

TEST_CASE("conv2d with a zero kernel emits the bias everywhere") {
    CounterRng rng(2);
    Tensor x = random_tensor(2, 4, 4, rng);
    Tensor w(2 * 2, 3, 3);
    Tensor b(2, 1, 1);
    b.data = {0.25, -1.5};
    Tensor out = conv2d_fwd(x, w, &b);
    for (int y = 0; y < 4; ++y)
        for (int xx = 0; xx < 4; ++xx) {
            CHECK_EQ(out.at(0, y, xx), 0.25);
            CHECK_EQ(out.at(1, y, xx), -1.5);
        }
}

TEST_CASE("conv2d ones kernel turns a one-hot into a 3x3 block") {
    Tensor x(1, 5, 5);
    x.at(0, 2, 2) = 1.0;
    Tensor w(1, 3, 3, 1.0);
    Tensor out = conv2d_fwd(x, w, nullptr);
    for (int y = 0; y < 5; ++y)
        for (int xx = 0; xx < 5; ++xx) {
            const bool inside = std::abs(y - 2) <= 1 && std::abs(xx - 2) <= 1;
            CHECK_EQ(out.at(0, y, xx), inside ? 1.0 : 0.0);
        }
}

TEST_CASE("conv2d stride two halves even spatial dims") {
    CounterRng rng(3);
    Tensor x = random_tensor(2, 8, 6, rng);
    Tensor w = random_tensor(3 * 2, 3, 3, rng);
    Tensor out = conv2d_fwd(x, w, nullptr, 2);
    CHECK_EQ(out.c, 3);
    CHECK_EQ(out.h, 4);
    CHECK_EQ(out.w, 3);
}

TEST_CASE("conv2d rejects mismatched shapes") {
    Tensor x(3, 4, 4);
    Tensor w(4, 3, 3);  // 4 not a multiple of 3
    CHECK_THROWS_AS((void)conv2d_fwd(x, w, nullptr), shape_error);
    Tensor weven(3, 2, 2);
    CHECK_THROWS_AS((void)conv2d_fwd(x, weven, nullptr), shape_error);
}

TEST_CASE("bilinear_upsample2x keeps constants and doubles dims") {
    Tensor x(3, 4, 4, 0.7);
    Tensor out = bilinear_upsample2x_fwd(x);
    CHECK_EQ(out.c, 3);
    CHECK_EQ(out.h, 8);
    CHECK_EQ(out.w, 8);
    for (double v : out.data) CHECK_EQ(v, 0.7);
}

TEST_CASE("bilinear_upsample2x half-pixel row example") {
    Tensor x(1, 1, 2);
    x.data = {0.0, 1.0};
    Tensor out = bilinear_upsample2x_fwd(x);
    REQUIRE_EQ(out.h, 2);
    REQUIRE_EQ(out.w, 4);
    const double expect[4] = {0.0, 0.25, 0.75, 1.0};
    for (int y = 0; y < 2; ++y)
        for (int xx = 0; xx < 4; ++xx) CHECK_EQ(out.at(0, y, xx), expect[xx]);
}

TEST_CASE("bilinear_upsample2x stays inside the input min/max interval") {
    CounterRng rng(4);
    for (int it = 0; it < 10; ++it) {
        Tensor x = random_tensor(2, 3, 5, rng, -2.0, 2.0);
        double lo = 1e9, hi = -1e9;
        for (double v : x.data) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        Tensor out = bilinear_upsample2x_fwd(x);
        for (double v : out.data) {
            CHECK(v >= lo - 1e-12);
            CHECK(v <= hi + 1e-12);
        }
    }
}

TEST_CASE("nearest_downsample2x picks the top-left sample") {
    Tensor x(1, 2, 2);
    x.data = {1.0, 2.0, 3.0, 4.0};
    Tensor out = nearest_downsample2x_fwd(x);
    REQUIRE_EQ(out.h, 1);
    CHECK_EQ(out.at(0, 0, 0), 1.0);

    Tensor ramp(1, 4, 4);
    for (int i = 0; i < 16; ++i) ramp.data[i] = i;
    Tensor d = nearest_downsample2x_fwd(ramp);
    CHECK_EQ(d.at(0, 0, 0), 0.0);
    CHECK_EQ(d.at(0, 0, 1), 2.0);
    CHECK_EQ(d.at(0, 1, 0), 8.0);
    CHECK_EQ(d.at(0, 1, 1), 10.0);

    Tensor c(3, 6, 6, 0.3);
    Tensor dc = nearest_downsample2x_fwd(c);
    for (double v : dc.data) CHECK_EQ(v, 0.3);

    Tensor odd(1, 3, 4);
    CHECK_THROWS_AS((void)nearest_downsample2x_fwd(odd), shape_error);
}

TEST_CASE("convlstm_cell fixes: zero params freeze everything at zero") {
    Tape t;
    CounterRng rng(5);
    VarId x = t.constant(random_tensor(2, 4, 4, rng));
    VarId h = t.constant(Tensor(3, 4, 4));
    VarId c = t.constant(Tensor(3, 4, 4));
    ConvLstmVars p;
    p.wx_i = t.constant(Tensor(3 * 2, 3, 3));
    p.wx_f = t.constant(Tensor(3 * 2, 3, 3));
    p.wx_o = t.constant(Tensor(3 * 2, 3, 3));
    p.wx_g = t.constant(Tensor(3 * 2, 3, 3));
    p.wh_i = t.constant(Tensor(3 * 3, 3, 3));
    p.wh_f = t.constant(Tensor(3 * 3, 3, 3));
    p.wh_o = t.constant(Tensor(3 * 3, 3, 3));
    p.wh_g = t.constant(Tensor(3 * 3, 3, 3));
    p.b_i = t.constant(Tensor(3, 1, 1));
    p.b_f = t.constant(Tensor(3, 1, 1));
    p.b_o = t.constant(Tensor(3, 1, 1));
    p.b_g = t.constant(Tensor(3, 1, 1));
    auto [hn, cn] = convlstm_cell(t, x, h, c, p);
    for (double v : t.val(hn).data) CHECK_EQ(v, 0.0);
    for (double v : t.val(cn).data) CHECK_EQ(v, 0.0);
}

TEST_CASE("convlstm_cell saturated candidate gate lands at the derived point") {
    // zero weights, b_g = 1000 (tanh saturates to 1), all other biases zero,
    // zero previous cell: c = 0.5, h = 0.5 * tanh(0.5).
    Tape t;
    CounterRng rng(6);
    VarId x = t.constant(random_tensor(2, 3, 3, rng));
    VarId h = t.constant(Tensor(1, 3, 3));
    VarId c = t.constant(Tensor(1, 3, 3));
    ConvLstmVars p;
    p.wx_i = t.constant(Tensor(2, 3, 3));
    p.wx_f = t.constant(Tensor(2, 3, 3));
    p.wx_o = t.constant(Tensor(2, 3, 3));
    p.wx_g = t.constant(Tensor(2, 3, 3));
    p.wh_i = t.constant(Tensor(1, 3, 3));
    p.wh_f = t.constant(Tensor(1, 3, 3));
    p.wh_o = t.constant(Tensor(1, 3, 3));
    p.wh_g = t.constant(Tensor(1, 3, 3));
    p.b_i = t.constant(Tensor(1, 1, 1));
    p.b_f = t.constant(Tensor(1, 1, 1));
    p.b_o = t.constant(Tensor(1, 1, 1));
    p.b_g = t.constant(Tensor::scalar(1000.0));
    auto [hn, cn] = convlstm_cell(t, x, h, c, p);
    for (double v : t.val(cn).data) CHECK_EQ(doctest::Approx(v).epsilon(1e-9), 0.5);
    const double expect_h = 0.5 * std::tanh(0.5);  // 0.23105857863...
    for (double v : t.val(hn).data) CHECK_EQ(doctest::Approx(v).epsilon(1e-6), expect_h);
    CHECK_EQ(doctest::Approx(expect_h).epsilon(1e-5), 0.23106);
}

TEST_CASE("convlstm_cell shape contract") {
    Tape t;
    CounterRng rng(7);
    ParamStore store;
    register_convlstm_params(store, "cell", 4, 6, 6, rng);
    auto bound = bind_params(t, store);
    auto vars = convlstm_vars(store, bound, "cell");
    VarId x = t.constant(random_tensor(4, 8, 8, rng));
    VarId h = t.constant(random_tensor(6, 8, 8, rng));
    VarId c = t.constant(random_tensor(6, 8, 8, rng));
    auto [hn, cn] = convlstm_cell(t, x, h, c, vars);
    CHECK_EQ(t.val(hn).c, 6);
    CHECK_EQ(t.val(hn).h, 8);
    CHECK_EQ(t.val(hn).w, 8);
    CHECK(t.val(cn).same_shape(t.val(hn)));
    CHECK(t.val(hn).all_finite());
}

TEST_CASE("convlstm_cell gates stay in (0,1) and memory growth is bounded") {
    CounterRng rng(8);
    for (int it = 0; it < 5; ++it) {
        Tape t;
        ParamStore store;
        register_convlstm_params(store, "cell", 3, 4, 4, rng);
        auto bound = bind_params(t, store);
        auto vars = convlstm_vars(store, bound, "cell");
        Tensor c_prev_t = random_tensor(4, 6, 6, rng, -2.0, 2.0);
        VarId x = t.constant(random_tensor(3, 6, 6, rng, -3.0, 3.0));
        VarId h = t.constant(random_tensor(4, 6, 6, rng, -3.0, 3.0));
        VarId c_prev = t.constant(c_prev_t);
        auto [hn, cn] = convlstm_cell(t, x, h, c_prev, vars);
        // |c| <= f*|c_prev| + 1 elementwise, and f in (0,1) gives |c| <= |c_prev| + 1.
        const Tensor& cv = t.val(cn);
        for (std::size_t i = 0; i < cv.data.size(); ++i)
            CHECK(std::fabs(cv.data[i]) <= std::fabs(c_prev_t.data[i]) + 1.0 + 1e-12);
        const Tensor& hv = t.val(hn);
        for (double v : hv.data) CHECK(std::fabs(v) < 1.0);
    }
}

// ---------------------------------------------------------------------------
// Gradient checks. Scalarize each op with a fixed random projection.
// ---------------------------------------------------------------------------

TEST_CASE("conv2d gradients match finite differences") {
    CounterRng rng(10);
    for (int stride : {1, 2}) {
        Tensor x = random_tensor(3, 6, 6, rng);
        Tensor w = random_tensor(2 * 3, 3, 3, rng);
        Tensor b = random_tensor(2, 1, 1, rng);
        Tensor proj = random_tensor(2, stride == 1 ? 6 : 3, stride == 1 ? 6 : 3, rng);

        auto run = [&](const std::vector<Tensor>& in) {
            Tape t;
            VarId xv = t.leaf(in[0]);
            VarId wv = t.leaf(in[1]);
            VarId bv = t.leaf(in[2]);
            return t.val(dot(t, conv2d(t, xv, wv, bv, stride), t.constant(proj))).item();
        };

        Tape t;
        VarId xv = t.leaf(x);
        VarId wv = t.leaf(w);
        VarId bv = t.leaf(b);
        VarId loss = dot(t, conv2d(t, xv, wv, bv, stride), t.constant(proj));
        t.backward(loss);
        std::vector<Tensor> grads = {t.grad_of(xv), t.grad_of(wv), t.grad_of(bv)};

        auto r = crs_test::fd_check(run, {x, w, b}, grads, rng.derive(stride));
        CHECK(r.max_err < 1e-4);
    }
}

TEST_CASE("bilinear_upsample2x gradients match finite differences") {
    CounterRng rng(11);
    Tensor x = random_tensor(2, 3, 4, rng);
    Tensor proj = random_tensor(2, 6, 8, rng);
    auto run = [&](const std::vector<Tensor>& in) {
        Tape t;
        return t.val(dot(t, bilinear_upsample2x(t, t.leaf(in[0])), t.constant(proj))).item();
    };
    Tape t;
    VarId xv = t.leaf(x);
    VarId loss = dot(t, bilinear_upsample2x(t, xv), t.constant(proj));
    t.backward(loss);
    auto r = crs_test::fd_check(run, {x}, {t.grad_of(xv)}, rng.derive(1));
    CHECK(r.max_err < 1e-4);
}

TEST_CASE("nearest_downsample2x gradients match finite differences") {
    CounterRng rng(12);
    Tensor x = random_tensor(2, 4, 6, rng);
    Tensor proj = random_tensor(2, 2, 3, rng);
    auto run = [&](const std::vector<Tensor>& in) {
        Tape t;
        return t.val(dot(t, nearest_downsample2x(t, t.leaf(in[0])), t.constant(proj))).item();
    };
    Tape t;
    VarId xv = t.leaf(x);
    VarId loss = dot(t, nearest_downsample2x(t, xv), t.constant(proj));
    t.backward(loss);
    auto r = crs_test::fd_check(run, {x}, {t.grad_of(xv)}, rng.derive(1));
    CHECK(r.max_err < 1e-4);
}

TEST_CASE("composed convlstm_cell gradients match finite differences") {
    CounterRng rng(13);
    ParamStore store;
    register_convlstm_params(store, "cell", 2, 3, 3, rng);
    Tensor x = random_tensor(2, 4, 4, rng);
    Tensor h_prev = random_tensor(3, 4, 4, rng);
    Tensor c_prev = random_tensor(3, 4, 4, rng);
    Tensor proj_h = random_tensor(3, 4, 4, rng);
    Tensor proj_c = random_tensor(3, 4, 4, rng);

    // inputs vector: x, h_prev, c_prev, then every parameter in store order
    auto assemble = [&](const std::vector<Tensor>& in) {
        ParamStore s2;
        for (std::size_t i = 0; i < store.size(); ++i)
            s2.add(store[static_cast<int>(i)].name, in[3 + i]);
        return s2;
    };
    auto run = [&](const std::vector<Tensor>& in) {
        ParamStore s2 = assemble(in);
        Tape t;
        auto bound = bind_params(t, s2);
        auto vars = convlstm_vars(s2, bound, "cell");
        auto [hn, cn] = convlstm_cell(t, t.leaf(in[0]), t.leaf(in[1]), t.leaf(in[2]), vars);
        VarId loss = add(t, dot(t, hn, t.constant(proj_h)), dot(t, cn, t.constant(proj_c)));
        return t.val(loss).item();
    };

    std::vector<Tensor> inputs = {x, h_prev, c_prev};
    for (std::size_t i = 0; i < store.size(); ++i) inputs.push_back(store[static_cast<int>(i)].value);

    Tape t;
    VarId xv = t.leaf(x);
    VarId hv = t.leaf(h_prev);
    VarId cv = t.leaf(c_prev);
    auto bound = bind_params(t, store);
    auto vars = convlstm_vars(store, bound, "cell");
    auto [hn, cn] = convlstm_cell(t, xv, hv, cv, vars);
    VarId loss = add(t, dot(t, hn, t.constant(proj_h)), dot(t, cn, t.constant(proj_c)));
    t.backward(loss);

    std::vector<Tensor> grads = {t.grad_of(xv), t.grad_of(hv), t.grad_of(cv)};
    for (std::size_t i = 0; i < store.size(); ++i) grads.push_back(t.grad_of(bound.ids[i]));

    auto r = crs_test::fd_check(run, inputs, grads, rng.derive(9), 120);
    CHECK(r.max_err < 1e-4);
}

TEST_CASE("elementwise and reduction op gradients match finite differences") {
    CounterRng rng(14);
    Tensor a = random_tensor(2, 3, 3, rng, 0.2, 1.5);
    Tensor b = random_tensor(2, 3, 3, rng, 0.2, 1.5);
    auto run = [&](const std::vector<Tensor>& in) {
        Tape t;
        VarId av = t.leaf(in[0]);
        VarId bv = t.leaf(in[1]);
        VarId e = mul(t, sigmoid(t, av), tanh_act(t, bv));
        e = add(t, e, divide(t, av, bv));
        e = sub(t, e, relu(t, affine(t, av, -1.3, 0.2)));
        return t.val(add(t, sum_all(t, e), dot(t, av, bv))).item();
    };
    Tape t;
    VarId av = t.leaf(a);
    VarId bv = t.leaf(b);
    VarId e = mul(t, sigmoid(t, av), tanh_act(t, bv));
    e = add(t, e, divide(t, av, bv));
    e = sub(t, e, relu(t, affine(t, av, -1.3, 0.2)));
    VarId loss = add(t, sum_all(t, e), dot(t, av, bv));
    t.backward(loss);
    auto r = crs_test::fd_check(run, {a, b}, {t.grad_of(av), t.grad_of(bv)}, rng.derive(2));
    CHECK(r.max_err < 1e-4);
}

TEST_CASE("concat and slice route gradients to the right channels") {
    CounterRng rng(15);
    Tensor a = random_tensor(2, 3, 3, rng);
    Tensor b = random_tensor(3, 3, 3, rng);
    Tensor proj = random_tensor(2, 3, 3, rng);
    auto run = [&](const std::vector<Tensor>& in) {
        Tape t;
        VarId av = t.leaf(in[0]);
        VarId bv = t.leaf(in[1]);
        VarId cat = concat_channels(t, {av, bv});
        return t.val(dot(t, slice_channels(t, cat, 1, 2), t.constant(proj))).item();
    };
    Tape t;
    VarId av = t.leaf(a);
    VarId bv = t.leaf(b);
    VarId cat = concat_channels(t, {av, bv});
    VarId loss = dot(t, slice_channels(t, cat, 1, 2), t.constant(proj));
    t.backward(loss);
    auto r = crs_test::fd_check(run, {a, b}, {t.grad_of(av), t.grad_of(bv)}, rng.derive(3));
    CHECK(r.max_err < 1e-4);
}

TEST_CASE("checkpoint save and load round trip at f32 precision") {
    CounterRng rng(16);
    ParamStore store;
    store.add("a.w", crs_test::random_tensor(2, 3, 3, rng));
    store.add("b.bias", crs_test::random_tensor(4, 1, 1, rng));
    auto dir = crs_test::temp_dir("ckpt");
    const std::string path = (dir / "m.ckpt").string();
    save_checkpoint(store, path, {{"note", 1}});
    auto ck = load_checkpoint(path);
    REQUIRE_EQ(ck.store.size(), 2u);
    CHECK_EQ(ck.meta.at("note").get<int>(), 1);
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& orig = store[static_cast<int>(i)];
        const auto& back = ck.store[static_cast<int>(i)];
        CHECK_EQ(orig.name, back.name);
        REQUIRE(orig.value.same_shape(back.value));
        for (std::size_t j = 0; j < orig.value.size(); ++j)
            CHECK_EQ(static_cast<double>(static_cast<float>(orig.value.data[j])), back.value.data[j]);
    }
    std::filesystem::remove_all(dir);
}
