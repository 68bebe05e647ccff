#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <numeric>

#include "crs/loss.hpp"

#include "test_util.hpp"

using namespace crs;

TEST_CASE("siou worked values") {
    SUBCASE("identical binary tubes cost nothing") {
        std::vector<double> m = {1, 0, 1, 1};
        CHECK_EQ(siou_value(m, m), 0.0);
    }
    SUBCASE("disjoint nonempty tubes cost one") {
        std::vector<double> m = {1, 1, 0, 0};
        std::vector<double> g = {0, 0, 1, 1};
        CHECK_EQ(siou_value(m, g), 1.0);
    }
    SUBCASE("soft half-half against a one-hot costs two thirds") {
        std::vector<double> m = {0.5, 0.5};
        std::vector<double> g = {1.0, 0.0};
        CHECK_EQ(doctest::Approx(siou_value(m, g)).epsilon(1e-12), 2.0 / 3.0);
    }
    SUBCASE("empty versus empty is zero by the denominator guard") {
        std::vector<double> z = {0, 0, 0};
        CHECK_EQ(siou_value(z, z), 0.0);
    }
    SUBCASE("nonempty prediction against empty truth is a pure false positive") {
        std::vector<double> m = {0.3, 0.7};
        std::vector<double> z = {0, 0};
        CHECK_EQ(siou_value(m, z), 1.0);
    }
    SUBCASE("length mismatch fails") {
        std::vector<double> a = {1.0};
        std::vector<double> b = {1.0, 0.0};
        CHECK_THROWS_AS((void)siou_value(std::span<const double>(a), std::span<const double>(b)),
                        shape_error);
    }
}

TEST_CASE("tape siou agrees with the value form and stays in [0,1]") {
    CounterRng rng(1);
    for (int it = 0; it < 20; ++it) {
        Tape t;
        std::vector<Tensor> m, g;
        std::vector<VarId> mv, gv;
        for (int f = 0; f < 3; ++f) {
            m.push_back(crs_test::random_tensor(1, 3, 3, rng, 0.0, 1.0));
            Tensor gb(1, 3, 3);
            for (double& v : gb.data) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
            g.push_back(gb);
            mv.push_back(t.constant(m.back()));
            gv.push_back(t.constant(g.back()));
        }
        const double expect = siou_value(m, g);
        const double got = t.val(siou(t, mv, gv)).item();
        CHECK_EQ(doctest::Approx(got).epsilon(1e-12), expect);
        CHECK(got >= 0.0);
        CHECK(got <= 1.0);
    }
}

TEST_CASE("hungarian worked examples") {
    CHECK_EQ(hungarian({{0.4}}), std::vector<int>{0});
    CHECK_EQ(hungarian({{1, 2}, {2, 1}}), std::vector<int>{0, 1});
    CHECK_EQ(hungarian({{0.9, 0.1}, {0.2, 0.8}}), std::vector<int>{1, 0});
}

TEST_CASE("hungarian rejects bad matrices") {
    CHECK_THROWS_AS((void)hungarian({}), shape_error);
    CHECK_THROWS_AS((void)hungarian({{1.0, 2.0}}), shape_error);
    CHECK_THROWS_AS((void)hungarian({{1.0, std::numeric_limits<double>::infinity()},
                                     {0.0, 1.0}}),
                    shape_error);
}

namespace {

double exhaustive_min_cost(const std::vector<std::vector<double>>& c) {
    const int n = static_cast<int>(c.size());
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += c[i][static_cast<std::size_t>(perm[i])];
        best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

std::vector<int> exhaustive_lex_argmin(const std::vector<std::vector<double>>& c, double tol) {
    const int n = static_cast<int>(c.size());
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    const double best = exhaustive_min_cost(c);
    // next_permutation enumerates in lexicographic order, so the first
    // optimal permutation seen is the lexicographically smallest.
    do {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += c[i][static_cast<std::size_t>(perm[i])];
        if (s <= best + tol) return perm;
    } while (std::next_permutation(perm.begin(), perm.end()));
    return perm;
}

} // namespace

TEST_CASE("hungarian equals the exhaustive oracle on random matrices") {
    CounterRng rng(7);
    for (int it = 0; it < 300; ++it) {
        const int n = 1 + static_cast<int>(rng.below(7));
        std::vector<std::vector<double>> c(static_cast<std::size_t>(n),
                                           std::vector<double>(static_cast<std::size_t>(n)));
        for (auto& row : c)
            for (double& v : row) v = rng.uniform();
        auto perm = hungarian(c);
        double got = 0.0;
        for (int i = 0; i < n; ++i) got += c[i][static_cast<std::size_t>(perm[i])];
        CHECK_EQ(got, exhaustive_min_cost(c));
    }
}

TEST_CASE("ties break to the lexicographically smallest optimal permutation") {
    CHECK_EQ(hungarian({{0, 0}, {0, 0}}), std::vector<int>{0, 1});
    CHECK_EQ(hungarian({{1, 1, 1}, {1, 1, 1}, {1, 1, 1}}), std::vector<int>{0, 1, 2});
    CHECK_EQ(hungarian({{0, 1}, {0, 1}}), std::vector<int>{0, 1});
    // quantized costs force many exact ties
    CounterRng rng(8);
    for (int it = 0; it < 100; ++it) {
        const int n = 2 + static_cast<int>(rng.below(4));
        std::vector<std::vector<double>> c(static_cast<std::size_t>(n),
                                           std::vector<double>(static_cast<std::size_t>(n)));
        for (auto& row : c)
            for (double& v : row) v = 0.25 * static_cast<double>(rng.below(3));
        CHECK_EQ(hungarian(c), exhaustive_lex_argmin(c, 1e-12));
    }
}

namespace {

/// Wraps per-(frame, slot) mask tensors as tape leaves.
MaskSequenceVars leaf_masks(Tape& t, const std::vector<std::vector<Tensor>>& by_frame) {
    MaskSequenceVars s;
    s.frames = static_cast<int>(by_frame.size());
    s.slots = static_cast<int>(by_frame[0].size());
    for (const auto& frame : by_frame)
        for (const Tensor& m : frame) s.masks.push_back(t.leaf(m));
    for (int o = 0; o < s.slots; ++o) s.ids.push_back(static_cast<std::uint32_t>(o + 1));
    return s;
}

MaskSequenceVars const_masks(Tape& t, const std::vector<std::vector<Tensor>>& by_frame) {
    MaskSequenceVars s;
    s.frames = static_cast<int>(by_frame.size());
    s.slots = static_cast<int>(by_frame[0].size());
    for (const auto& frame : by_frame)
        for (const Tensor& m : frame) s.masks.push_back(t.constant(m));
    for (int o = 0; o < s.slots; ++o) s.ids.push_back(static_cast<std::uint32_t>(o + 1));
    return s;
}

std::vector<std::vector<Tensor>> random_binary_masks(int frames, int slots, int h, int w,
                                                     CounterRng& rng) {
    std::vector<std::vector<Tensor>> out(static_cast<std::size_t>(frames));
    for (auto& fr : out)
        for (int o = 0; o < slots; ++o) {
            Tensor m(1, h, w);
            for (double& v : m.data) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
            fr.push_back(std::move(m));
        }
    return out;
}

} // namespace

TEST_CASE("sequence_loss is zero for a perfect prediction and under slot swaps") {
    CounterRng rng(9);
    auto gt_masks = random_binary_masks(3, 2, 4, 4, rng);
    {
        Tape t;
        auto pred = const_masks(t, gt_masks);
        auto gt = const_masks(t, gt_masks);
        auto sl = sequence_loss(t, pred, gt);
        CHECK_EQ(t.val(sl.loss).item(), 0.0);
        CHECK_EQ(sl.assignment, std::vector<int>{0, 1});
    }
    {
        auto swapped = gt_masks;
        for (auto& fr : swapped) std::swap(fr[0], fr[1]);
        Tape t;
        auto pred = const_masks(t, swapped);
        auto gt = const_masks(t, gt_masks);
        auto sl = sequence_loss(t, pred, gt);
        CHECK_EQ(t.val(sl.loss).item(), 0.0);
        CHECK_EQ(sl.assignment, std::vector<int>{1, 0});
    }
}

TEST_CASE("sequence_loss equals the exhaustive permutation minimum on random toys") {
    CounterRng rng(10);
    for (int it = 0; it < 10; ++it) {
        const int M = 3, N = 2;
        std::vector<std::vector<Tensor>> pred_masks(static_cast<std::size_t>(N)),
            gt_masks(static_cast<std::size_t>(N));
        for (int f = 0; f < N; ++f)
            for (int o = 0; o < M; ++o) {
                pred_masks[f].push_back(crs_test::random_tensor(1, 3, 3, rng, 0.0, 1.0));
                Tensor g(1, 3, 3);
                for (double& v : g.data) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
                gt_masks[f].push_back(std::move(g));
            }
        Tape t;
        auto pred = const_masks(t, pred_masks);
        auto gt = const_masks(t, gt_masks);
        auto sl = sequence_loss(t, pred, gt);

        // oracle: minimum over all 6 permutations of the mean tube sIoU
        std::vector<int> perm = {0, 1, 2};
        double best = std::numeric_limits<double>::infinity();
        do {
            double s = 0.0;
            for (int i = 0; i < M; ++i) {
                std::vector<Tensor> tm, tg;
                for (int f = 0; f < N; ++f) {
                    tm.push_back(pred_masks[f][static_cast<std::size_t>(i)]);
                    tg.push_back(gt_masks[f][static_cast<std::size_t>(perm[i])]);
                }
                s += siou_value(tm, tg);
            }
            best = std::min(best, s / M);
        } while (std::next_permutation(perm.begin(), perm.end()));
        CHECK_EQ(doctest::Approx(t.val(sl.loss).item()).epsilon(1e-12), best);
        CHECK(t.val(sl.loss).item() >= 0.0);
        CHECK(t.val(sl.loss).item() <= 1.0);
    }
}

TEST_CASE("sequence_loss is invariant to permuting predicted slots") {
    CounterRng rng(11);
    const int M = 3, N = 2;
    std::vector<std::vector<Tensor>> pred_masks(static_cast<std::size_t>(N)),
        gt_masks(static_cast<std::size_t>(N));
    for (int f = 0; f < N; ++f)
        for (int o = 0; o < M; ++o) {
            pred_masks[f].push_back(crs_test::random_tensor(1, 3, 3, rng, 0.0, 1.0));
            Tensor g(1, 3, 3);
            for (double& v : g.data) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
            gt_masks[f].push_back(std::move(g));
        }
    double base;
    {
        Tape t;
        base = t.val(sequence_loss(t, const_masks(t, pred_masks), const_masks(t, gt_masks)).loss)
                   .item();
    }
    std::vector<int> perm = {2, 0, 1};
    auto permuted = pred_masks;
    for (int f = 0; f < N; ++f)
        for (int o = 0; o < M; ++o)
            permuted[f][static_cast<std::size_t>(o)] =
                pred_masks[f][static_cast<std::size_t>(perm[o])];
    Tape t;
    const double got =
        t.val(sequence_loss(t, const_masks(t, permuted), const_masks(t, gt_masks)).loss).item();
    CHECK_EQ(doctest::Approx(got).epsilon(1e-12), base);
}

TEST_CASE("sequence_loss rejects frame-count mismatches") {
    CounterRng rng(12);
    auto a = random_binary_masks(2, 2, 3, 3, rng);
    auto b = random_binary_masks(3, 2, 3, 3, rng);
    Tape t;
    auto pred = const_masks(t, a);
    auto gt = const_masks(t, b);
    CHECK_THROWS_AS((void)sequence_loss(t, pred, gt), shape_error);
}

TEST_CASE("sequence_loss gradients on matched pairs match finite differences") {
    CounterRng rng(13);
    const int M = 2, N = 2;
    // Well-separated masks keep the assignment stable under perturbation.
    std::vector<std::vector<Tensor>> pred_masks(static_cast<std::size_t>(N)),
        gt_masks(static_cast<std::size_t>(N));
    for (int f = 0; f < N; ++f) {
        Tensor p0(1, 4, 4), p1(1, 4, 4), g0(1, 4, 4), g1(1, 4, 4);
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) {
                const bool left = x < 2;
                p0.at(0, y, x) = left ? rng.uniform(0.6, 0.9) : rng.uniform(0.05, 0.2);
                p1.at(0, y, x) = left ? rng.uniform(0.05, 0.2) : rng.uniform(0.6, 0.9);
                g0.at(0, y, x) = left ? 1.0 : 0.0;
                g1.at(0, y, x) = left ? 0.0 : 1.0;
            }
        pred_masks[f] = {p0, p1};
        gt_masks[f] = {g0, g1};
    }

    auto run = [&](const std::vector<Tensor>& in) {
        std::vector<std::vector<Tensor>> pm(static_cast<std::size_t>(N));
        for (int f = 0; f < N; ++f)
            for (int o = 0; o < M; ++o) pm[f].push_back(in[static_cast<std::size_t>(f) * M + o]);
        Tape t;
        auto pred = leaf_masks(t, pm);
        auto gt = const_masks(t, gt_masks);
        return t.val(sequence_loss(t, pred, gt).loss).item();
    };

    std::vector<Tensor> inputs;
    for (int f = 0; f < N; ++f)
        for (int o = 0; o < M; ++o) inputs.push_back(pred_masks[f][static_cast<std::size_t>(o)]);

    Tape t;
    auto pred = leaf_masks(t, pred_masks);
    auto gt = const_masks(t, gt_masks);
    auto sl = sequence_loss(t, pred, gt);
    t.backward(sl.loss);
    std::vector<Tensor> grads;
    for (int f = 0; f < N; ++f)
        for (int o = 0; o < M; ++o)
            grads.push_back(t.grad_of(pred.masks[static_cast<std::size_t>(f) * M + o]));

    auto r = crs_test::fd_check(run, inputs, grads, rng.derive(4));
    CHECK(r.max_err < 1e-5);
}

TEST_CASE("ground_truth_masks pads to the slot count with zero tubes") {
    LabelMap2D l(4, 4, 0);
    l.at(0, 0) = 3;
    l.at(2, 2) = 7;
    Tape t;
    auto gt = ground_truth_masks(t, {l, l}, {3u, 7u}, 4);
    CHECK_EQ(gt.frames, 2);
    CHECK_EQ(gt.slots, 4);
    CHECK_EQ(t.val(gt.mask(0, 0)).at(0, 0, 0), 1.0);
    CHECK_EQ(t.val(gt.mask(1, 1)).at(0, 2, 2), 1.0);
    for (double v : t.val(gt.mask(0, 2)).data) CHECK_EQ(v, 0.0);
    for (double v : t.val(gt.mask(1, 3)).data) CHECK_EQ(v, 0.0);
}
