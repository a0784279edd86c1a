#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "segflow/gradcheck.hpp"
#include "segflow/ops.hpp"
#include "segflow/rng.hpp"
#include "segflow/tensor.hpp"

using namespace segflow;

namespace {

Tensor<double> random_tensor(Rng& rng, std::vector<int> shape, double lo, double hi) {
    Tensor<double> t(std::move(shape));
    for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Independent SSIM oracle: explicit replicate-padded window gather, stats via
// two-pass mean/variance (different arithmetic organization than ops.hpp).
double ssim_loss_oracle(const Tensor<double>& a, const Tensor<double>& b, const LossConfig& cfg) {
    const int C = a.dim(0), H = a.dim(1), W = a.dim(2), r = cfg.ssim_window / 2;
    const int n = cfg.ssim_window * cfg.ssim_window;
    double total = 0.0;
    for (int ch = 0; ch < C; ++ch)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                std::vector<double> wa, wb;
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx) {
                        int yy = std::min(std::max(y + dy, 0), H - 1);
                        int xx = std::min(std::max(x + dx, 0), W - 1);
                        wa.push_back(a(ch, yy, xx));
                        wb.push_back(b(ch, yy, xx));
                    }
                double ma = 0, mb = 0;
                for (int k = 0; k < n; ++k) {
                    ma += wa[k];
                    mb += wb[k];
                }
                ma /= n;
                mb /= n;
                double va = 0, vb = 0, vab = 0;
                for (int k = 0; k < n; ++k) {
                    va += (wa[k] - ma) * (wa[k] - ma);
                    vb += (wb[k] - mb) * (wb[k] - mb);
                    vab += (wa[k] - ma) * (wb[k] - mb);
                }
                va /= n;
                vb /= n;
                vab /= n;
                const double ssim = ((2 * ma * mb + cfg.c1) * (2 * vab + cfg.c2)) /
                                    ((ma * ma + mb * mb + cfg.c1) * (va + vb + cfg.c2));
                total += (1.0 - ssim) / 2.0;
            }
    return total / (C * H * W);
}

}  // namespace

TEST_CASE("normalize_masks: uniform, saturated and hand-computed values") {
    Tensor<double> zeros({5, 4, 4});
    auto probs = normalize_masks(zeros);
    for (size_t i = 0; i < probs.numel(); ++i) CHECK(probs[i] == doctest::Approx(0.2).epsilon(1e-12));

    Tensor<double> peaked({5, 2, 2});
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) peaked(3, y, x) = 1e4;
    auto sat = normalize_masks(peaked);
    CHECK(sat(3, 0, 0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(sat(0, 1, 1) == doctest::Approx(0.0).epsilon(1e-9));

    Tensor<double> two({2, 1, 1});
    two(0, 0, 0) = std::log(3.0);
    two(1, 0, 0) = 0.0;
    auto p2 = normalize_masks(two);
    CHECK(p2(0, 0, 0) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(p2(1, 0, 0) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("normalize_masks: errors and invariants") {
    Tensor<double> bad({2, 1, 1});
    bad[0] = std::nan("");
    CHECK_THROWS_AS(normalize_masks(bad), invalid_input);

    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        auto logits = random_tensor(rng, {5, 6, 7}, -4.0, 4.0);
        auto probs = normalize_masks(logits);
        const size_t plane = 42;
        for (size_t p = 0; p < plane; ++p) {
            double sum = 0.0;
            for (int m = 0; m < 5; ++m) {
                CHECK(probs[m * plane + p] >= 0.0);
                sum += probs[m * plane + p];
            }
            CHECK(std::abs(sum - 1.0) < 1e-5);
        }
        // invariance to a per-pixel constant added to all channels
        auto shifted = logits;
        for (size_t p = 0; p < plane; ++p) {
            const double c = rng.uniform(-10.0, 10.0);
            for (int m = 0; m < 5; ++m) shifted[m * plane + p] += c;
        }
        auto probs2 = normalize_masks(shifted);
        for (size_t i = 0; i < probs.numel(); ++i)
            CHECK(std::abs(probs[i] - probs2[i]) < 1e-5);
    }
}

TEST_CASE("masked_pool: uniform mask, point mass, hand value") {
    Rng rng(3);
    auto V = random_tensor(rng, {6, 5, 4}, -2.0, 2.0);

    Tensor<double> uniform = Tensor<double>::full({3, 5, 4}, 1.0 / 3.0);
    auto pooled = masked_pool(V, uniform);
    for (int k = 0; k < 6; ++k) {
        double mean = 0.0;
        for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 4; ++x) mean += V(k, y, x);
        mean /= 20.0;
        for (int m = 0; m < 3; ++m) CHECK(pooled(m, k) == doctest::Approx(mean).epsilon(1e-12));
    }

    Tensor<double> onehot({1, 5, 4});
    onehot(0, 2, 3) = 1.0;
    auto point = masked_pool(V, onehot);
    for (int k = 0; k < 6; ++k) CHECK(point(0, k) == doctest::Approx(V(k, 2, 3)).epsilon(1e-12));

    // d_v=1, V=[[1,3],[5,7]], S=[[0.75,0.25],[0,0]] -> (0.75*1 + 0.25*3)/1.0
    Tensor<double> v1({1, 2, 2});
    v1(0, 0, 0) = 1;
    v1(0, 0, 1) = 3;
    v1(0, 1, 0) = 5;
    v1(0, 1, 1) = 7;
    Tensor<double> s1({1, 2, 2});
    s1(0, 0, 0) = 0.75;
    s1(0, 0, 1) = 0.25;
    auto hand = masked_pool(v1, s1);
    CHECK(hand(0, 0) == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("masked_pool: degenerate mass and scale invariance") {
    Rng rng(11);
    auto V = random_tensor(rng, {4, 3, 3}, -1.0, 1.0);
    Tensor<double> S({2, 3, 3});
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) S(0, y, x) = 0.5;
    // channel 1 has zero mass
    CHECK_THROWS_AS(masked_pool(V, S), degenerate_mask);
    CHECK_NOTHROW(masked_pool_eps(V, S, 1e-8));

    Tensor<double> mismatched({4, 2, 2});
    CHECK_THROWS_AS(masked_pool(mismatched, S), invalid_input);

    for (int trial = 0; trial < 20; ++trial) {
        auto logits = random_tensor(rng, {3, 4, 5}, -2.0, 2.0);
        auto masks = normalize_masks(logits);
        auto feats = random_tensor(rng, {6, 4, 5}, -3.0, 3.0);
        auto base = masked_pool(feats, masks);
        const double alpha = rng.uniform(0.1, 10.0);
        auto scaled = masks;
        for (size_t i = 0; i < scaled.numel(); ++i) scaled[i] *= alpha;
        auto pooled2 = masked_pool(feats, scaled);
        for (size_t i = 0; i < base.numel(); ++i)
            CHECK(std::abs(base[i] - pooled2[i]) < 1e-9);
    }
}

TEST_CASE("compose_segment_flow: examples and convex bound") {
    Tensor<double> ones = Tensor<double>::full({1, 3, 3}, 1.0);
    Tensor<double> v({1, 2});
    v(0, 0) = 2.0;
    v(0, 1) = -3.0;
    auto F = compose_segment_flow(v, ones);
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) {
            CHECK(F(0, y, x) == doctest::Approx(2.0));
            CHECK(F(1, y, x) == doctest::Approx(-3.0));
        }

    Tensor<double> halves = Tensor<double>::full({2, 2, 2}, 0.5);
    Tensor<double> v2({2, 2});
    v2(0, 0) = 1.0;
    v2(1, 1) = 1.0;
    auto F2 = compose_segment_flow(v2, halves);
    for (size_t i = 0; i < F2.numel(); ++i) CHECK(F2[i] == doctest::Approx(0.5).epsilon(1e-12));

    Tensor<double> bad_vecs({3, 2});
    CHECK_THROWS_AS(compose_segment_flow(bad_vecs, halves), invalid_input);

    // one-hot masks select the argmax channel's vector
    Tensor<double> hard({2, 1, 2});
    hard(0, 0, 0) = 1.0;
    hard(1, 0, 1) = 1.0;
    auto F3 = compose_segment_flow(v2, hard);
    CHECK(F3(0, 0, 0) == doctest::Approx(1.0));
    CHECK(F3(1, 0, 0) == doctest::Approx(0.0));
    CHECK(F3(0, 0, 1) == doctest::Approx(0.0));
    CHECK(F3(1, 0, 1) == doctest::Approx(1.0));

    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        auto vecs = random_tensor(rng, {5, 2}, -4.0, 4.0);
        auto S = normalize_masks(random_tensor(rng, {5, 6, 6}, -2.0, 2.0));
        auto Fr = compose_segment_flow(vecs, S);
        for (int a = 0; a < 2; ++a) {
            double lo = vecs(0, a), hi = vecs(0, a);
            for (int m = 1; m < 5; ++m) {
                lo = std::min(lo, vecs(m, a));
                hi = std::max(hi, vecs(m, a));
            }
            for (int y = 0; y < 6; ++y)
                for (int x = 0; x < 6; ++x) {
                    CHECK(Fr(a, y, x) >= lo - 1e-9);
                    CHECK(Fr(a, y, x) <= hi + 1e-9);
                }
        }
    }
}

TEST_CASE("warp_backward: identity, constant field, half-pixel ramp") {
    Rng rng(23);
    auto X = random_tensor(rng, {3, 6, 7}, 0.0, 1.0);
    Tensor<double> zero_flow({2, 6, 7});
    auto warped = warp_backward(X, zero_flow);
    for (size_t i = 0; i < X.numel(); ++i) CHECK(warped[i] == X[i]);  // exact

    Tensor<double> constant = Tensor<double>::full({2, 6, 7}, 0.37);
    auto flow = random_tensor(rng, {2, 6, 7}, -5.0, 5.0);
    auto warped_const = warp_backward(constant, flow);
    for (size_t i = 0; i < warped_const.numel(); ++i)
        CHECK(warped_const[i] == doctest::Approx(0.37).epsilon(1e-12));

    // one-row ramp, F = (0.5, 0): interior -> (x+0.5)/(w-1), last pixel clamped
    const int w = 8;
    Tensor<double> ramp({1, 1, w});
    for (int x = 0; x < w; ++x) ramp(0, 0, x) = static_cast<double>(x) / (w - 1);
    Tensor<double> half({2, 1, w});
    for (int x = 0; x < w; ++x) half(0, 0, x) = 0.5;
    auto shifted = warp_backward(ramp, half);
    for (int x = 0; x < w - 1; ++x)
        CHECK(shifted(0, 0, x) == doctest::Approx((x + 0.5) / (w - 1)).epsilon(1e-12));
    CHECK(shifted(0, 0, w - 1) == doctest::Approx(1.0).epsilon(1e-12));

    Tensor<double> small({2, 3, 3});
    CHECK_THROWS_AS(warp_backward(X, small), invalid_input);
}

TEST_CASE("ssim_loss: identity, constant images, inverted checkerboard") {
    LossConfig cfg;
    Rng rng(31);
    auto X = random_tensor(rng, {3, 8, 8}, 0.0, 1.0);
    CHECK(ssim_loss(X, X, cfg) == 0.0);  // exact zero

    auto A = Tensor<double>::full({1, 5, 5}, 0.2);
    auto B = Tensor<double>::full({1, 5, 5}, 0.8);
    const double a = 0.2, b = 0.8;
    const double ssim_const = (2 * a * b + cfg.c1) / (a * a + b * b + cfg.c1);
    CHECK(ssim_loss(A, B, cfg) == doctest::Approx((1 - ssim_const) / 2).epsilon(1e-12));

    Tensor<double> board({1, 8, 8});
    Tensor<double> inverted({1, 8, 8});
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            board(0, y, x) = (x + y) % 2 ? 1.0 : 0.0;
            inverted(0, y, x) = 1.0 - board(0, y, x);
        }
    const double inv_loss = ssim_loss(inverted, board, cfg);
    CHECK(inv_loss == doctest::Approx(ssim_loss_oracle(inverted, board, cfg)).epsilon(1e-10));
    CHECK(inv_loss > 0.9);
    CHECK(inv_loss <= 1.0);
    CHECK(inv_loss > ssim_loss(board, board, cfg));

    Tensor<double> wrong({1, 4, 4});
    CHECK_THROWS_AS(ssim_loss(board, wrong, cfg), invalid_input);
    LossConfig bad;
    bad.ssim_window = 4;
    CHECK_THROWS_AS(ssim_loss(board, board, bad), invalid_input);
}

TEST_CASE("ssim_loss: range, symmetry, oracle agreement on random pairs") {
    LossConfig cfg;
    Rng rng(37);
    for (int trial = 0; trial < 25; ++trial) {
        auto A = random_tensor(rng, {2, 7, 6}, 0.0, 1.0);
        auto B = random_tensor(rng, {2, 7, 6}, 0.0, 1.0);
        const double lab = ssim_loss(A, B, cfg);
        const double lba = ssim_loss(B, A, cfg);
        CHECK(lab >= 0.0);
        CHECK(lab <= 1.0);
        CHECK(std::abs(lab - lba) < 1e-7);
        CHECK(lab == doctest::Approx(ssim_loss_oracle(A, B, cfg)).epsilon(1e-10));
    }
}

TEST_CASE("reconstruction_loss: static scene, exchange symmetry, shifted frame") {
    LossConfig cfg;
    Rng rng(41);
    auto X = random_tensor(rng, {3, 8, 8}, 0.0, 1.0);
    Tensor<double> zero({2, 8, 8});
    CHECK(reconstruction_loss(X, X, zero, zero, cfg) == 0.0);

    auto Y = random_tensor(rng, {3, 8, 8}, 0.0, 1.0);
    auto Fij = random_tensor(rng, {2, 8, 8}, -1.0, 1.0);
    auto Fji = random_tensor(rng, {2, 8, 8}, -1.0, 1.0);
    CHECK(reconstruction_loss(X, Y, Fij, Fji, cfg) ==
          reconstruction_loss(Y, X, Fji, Fij, cfg));

    // X_j = X_i shifted one column (edge duplicated); the matching flow pair
    // must beat zero flow on a textured 16x16 image
    const int n = 16;
    auto Xi = random_tensor(rng, {3, n, n}, 0.0, 1.0);
    Tensor<double> Xj({3, n, n});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) Xj(c, y, x) = Xi(c, y, std::min(x + 1, n - 1));
    auto plus = Tensor<double>::full({2, n, n}, 0.0);
    auto minus = Tensor<double>::full({2, n, n}, 0.0);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            plus(0, y, x) = 1.0;
            minus(0, y, x) = -1.0;
        }
    Tensor<double> zero16({2, n, n});
    CHECK(reconstruction_loss(Xi, Xj, plus, minus, cfg) <
          reconstruction_loss(Xi, Xj, zero16, zero16, cfg));

    // non-symmetric configuration only keeps the first term
    LossConfig one_way = cfg;
    one_way.symmetric = false;
    const double first_term = ssim_loss(warp_backward(Xi, plus), Xj, cfg);
    CHECK(reconstruction_loss(Xi, Xj, plus, minus, one_way) ==
          doctest::Approx(first_term).epsilon(1e-12));
}

TEST_CASE("upsample_flow and bilinear_resize basics") {
    Tensor<double> F = Tensor<double>::full({2, 4, 4}, 1.0);
    F(1, 0, 0) = 1.0;
    auto up = upsample_flow(F, 2);
    CHECK(up.dim(1) == 8);
    CHECK(up.dim(2) == 8);
    for (size_t i = 0; i < up.numel(); ++i) CHECK(up[i] == doctest::Approx(2.0).epsilon(1e-12));

    // resize of a constant stays constant
    auto c = Tensor<double>::full({3, 5, 7}, 0.25);
    auto r = bilinear_resize(c, 13, 3);
    for (size_t i = 0; i < r.numel(); ++i) CHECK(r[i] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("correlation_volume: self-similarity, shift, zeros") {
    Rng rng(53);
    const int d = 4, h = 5, w = 5, radius = 2, side = 2 * radius + 1;

    // unit-norm features: the zero-displacement channel dominates
    Tensor<double> f({d, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double norm = 0.0;
            for (int ch = 0; ch < d; ++ch) {
                f(ch, y, x) = rng.normal();
                norm += f(ch, y, x) * f(ch, y, x);
            }
            norm = std::sqrt(norm);
            for (int ch = 0; ch < d; ++ch) f(ch, y, x) /= norm;
        }
    auto self_corr = correlation_volume(f, f, radius);
    const int k0 = radius * side + radius;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int k = 0; k < side * side; ++k)
                CHECK(self_corr(k0, y, x) >= self_corr(k, y, x) - 1e-12);

    // feat_j(p) = feat_i(p + (1,0)): displacement (-1,0) reproduces the self
    // zero-displacement channel on the overlap
    Tensor<double> fj({d, h, w});
    for (int ch = 0; ch < d; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) fj(ch, y, x) = f(ch, y, std::min(x + 1, w - 1));
    auto shift_corr = correlation_volume(f, fj, radius);
    const int k_minus = radius * side + (-1 + radius);
    for (int y = 0; y < h; ++y)
        for (int x = 1; x < w - 1; ++x)
            CHECK(shift_corr(k_minus, y, x) ==
                  doctest::Approx(self_corr(k0, y, x)).epsilon(1e-12));

    Tensor<double> zeros({d, h, w});
    auto zc = correlation_volume(zeros, zeros, radius);
    for (size_t i = 0; i < zc.numel(); ++i) CHECK(zc[i] == 0.0);

    Tensor<double> other({d, h, w + 1});
    CHECK_THROWS_AS(correlation_volume(f, other, radius), invalid_input);
}

TEST_CASE("correlation_volume equals brute-force double loop") {
    Rng rng(59);
    for (int trial = 0; trial < 10; ++trial) {
        const int d = 4, h = 6, w = 6, radius = 2, side = 2 * radius + 1;
        auto fi = random_tensor(rng, {d, h, w}, -2.0, 2.0);
        auto fj = random_tensor(rng, {d, h, w}, -2.0, 2.0);
        auto corr = correlation_volume(fi, fj, radius);
        for (int dy = -radius; dy <= radius; ++dy)
            for (int dx = -radius; dx <= radius; ++dx)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        double expect = 0.0;
                        const int yy = y + dy, xx = x + dx;
                        if (yy >= 0 && yy < h && xx >= 0 && xx < w) {
                            for (int ch = 0; ch < d; ++ch)
                                expect += fi(ch, y, x) * fj(ch, yy, xx);
                            expect /= d;
                        }
                        const int k = (dy + radius) * side + (dx + radius);
                        CHECK(std::abs(corr(k, y, x) - expect) < 1e-6);
                    }
    }
}

TEST_CASE("check_gradient: all six operators at random points") {
    const double eps = 1e-4;
    struct Suite {
        OpId op;
        double tol;
    };
    const Suite suites[] = {
        {OpId::normalize_masks, 1e-4}, {OpId::masked_pool, 1e-4},
        {OpId::compose_segment_flow, 1e-6}, {OpId::warp_backward, 1e-3},
        {OpId::ssim_loss, 1e-4}, {OpId::reconstruction_loss, 1e-3},
    };
    Rng rng(101);
    for (const auto& s : suites) {
        for (int trial = 0; trial < 5; ++trial) {
            auto pt = make_random_point(s.op, rng);
            auto res = check_gradient(pt, eps);
            INFO(op_name(s.op), " trial ", trial, " err ", res.max_rel_error, " skipped ",
                 res.skipped);
            CHECK(res.max_rel_error < s.tol);
            CHECK(res.checked > 0);
        }
    }
}

TEST_CASE("check_gradient: warp on a smooth ramp with half-pixel offsets") {
    GradCheckPoint pt;
    pt.op = OpId::warp_backward;
    Tensor<double> ramp({1, 8, 8});
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) ramp(0, y, x) = (x + y) / 14.0;
    pt.inputs.push_back(ramp);
    pt.inputs.push_back(Tensor<double>::full({2, 8, 8}, 0.5));
    Rng rng(5);
    pt.readout = Tensor<double>({1, 8, 8});
    for (size_t i = 0; i < pt.readout.numel(); ++i) pt.readout[i] = rng.uniform(-1.0, 1.0);
    auto res = check_gradient(pt, 1e-4);
    CHECK(res.max_rel_error < 1e-3);
}

TEST_CASE("check_gradient: rejects bad eps and non-finite points") {
    Rng rng(1);
    auto pt = make_random_point(OpId::ssim_loss, rng);
    CHECK_THROWS_AS(check_gradient(pt, 0.0), invalid_input);
    CHECK_THROWS_AS(check_gradient(pt, 0.5), invalid_input);
    pt.inputs[0][3] = std::nan("");
    CHECK_THROWS_AS(check_gradient(pt, 1e-4), invalid_input);
}
