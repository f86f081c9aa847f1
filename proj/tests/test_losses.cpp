#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fogflow/errors.hpp"
#include "fogflow/geometry.hpp"
#include "fogflow/gradcheck.hpp"
#include "fogflow/grid.hpp"
#include "fogflow/losses.hpp"
#include "fogflow/rng.hpp"
#include "fogflow/scene.hpp"

using namespace fogflow;
using ad::Shape;
using ad::Tape;
using ad::Var;

namespace {

// Mirrors of the differentiable-path kernels.
double sab_ref(double x) { return std::sqrt(x * x + 1e-12); }
double psi_ref(double x, const SparseNorm& n = {}) { return std::pow(sab_ref(x) + n.eps, n.p); }

ImageGrid affine_image(int h, int w, double a, double bx, double by) {
    ImageGrid g(h, w, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) g.at(y, x, 0) = a + bx * x + by * y;
    return g;
}

FlowField rand_flow(Rng& rng, int h, int w, double lo, double hi) {
    FlowField f(h, w);
    for (auto& v : f.uv) v = rng.uniform(lo, hi) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    return f;
}

}  // namespace

TEST_CASE("sparse_lp: scalar oracles, channel summing, monotonicity") {
    const SparseNorm norm;
    ImageGrid zero(3, 3, 1), one(3, 3, 1);
    for (auto& v : one.data) v = 1.0;
    const ImageGrid pz = sparse_lp(zero, norm);
    const ImageGrid po = sparse_lp(one, norm);
    CHECK(pz.at(1, 1, 0) == doctest::Approx(psi_ref(0.0)).epsilon(1e-12));
    CHECK(pz.at(1, 1, 0) == doctest::Approx(std::pow(0.01, 0.4)).epsilon(1e-4));
    CHECK(po.at(1, 1, 0) == doctest::Approx(std::pow(1.01, 0.4)).epsilon(1e-9));
    CHECK(po.at(1, 1, 0) == doctest::Approx(1.00399).epsilon(1e-4));

    ImageGrid two(2, 2, 2);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) {
            two.at(y, x, 0) = 0.3;
            two.at(y, x, 1) = -0.4;
        }
    const ImageGrid pt = sparse_lp(two, norm);
    CHECK(pt.channels == 1);
    CHECK(pt.at(0, 0, 0) == doctest::Approx(psi_ref(0.3) + psi_ref(-0.4)).epsilon(1e-12));

    ImageGrid ramp(1, 9, 1);
    for (int x = 0; x < 9; ++x) ramp.at(0, x, 0) = 0.25 * x;
    const ImageGrid pr = sparse_lp(ramp, norm);
    for (int x = 1; x < 9; ++x) CHECK(pr.at(0, x, 0) >= pr.at(0, x - 1, 0));

    CHECK_THROWS_AS(sparse_lp(zero, SparseNorm{0.0, 1e-2}), ValidationError);
    CHECK_THROWS_AS(sparse_lp(zero, SparseNorm{1.5, 1e-2}), ValidationError);
    CHECK_THROWS_AS(sparse_lp(zero, SparseNorm{0.4, 0.0}), ValidationError);
}

TEST_CASE("photometric_flow_loss: zero residual floor") {
    Rng rng(31);
    ImageGrid img(6, 8, 1);
    for (auto& v : img.data) v = rng.uniform(0.1, 0.9);
    const FlowField zero(6, 8);
    const Mask none(6, 8, 0.0);
    const double l = photometric_flow_loss(img, img, zero, zero, none, none, SparseNorm{});
    CHECK(l == doctest::Approx(2.0 * psi_ref(0.0)).epsilon(1e-12));
    CHECK(l == doctest::Approx(2.0 * std::pow(0.01, 0.4)).epsilon(1e-4));
}

TEST_CASE("photometric_flow_loss: ground-truth flow beats zero flow on a textured scene") {
    SceneConfig cfg;
    cfg.width = 24;
    cfg.height = 20;
    cfg.fx = cfg.fy = 40.0;
    cfg.translation_m = {0.4, 0.0, 0.0};
    const SceneSample s = make_scene(cfg, 5);
    const auto [o_f, o_b] = fb_occlusion(s.gt_flow, s.gt_flow_bwd, 0.01, 0.5);
    const SparseNorm norm;
    const double l_gt =
        photometric_flow_loss(s.I_t_left, s.I_t1_left, s.gt_flow, s.gt_flow_bwd, o_f, o_b, norm);
    const double l_zero = photometric_flow_loss(s.I_t_left, s.I_t1_left, FlowField(20, 24),
                                                FlowField(20, 24), o_f, o_b, norm);
    CHECK(l_gt < l_zero);
    CHECK(l_gt >= 2.0 * std::pow(0.01, 0.4));  // analytic floor
}

TEST_CASE("photometric_flow_loss: occlusion concentrates and shields the loss") {
    Rng rng(32);
    ImageGrid I_t(5, 5, 1), I_t1(5, 5, 1);
    for (auto& v : I_t.data) v = rng.uniform(0.0, 1.0);
    for (auto& v : I_t1.data) v = rng.uniform(0.0, 1.0);
    Mask occ(5, 5, 1.0);
    occ.at(2, 3) = 0.0;  // the only visible pixel
    const FlowField zero(5, 5);
    const SparseNorm norm;
    const double l = photometric_flow_loss(I_t, I_t1, zero, zero, occ, occ, norm);
    const double res = I_t.at(2, 3, 0) - I_t1.at(2, 3, 0);
    CHECK(l == doctest::Approx(psi_ref(res) + psi_ref(-res)).epsilon(1e-12));

    // With zero flow, occluded pixels enter only zero-weighted products, so
    // mutating them cannot move the loss.
    ImageGrid I_t_mut = I_t, I_t1_mut = I_t1;
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x)
            if (occ.at(y, x) == 1.0) {
                I_t_mut.at(y, x, 0) = rng.uniform(0.0, 1.0);
                I_t1_mut.at(y, x, 0) = rng.uniform(0.0, 1.0);
            }
    CHECK(photometric_flow_loss(I_t_mut, I_t1_mut, zero, zero, occ, occ, norm) == l);

    Mask all(5, 5, 1.0);
    CHECK_THROWS_AS(photometric_flow_loss(I_t, I_t1, zero, zero, all, occ, norm), ValidationError);
    ImageGrid wide(5, 6, 1);
    CHECK_THROWS_AS(photometric_flow_loss(I_t, wide, zero, zero, occ, occ, norm), ValidationError);
}

TEST_CASE("photometric_flow_loss: gradients") {
    Rng rng(33);
    const int H = 5, W = 5;
    ParamStore ps;
    // Disjoint intensity ranges keep every residual away from the psi kink.
    ImageGrid lo(H, W, 1), hi(H, W, 1);
    for (auto& v : lo.data) v = rng.uniform(0.05, 0.45);
    for (auto& v : hi.data) v = rng.uniform(0.55, 1.0);
    ps.add("it", lo.data);
    ps.add("it1", hi.data);
    ps.add("ff", rand_flow(rng, H, W, 0.1, 0.4).uv);
    ps.add("fb", rand_flow(rng, H, W, 0.1, 0.4).uv);
    Mask o_f(H, W, 0.0), o_b(H, W, 0.0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            o_f.at(y, x) = rng.uniform() < 0.3 ? 1.0 : 0.0;
            o_b.at(y, x) = rng.uniform() < 0.3 ? 1.0 : 0.0;
        }
    auto loss = [&](ParamStore& p) {
        Tape t;
        Var l = ad::photometric_flow_loss(t.param(p, "it", Shape{H, W, 1}),
                                          t.param(p, "it1", Shape{H, W, 1}),
                                          t.param(p, "ff", Shape{H, W, 2}),
                                          t.param(p, "fb", Shape{H, W, 2}), t.constant(o_f),
                                          t.constant(o_b), SparseNorm{});
        t.backward(l);
        t.accumulate_param_grads();
        return l.scalar();
    };
    CHECK(grad_check(loss, ps, 1e-5) <= 1e-4);
}

TEST_CASE("depth_loss: stereo-consistent constant disparity sits at the floor") {
    // Horizontally uniform texture is stereo-consistent with any constant
    // disparity, so the photometric residual vanishes identically and the
    // constant disparity kills the smoothness term.
    const int H = 8, W = 12;
    Rng rng(41);
    ImageGrid left(H, W, 1);
    for (int y = 0; y < H; ++y) {
        const double v = rng.uniform(0.1, 0.9);
        for (int x = 0; x < W; ++x) left.at(y, x, 0) = v;
    }
    ImageGrid disp(H, W, 1);
    for (auto& v : disp.data) v = 8.0;
    const double l = depth_loss(left, left, left, left, disp, disp, SparseNorm{});
    CHECK(l == doctest::Approx(2.0 * psi_ref(0.0)).epsilon(1e-4));
}

TEST_CASE("depth_loss: constant images reduce to smoothness; affine disparity kills it") {
    const int H = 7, W = 9;
    ImageGrid flat(H, W, 1);
    for (auto& v : flat.data) v = 0.5;
    ImageGrid ramp(H, W, 1), ramp2(H, W, 1);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            ramp.at(y, x, 0) = 1.0 + 0.25 * x + 0.1 * y;
            ramp2.at(y, x, 0) = 2.0 * ramp.at(y, x, 0);
        }
    const SparseNorm norm;
    const double l1 = depth_loss(flat, flat, flat, flat, ramp, ramp, norm);
    const double l2 = depth_loss(flat, flat, flat, flat, ramp2, ramp2, norm);
    CHECK(l1 == doctest::Approx(2.0 * psi_ref(0.0)).epsilon(1e-4));
    CHECK(std::abs(l2 - l1) <= 1e-9);  // doubling an affine disparity changes nothing

    ImageGrid wide(H, W + 1, 1);
    CHECK_THROWS_AS(depth_loss(flat, wide, flat, flat, ramp, ramp, norm), ValidationError);
    ImageGrid bad_d(H, W, 2);
    CHECK_THROWS_AS(depth_loss(flat, flat, flat, flat, bad_d, bad_d, norm), ValidationError);
}

TEST_CASE("depth_loss: bumpy disparity on constant images raises the smoothness term") {
    const int H = 7, W = 9;
    ImageGrid flat(H, W, 1);
    for (auto& v : flat.data) v = 0.5;
    ImageGrid smooth_d(H, W, 1), bumpy_d(H, W, 1);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            smooth_d.at(y, x, 0) = 3.0;
            bumpy_d.at(y, x, 0) = 3.0 + ((x + y) % 2 == 0 ? 0.5 : -0.5);
        }
    const SparseNorm norm;
    CHECK(depth_loss(flat, flat, flat, flat, bumpy_d, bumpy_d, norm) >
          depth_loss(flat, flat, flat, flat, smooth_d, smooth_d, norm) + 0.1);
}

TEST_CASE("depth_loss: gradients") {
    const int H = 6, W = 6;
    ParamStore ps;
    // Affine images keep the Laplacian exactly zero and the stereo residual
    // bounded away from the psi kink; quadratic disparities keep their own
    // Laplacian constant and nonzero.
    ps.add("itl", affine_image(H, W, 0.50, 0.020, 0.015).data);
    ps.add("itr", affine_image(H, W, 0.30, 0.020, 0.015).data);
    ps.add("it1l", affine_image(H, W, 0.55, 0.018, 0.012).data);
    ps.add("it1r", affine_image(H, W, 0.32, 0.018, 0.012).data);
    ImageGrid d0(H, W, 1), d1(H, W, 1);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            d0.at(y, x, 0) = 1.3 + 0.08 * x * x;
            d1.at(y, x, 0) = 1.6 + 0.05 * y * y;
        }
    ps.add("d0", d0.data);
    ps.add("d1", d1.data);
    auto loss = [&](ParamStore& p) {
        Tape t;
        Var l = ad::depth_loss(t.param(p, "itl", Shape{H, W, 1}), t.param(p, "itr", Shape{H, W, 1}),
                               t.param(p, "it1l", Shape{H, W, 1}),
                               t.param(p, "it1r", Shape{H, W, 1}), t.param(p, "d0", Shape{H, W, 1}),
                               t.param(p, "d1", Shape{H, W, 1}), SparseNorm{});
        t.backward(l);
        t.accumulate_param_grads();
        return l.scalar();
    };
    CHECK(grad_check(loss, ps, 1e-5) <= 1e-4);
}

TEST_CASE("geo_flow_loss: offsets, oracle, masking") {
    Rng rng(51);
    const int H = 6, W = 7;
    FlowField rigid = rand_flow(rng, H, W, 0.2, 1.5);
    CHECK(geo_flow_loss(rigid, rigid, Mask(H, W, 0.0)) <= 3e-6);  // smoothing floor

    FlowField off = rigid;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) off.u(y, x) += 1.0;
    CHECK(geo_flow_loss(off, rigid, Mask(H, W, 0.0)) == doctest::Approx(1.0).epsilon(1e-5));

    FlowField f = rand_flow(rng, H, W, 0.2, 2.0);
    Mask v(H, W, 0.0);
    for (auto& m : v.m) m = rng.uniform() < 0.4 ? 1.0 : 0.0;
    double num = 0.0, den = 0.0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double w = 1.0 - v.at(y, x);
            num += (sab_ref(f.u(y, x) - rigid.u(y, x)) + sab_ref(f.v(y, x) - rigid.v(y, x))) * w;
            den += w;
        }
    const double l = geo_flow_loss(f, rigid, v);
    CHECK(l == doctest::Approx(num / den).epsilon(1e-12));

    // Values under the nonrigid mask never reach the loss.
    FlowField mut = f;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            if (v.at(y, x) == 1.0) {
                mut.u(y, x) = rng.uniform(-5.0, 5.0);
                mut.v(y, x) = rng.uniform(-5.0, 5.0);
            }
    CHECK(geo_flow_loss(mut, rigid, v) == l);

    CHECK_THROWS_AS(geo_flow_loss(f, rigid, Mask(H, W, 1.0)), ValidationError);
    CHECK_THROWS_AS(geo_flow_loss(f, FlowField(H, W + 1), v), ValidationError);
}

TEST_CASE("geo_flow_loss: gradients") {
    Rng rng(52);
    const int H = 5, W = 5;
    FlowField rigid = rand_flow(rng, H, W, 0.2, 1.0);
    FlowField f = rigid;
    for (auto i = 0u; i < f.uv.size(); ++i)
        f.uv[i] += rng.uniform(0.1, 0.5) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    Mask v(H, W, 0.0);
    for (auto& m : v.m) m = rng.uniform() < 0.3 ? 1.0 : 0.0;
    ParamStore ps;
    ps.add("f", f.uv);
    auto loss = [&](ParamStore& p) {
        Tape t;
        Var l = ad::geo_flow_loss(t.param(p, "f", Shape{H, W, 2}), t.constant(rigid), t.constant(v));
        t.backward(l);
        t.accumulate_param_grads();
        return l.scalar();
    };
    CHECK(grad_check(loss, ps, 1e-5) <= 1e-4);
}

TEST_CASE("consistency and self-supervised losses: L1 sums") {
    Rng rng(61);
    const int H = 5, W = 8;
    FlowField a = rand_flow(rng, H, W, 0.2, 2.0);
    CHECK(consistency_loss(a, a) <= 2.1e-6 * H * W);  // smoothing floor of the plain sum

    FlowField b = a;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) b.u(y, x) += 1.0;
    CHECK(consistency_loss(b, a) == doctest::Approx(static_cast<double>(H) * W).epsilon(1e-5));
    CHECK(consistency_loss(b, a, true) == doctest::Approx(1.0).epsilon(1e-5));

    FlowField c = rand_flow(rng, H, W, 0.2, 2.0);
    double expect = 0.0;
    for (std::size_t i = 0; i < a.uv.size(); ++i) expect += sab_ref(a.uv[i] - c.uv[i]);
    CHECK(consistency_loss(a, c) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(consistency_loss(a, c) == consistency_loss(c, a));
    CHECK(self_supervised_loss(a, c) == consistency_loss(a, c));
    CHECK_THROWS_AS(consistency_loss(a, FlowField(H, W + 2)), ValidationError);
}

TEST_CASE("consistency_loss: gradients") {
    Rng rng(62);
    const int H = 4, W = 6;
    FlowField tgt = rand_flow(rng, H, W, 0.2, 1.0);
    FlowField f = tgt;
    for (auto& v : f.uv) v += rng.uniform(0.1, 0.6) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    ParamStore ps;
    ps.add("f", f.uv);
    auto loss = [&](ParamStore& p) {
        Tape t;
        Var l = ad::consistency_loss(t.param(p, "f", Shape{H, W, 2}), t.constant(tgt));
        t.backward(l);
        t.accumulate_param_grads();
        return l.scalar();
    };
    CHECK(grad_check(loss, ps, 1e-5) <= 1e-4);
}

TEST_CASE("total_loss: weighting, defaults, and error naming") {
    LossTerms unit{1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
    CHECK(total_loss(unit, LossWeights{}) == doctest::Approx(4.2).epsilon(1e-12));
    CHECK(total_loss(LossTerms{}, LossWeights{}) == 0.0);
    CHECK(total_loss(unit, LossWeights{0, 0, 0, 0, 0, 0}) == 0.0);

    LossTerms bad = unit;
    bad.consis = std::nan("");
    try {
        total_loss(bad, LossWeights{});
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("consis") != std::string::npos);
    }
    LossWeights neg;
    neg.l3 = -0.1;
    CHECK_THROWS_AS(total_loss(unit, neg), ValidationError);
}

TEST_CASE("total_loss: tape form skips absent terms") {
    Tape t;
    ad::TermVars terms;
    terms.pho = t.constant_scalar(2.0);
    terms.kl = t.constant_scalar(3.0);
    Var total = ad::total_loss(t, terms, LossWeights{});
    CHECK(total.scalar() == doctest::Approx(2.0 + 0.1 * 3.0).epsilon(1e-12));

    terms.geo = t.constant(Shape{2, 2, 1}, {1, 2, 3, 4});
    CHECK_THROWS_AS(ad::total_loss(t, terms, LossWeights{}), ValidationError);
}

TEST_CASE("loss curves: csv round-trips doubles exactly") {
    std::vector<LossCurveRow> rows(3);
    Rng rng(71);
    for (int i = 0; i < 3; ++i) {
        rows[i].step = i * 10;
        rows[i].terms = {rng.uniform(), rng.uniform(), rng.uniform(),
                         rng.uniform(), rng.uniform(), rng.uniform()};
        rows[i].total = total_loss(rows[i].terms, LossWeights{});
    }
    const char* path = "loss_curve_test.csv";
    write_loss_curve_csv(path, rows);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "step,depth,pho,geo,consis,self,kl,total");
    for (int i = 0; i < 3; ++i) {
        REQUIRE(static_cast<bool>(std::getline(in, line)));
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        CHECK(std::stoi(cell) == rows[i].step);
        const double expect[] = {rows[i].terms.depth, rows[i].terms.pho,    rows[i].terms.geo,
                                 rows[i].terms.consis, rows[i].terms.self_sup, rows[i].terms.kl,
                                 rows[i].total};
        for (double e : expect) {
            REQUIRE(static_cast<bool>(std::getline(ss, cell, ',')));
            CHECK(std::strtod(cell.c_str(), nullptr) == e);
        }
    }
    std::remove(path);
}
