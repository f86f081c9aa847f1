#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fogflow/errors.hpp"
#include "fogflow/flownet.hpp"
#include "fogflow/gradcheck.hpp"
#include "fogflow/grid.hpp"
#include "fogflow/rng.hpp"

using namespace fogflow;
using ad::Shape;
using ad::Tape;
using ad::Var;

namespace {

ImageGrid rand_img(Rng& rng, int h, int w, int c) {
    ImageGrid g(h, w, c);
    for (auto& v : g.data) v = rng.uniform();
    return g;
}

// Small enough for finite differences over every parameter.
FlowNetConfig tiny_config() {
    FlowNetConfig c;
    c.in_channels = 1;
    c.enc_mid = 3;
    c.feat_channels = 4;
    c.radius = 1;
    c.sca_window = 3;
    c.sca_k = 2;
    c.dec_mid = 6;
    c.disp_mid = 3;
    return c;
}

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(static_cast<bool>(in));
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("flownet config: defaults, json, validation") {
    FlowNetConfig c;
    c.validate();
    CHECK(c.bins() == 49);
    CHECK(FlowNetConfig::from_json(c.to_json()) == c);
    CHECK(FlowNetConfig::from_json(nlohmann::json::object()) == c);  // all defaulted

    FlowNetConfig bad = c;
    bad.sca_window = 4;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = c;
    bad.radius = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = c;
    bad.in_channels = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = c;
    bad.fuse_alpha = -1.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("flownet construction: budget, layout, determinism") {
    const FlowNet net(FlowNetConfig{}, 7);
    CHECK(net.param_count() == 17603);
    CHECK(net.param_count() < 50000);
    CHECK(net.params().all_finite());

    const std::vector<std::string> expected = {
        "enc.c1.w", "enc.c1.b", "enc.c2.w", "enc.c2.b", "sca.kernel", "dec.c1.w", "dec.c1.b",
        "dec.c2.w", "dec.c2.b", "disp.c1.w", "disp.c1.b", "disp.c2.w", "disp.c2.b"};
    REQUIRE(net.params().entries().size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i)
        CHECK(net.params().entries()[i].name == expected[i]);
    for (double b : net.params().value("enc.c1.b")) CHECK(b == 0.0);

    const FlowNet again(FlowNetConfig{}, 7);
    CHECK(again.params().value_hash() == net.params().value_hash());
    const FlowNet other(FlowNetConfig{}, 8);
    CHECK(other.params().value_hash() != net.params().value_hash());
}

TEST_CASE("encode: extent arithmetic, zero propagation, determinism") {
    const FlowNet net(FlowNetConfig{}, 3);
    Rng rng(11);
    const ImageGrid img = rand_img(rng, 16, 24, 3);
    const auto [f0, f1] = encode_pair(img, img, net);
    CHECK(f0.height == 4);
    CHECK(f0.width == 6);
    CHECK(f0.channels == 16);
    CHECK(f0.data == f1.data);  // same input, same params, bit-identical

    // Zero input meets zero-initialized biases: every stage emits tanh(0).
    const ImageGrid zeros(16, 24, 3);
    const auto [z0, z1] = encode_pair(zeros, zeros, net);
    for (double v : z0.data) CHECK(v == 0.0);

    const ImageGrid odd(10, 8, 3);
    CHECK_THROWS_AS(encode_pair(odd, odd, net), ValidationError);
    const ImageGrid gray(16, 24, 1);
    CHECK_THROWS_AS(encode_pair(gray, gray, net), ValidationError);
}

TEST_CASE("forward_flow: finite, pure, deterministic on an untrained net") {
    const FlowNet net(FlowNetConfig{}, 5);
    Rng rng(12);
    const ImageGrid I_t = rand_img(rng, 16, 24, 3);
    const ImageGrid I_t1 = rand_img(rng, 16, 24, 3);
    const std::uint64_t hash_before = net.params().value_hash();
    const FlowField f = forward_flow(I_t, I_t1, net);
    CHECK(f.height == 16);
    CHECK(f.width == 24);
    for (double v : f.uv) CHECK(std::isfinite(v));
    CHECK(net.params().value_hash() == hash_before);

    const FlowField g = forward_flow(I_t, I_t1, net);
    CHECK(f.uv == g.uv);
}

TEST_CASE("forward_cost_volume matches the hand-composed plain path") {
    const FlowNet net(tiny_config(), 6);
    Rng rng(14);
    const ImageGrid I_t = rand_img(rng, 8, 12, 1);
    const ImageGrid I_t1 = rand_img(rng, 8, 12, 1);

    const CostVolume cv = forward_cost_volume(I_t, I_t1, net);
    CHECK(cv.height == 2);
    CHECK(cv.width == 3);
    CHECK(cv.radius == net.config().radius);
    CHECK(cv.normalized);
    CHECK(cv.norm_min <= cv.norm_max);
    for (double v : cv.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    const auto [f_t, f_t1] = encode_pair(I_t, I_t1, net);
    const FlowField zero(cv.height, cv.width);
    const CostVolume cv_temp = temporal_cv(f_t, f_t1, zero, net.config().radius);
    const CostVolume cv_spa =
        sca_cv(f_t, net.config().sca_window, net.config().sca_k, net.params());
    const CostVolume fused = fuse_cv(cv_temp, cv_spa, net.config().fuse_alpha);
    CHECK(cv.data == fused.data);
    CHECK(cv.norm_min == fused.norm_min);
    CHECK(cv.norm_max == fused.norm_max);

    // Decoding the volume ourselves reproduces forward_flow exactly.
    const FlowField direct = forward_flow(I_t, I_t1, net);
    ad::Tape t;
    auto bind = ad::frozen(t, net.params());
    const ad::Var fv = t.constant(ad::Shape{cv.height, cv.width, cv.bins()}, cv.data);
    const FlowField decoded = ad::to_flow(ad::decode_flow(bind, net.config(), fv));
    CHECK(decoded.uv == direct.uv);
}

TEST_CASE("decoders: constant-bias closed form and disparity positivity") {
    FlowNet net(tiny_config(), 9);
    auto zero_out = [&](const std::string& name) {
        for (auto& v : net.params().value(name)) v = 0.0;
    };
    zero_out("dec.c1.w");
    zero_out("dec.c2.w");
    net.params().value("dec.c2.b") = {0.3, -0.2};
    Rng rng(13);
    const ImageGrid I_t = rand_img(rng, 8, 8, 1);
    const ImageGrid I_t1 = rand_img(rng, 8, 8, 1);
    const FlowField f = forward_flow(I_t, I_t1, net);
    // Quarter-resolution prediction is constant, so upsampling keeps it and
    // the x4 scale turns (0.3,-0.2) into (1.2,-0.8) pixels everywhere.
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            CHECK(f.u(y, x) == doctest::Approx(1.2).epsilon(1e-12));
            CHECK(f.v(y, x) == doctest::Approx(-0.8).epsilon(1e-12));
        }

    zero_out("disp.c1.w");
    zero_out("disp.c2.w");
    net.params().value("disp.c2.b") = {0.5};
    const ImageGrid d = forward_disp(I_t, net);
    const double expect = 4.0 * std::log1p(std::exp(0.5));
    for (double v : d.data) CHECK(v == doctest::Approx(expect).epsilon(1e-12));

    const FlowNet fresh(tiny_config(), 10);
    const ImageGrid d2 = forward_disp(I_t, fresh);
    for (double v : d2.data) CHECK(v > 0.0);  // softplus head
}

TEST_CASE("full forward gradients through encoder, volumes, and decoders") {
    const FlowNetConfig cfg = tiny_config();
    FlowNet net(cfg, 21);
    Rng rng(22);
    const ImageGrid I_t = rand_img(rng, 8, 8, 1);
    const ImageGrid I_t1 = rand_img(rng, 8, 8, 1);
    std::vector<double> wf(8 * 8 * 2), wd(8 * 8);
    for (auto& v : wf) v = rng.uniform() < 0.5 ? -1.0 : 1.0;
    for (auto& v : wd) v = rng.uniform() < 0.5 ? -1.0 : 1.0;
    auto loss = [&](ParamStore& p) {
        Tape t;
        auto bind = ad::trainable(t, p);
        Var flow = ad::forward_flow(bind, cfg, t.constant(I_t), t.constant(I_t1));
        Var disp = ad::forward_disp(bind, cfg, t.constant(I_t));
        Var l = ad::add(ad::sum(ad::mul(flow, t.constant(Shape{8, 8, 2}, wf))),
                        ad::sum(ad::mul(disp, t.constant(Shape{8, 8, 1}, wd))));
        t.backward(l);
        t.accumulate_param_grads();
        return l.scalar();
    };
    CHECK(grad_check(loss, net.params(), 1e-5) <= 1e-4);
}

TEST_CASE("argmax_flow reads the strongest displacement per pixel") {
    CostVolume cv(2, 2, 1);
    for (auto& v : cv.data) v = 0.1;
    cv.at(0, 0, 4) = 0.9;                      // center: zero displacement
    cv.at(0, 1, 5) = 0.9;                      // dx=+1, dy=0
    cv.at(1, 0, 1) = 0.9;                      // dx=0, dy=-1
    cv.at(1, 1, 0) = 0.9;                      // dx=-1, dy=-1
    const FlowField f = argmax_flow(cv);
    CHECK(f.u(0, 0) == 0.0);
    CHECK(f.v(0, 0) == 0.0);
    CHECK(f.u(0, 1) == 1.0);
    CHECK(f.v(0, 1) == 0.0);
    CHECK(f.u(1, 0) == 0.0);
    CHECK(f.v(1, 0) == -1.0);
    CHECK(f.u(1, 1) == -1.0);
    CHECK(f.v(1, 1) == -1.0);

    CostVolume tie(1, 1, 1);
    tie.at(0, 0, 2) = 1.0;
    tie.at(0, 0, 6) = 1.0;  // equal peak later: smaller bin wins
    const FlowField t = argmax_flow(tie);
    CHECK(t.u(0, 0) == 1.0);
    CHECK(t.v(0, 0) == -1.0);
}

TEST_CASE("ema_update: blend law, contraction, prefix filtering") {
    EmaConfig cfg;
    CHECK(cfg.lambda == 0.99);
    CHECK(EmaConfig::from_json(cfg.to_json()).lambda == cfg.lambda);

    ParamStore r, s;
    r.add("a", std::vector<double>(3, 0.0));
    r.add("b.x", std::vector<double>(2, 0.0));
    s.add("a", std::vector<double>(3, 1.0));
    s.add("b.x", std::vector<double>(2, 1.0));
    ema_update(r, s, cfg);
    for (const auto& e : r.entries())
        for (double v : e.value) CHECK(v == doctest::Approx(0.01).epsilon(1e-12));

    // Fixed point and elementwise contraction on realistic stores.
    FlowNet slow(tiny_config(), 1), fast(tiny_config(), 2);
    std::vector<double> before = slow.params().flatten();
    const std::vector<double> target = fast.params().flatten();
    const std::uint64_t fast_hash = fast.params().value_hash();
    ema_update(slow.params(), fast.params(), cfg);
    const std::vector<double> after = slow.params().flatten();
    for (std::size_t i = 0; i < after.size(); ++i)
        CHECK(std::abs(after[i] - target[i]) ==
              doctest::Approx(0.99 * std::abs(before[i] - target[i])).epsilon(1e-12));
    CHECK(fast.params().value_hash() == fast_hash);

    FlowNet same_a(tiny_config(), 4), same_b(tiny_config(), 4);
    ema_update(same_a.params(), same_b.params(), cfg);
    const std::vector<double> sa = same_a.params().flatten(), sb = same_b.params().flatten();
    for (std::size_t i = 0; i < sa.size(); ++i)
        CHECK(sa[i] == doctest::Approx(sb[i]).epsilon(1e-12));

    // Ten applications against a constant target: geometric approach.
    FlowNet track(tiny_config(), 5);
    const std::vector<double> start = track.params().flatten();
    for (int it = 0; it < 10; ++it) ema_update(track.params(), fast.params(), cfg);
    const std::vector<double> end = track.params().flatten();
    const double shrink = std::pow(0.99, 10);
    for (std::size_t i = 0; i < end.size(); ++i)
        CHECK(end[i] - target[i] ==
              doctest::Approx(shrink * (start[i] - target[i])).epsilon(1e-9));

    // Prefix filter: only encoder entries move.
    FlowNet part(tiny_config(), 6);
    const std::vector<double> pre = part.params().flatten();
    ema_update(part.params(), fast.params(), cfg, {"enc."});
    // Encoder entries move wherever the two stores disagree (both nets carry
    // zero biases, which stay put); everything else is bitwise intact.
    std::size_t off = 0;
    for (const auto& e : part.params().entries()) {
        const bool enc = e.name.rfind("enc.", 0) == 0;
        const auto& fv = fast.params().entry(e.name).value;
        bool should_change = false, any_diff = false;
        for (std::size_t i = 0; i < e.value.size(); ++i) {
            if (enc && pre[off + i] != fv[i]) should_change = true;
            if (e.value[i] != pre[off + i]) any_diff = true;
        }
        CHECK(any_diff == should_change);
        off += e.value.size();
    }

    EmaConfig bad;
    bad.lambda = 1.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad.lambda = -0.1;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    ParamStore missing;
    missing.add("a", std::vector<double>(3, 0.0));
    CHECK_THROWS_AS(ema_update(missing, s, cfg), ValidationError);
    ParamStore short_r;
    short_r.add("a", std::vector<double>(2, 0.0));
    short_r.add("b.x", std::vector<double>(2, 0.0));
    CHECK_THROWS_AS(ema_update(short_r, s, cfg), ValidationError);
    CHECK_THROWS_AS(ema_update(r, s, cfg, {"zzz."}), ValidationError);
}

TEST_CASE("checkpoint: float32 round-trip, byte stability, validation") {
    namespace fs = std::filesystem;
    const std::string dir1 = "ckpt_test_a", dir2 = "ckpt_test_b";
    fs::remove_all(dir1);
    fs::remove_all(dir2);

    const FlowNet net(tiny_config(), 77);
    save_checkpoint(dir1, net, 42);
    Checkpoint ck = load_checkpoint(dir1);
    CHECK(ck.step == 42);
    CHECK(ck.net.seed() == 77);
    CHECK(ck.net.config() == net.config());
    REQUIRE(ck.net.param_count() == net.param_count());
    for (const auto& e : net.params().entries()) {
        const auto& loaded = ck.net.params().value(e.name);
        for (std::size_t i = 0; i < e.value.size(); ++i)
            CHECK(loaded[i] == static_cast<double>(static_cast<float>(e.value[i])));
    }

    // Values already sit on the float32 grid, so a second save is bit-stable.
    save_checkpoint(dir2, ck.net, 42);
    CHECK(file_bytes(dir1 + "/params.bin") == file_bytes(dir2 + "/params.bin"));
    CHECK(file_bytes(dir1 + "/manifest.json") == file_bytes(dir2 + "/manifest.json"));

    CHECK_THROWS_AS(load_checkpoint("no_such_ckpt_dir"), ValidationError);

    // Truncated blob.
    const auto blob = file_bytes(dir1 + "/params.bin");
    {
        std::ofstream out(dir1 + "/params.bin", std::ios::binary | std::ios::trunc);
        out.write(blob.data(), static_cast<std::streamsize>(blob.size() - 3));
    }
    CHECK_THROWS_AS(load_checkpoint(dir1), ValidationError);
    {
        std::ofstream out(dir1 + "/params.bin", std::ios::binary | std::ios::trunc);
        out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    }
    CHECK_NOTHROW(load_checkpoint(dir1));

    // Tampered manifest: foreign format tag, then a renamed entry.
    nlohmann::json manifest;
    {
        std::ifstream in(dir1 + "/manifest.json");
        in >> manifest;
    }
    nlohmann::json bad = manifest;
    bad["format"] = "other";
    {
        std::ofstream out(dir1 + "/manifest.json", std::ios::trunc);
        out << bad.dump(2);
    }
    CHECK_THROWS_AS(load_checkpoint(dir1), ValidationError);
    bad = manifest;
    bad["params"][0]["name"] = "enc.c9.w";
    {
        std::ofstream out(dir1 + "/manifest.json", std::ios::trunc);
        out << bad.dump(2);
    }
    CHECK_THROWS_AS(load_checkpoint(dir1), ValidationError);

    fs::remove_all(dir1);
    fs::remove_all(dir2);
}
