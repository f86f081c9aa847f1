#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fogflow/errors.hpp"
#include "fogflow/fog.hpp"
#include "fogflow/rng.hpp"

using namespace fogflow;

namespace {

double patch_std(const ImageGrid& g, int y0, int x0, int n, int ch) {
    double mean = 0.0;
    for (int y = y0; y < y0 + n; ++y)
        for (int x = x0; x < x0 + n; ++x) mean += g.at(y, x, ch);
    mean /= n * n;
    double var = 0.0;
    for (int y = y0; y < y0 + n; ++y)
        for (int x = x0; x < x0 + n; ++x) {
            const double d = g.at(y, x, ch) - mean;
            var += d * d;
        }
    return std::sqrt(var / (n * n));
}

}  // namespace

TEST_CASE("transmittance: closed-form values and monotone decay") {
    DepthMap d(1, 4, 1);
    d.data = {5.0, 10.0, 20.0, 40.0};
    ImageGrid t0 = transmittance(d, 0.0);
    for (double v : t0.data) CHECK(v == 1.0);

    ImageGrid t = transmittance(d, 0.1);
    CHECK(t.data[1] == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
    for (int i = 1; i < 4; ++i) CHECK(t.data[i] < t.data[i - 1]);
    for (double v : t.data) {
        CHECK(v > 0.0);
        CHECK(v <= 1.0);
    }

    DepthMap bad(1, 1, 1, -3.0);
    CHECK_THROWS_AS(transmittance(bad, 0.1), ValidationError);
    CHECK_THROWS_AS(transmittance(d, -0.5), ValidationError);
}

TEST_CASE("add_fog: no fog is an exact identity") {
    Rng rng(5);
    ImageGrid img(6, 6, 3);
    for (auto& v : img.data) v = rng.uniform(0.0, 1.0);
    DepthMap d(6, 6, 1, 12.0);
    FogParams p;
    p.beta = 0.0;
    CHECK(add_fog(img, d, p).data == img.data);
}

TEST_CASE("add_fog: scalar blend oracle and full-fog limit") {
    // t = 0.5 via beta*D = ln 2
    DepthMap d(1, 1, 1, 10.0);
    FogParams p;
    p.beta = std::log(2.0) / 10.0;
    p.A = {0.8, 0.8, 0.8};
    ImageGrid img(1, 1, 3, 0.2);
    ImageGrid foggy = add_fog(img, d, p);
    for (int c = 0; c < 3; ++c) CHECK(foggy.at(0, 0, c) == doctest::Approx(0.5).epsilon(1e-12));

    DepthMap far(1, 1, 1, 1e6);
    ImageGrid deep = add_fog(img, far, p);
    for (int c = 0; c < 3; ++c) CHECK(deep.at(0, 0, c) == doctest::Approx(0.8).epsilon(1e-9));
}

TEST_CASE("add_fog: output stays in [0,1] and |foggy - A| decays with depth") {
    Rng rng(9);
    ImageGrid img(4, 8, 3);
    for (auto& v : img.data) v = rng.uniform(0.0, 1.0);
    DepthMap d(4, 8, 1);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 8; ++x) d.at(y, x, 0) = 5.0 + 6.0 * x;  // increasing left to right
    FogParams p;
    p.beta = 0.08;
    ImageGrid foggy = add_fog(img, d, p);
    for (double v : foggy.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    // same clean value at growing depth: distance to A shrinks monotonically
    ImageGrid flat(4, 8, 3, 0.3);
    ImageGrid ff = add_fog(flat, d, p);
    for (int y = 0; y < 4; ++y)
        for (int x = 1; x < 8; ++x)
            for (int c = 0; c < 3; ++c)
                CHECK(std::abs(ff.at(y, x, c) - 0.8) < std::abs(ff.at(y, x - 1, c) - 0.8));
}

TEST_CASE("add_fog: local contrast scales exactly by transmittance") {
    Rng rng(13);
    ImageGrid img(6, 6, 1);
    for (auto& v : img.data) v = rng.uniform(0.1, 0.9);
    const double depth = 18.0, beta = 0.06;
    DepthMap d(6, 6, 1, depth);
    FogParams p;
    p.beta = beta;
    ImageGrid foggy = add_fog(img, d, p);
    const double t = std::exp(-beta * depth);
    CHECK(patch_std(foggy, 1, 1, 4, 0) == doctest::Approx(t * patch_std(img, 1, 1, 4, 0)).epsilon(1e-12));
}

TEST_CASE("defog: scalar oracle and exact round-trip") {
    DepthMap d(1, 1, 1, 10.0);
    FogParams p;
    p.beta = std::log(2.0) / 10.0;  // t = 0.5
    ImageGrid foggy(1, 1, 3, 0.5);
    ImageGrid clean = defog(foggy, d, p);
    for (int c = 0; c < 3; ++c) CHECK(clean.at(0, 0, c) == doctest::Approx(0.2).epsilon(1e-12));

    Rng rng(21);
    ImageGrid img(8, 8, 3);
    for (auto& v : img.data) v = rng.uniform(0.0, 1.0);
    DepthMap dr(8, 8, 1);
    for (auto& v : dr.data) v = rng.uniform(5.0, 50.0);
    FogParams p2;
    p2.beta = 0.05;
    ImageGrid round = defog(add_fog(img, dr, p2), dr, p2);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        CHECK(std::abs(round.data[i] - img.data[i]) < 1e-6);

    FogParams p0;
    p0.beta = 0.0;
    CHECK(defog(img, dr, p0).data == img.data);  // identity when t = 1
}

TEST_CASE("fog params: harness betas bracket the working depth range") {
    // light fog keeps t > 0.2 at 50 m; dense fog pushes it below 0.05
    CHECK(std::exp(-kBetaLight * 50.0) > 0.2);
    CHECK(std::exp(-kBetaDense * 50.0) < 0.05);
    CHECK(std::exp(-kBetaDense * 5.0) > 0.5);  // near field still visible
}

TEST_CASE("fog params: JSON parsing and validation") {
    FogParams p = FogParams::from_json(nlohmann::json{{"beta", 0.12}, {"A", {0.7, 0.8, 0.9}}});
    CHECK(p.beta == 0.12);
    CHECK(p.A[2] == 0.9);
    FogParams scalar_a = FogParams::from_json(nlohmann::json{{"A", 0.6}});
    CHECK(scalar_a.A[0] == 0.6);
    CHECK(scalar_a.beta == 0.03);  // default

    CHECK_THROWS_AS(FogParams::from_json(nlohmann::json{{"beta", -1.0}}), ValidationError);
    CHECK_THROWS_AS(FogParams::from_json(nlohmann::json{{"A", 1.5}}), ValidationError);
    CHECK_THROWS_AS(FogParams::from_json(nlohmann::json{{"A", 0.0}}), ValidationError);

    FogParams r = FogParams::from_json(p.to_json());
    CHECK(r.beta == p.beta);
    CHECK(r.A == p.A);
}
