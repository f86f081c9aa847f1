#include "fogflow/fog.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "fogflow/errors.hpp"

namespace fogflow {

FogParams FogParams::from_json(const nlohmann::json& j) {
    FogParams p;
    try {
        p.beta = j.value("beta", p.beta);
        if (j.contains("A")) {
            if (j.at("A").is_number()) {
                p.A.fill(j.at("A").get<double>());
            } else {
                for (int i = 0; i < 3; ++i) p.A[i] = j.at("A").at(i).get<double>();
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("fog params: ") + e.what());
    }
    p.validate();
    return p;
}

FogParams FogParams::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open fog params '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("fog params '" + path + "': " + e.what());
    }
    return from_json(j);
}

nlohmann::json FogParams::to_json() const {
    return {{"beta", beta}, {"A", A}};
}

void FogParams::validate() const {
    if (!(beta >= 0.0) || !std::isfinite(beta))
        throw ValidationError("fog params: beta must be finite and non-negative");
    for (double a : A)
        if (!(a > 0.0) || !(a <= 1.0)) throw ValidationError("fog params: A components must lie in (0,1]");
}

ImageGrid transmittance(const DepthMap& depth, double beta) {
    if (depth.channels != 1) throw ValidationError("transmittance: depth must be single-channel");
    if (!(beta >= 0.0) || !std::isfinite(beta))
        throw ValidationError("transmittance: beta must be finite and non-negative");
    ImageGrid t(depth.height, depth.width, 1);
    for (std::size_t i = 0; i < depth.data.size(); ++i) {
        const double d = depth.data[i];
        if (!(d > 0.0) || !std::isfinite(d))
            throw ValidationError("transmittance: depth must be positive and finite");
        t.data[i] = std::exp(-beta * d);
    }
    return t;
}

ImageGrid add_fog(const ImageGrid& clean, const DepthMap& depth, const FogParams& params) {
    params.validate();
    if (!clean.same_extent(depth)) throw ValidationError("add_fog: extent mismatch");
    const ImageGrid t = transmittance(depth, params.beta);
    ImageGrid out(clean.height, clean.width, clean.channels);
    for (int y = 0; y < clean.height; ++y)
        for (int x = 0; x < clean.width; ++x) {
            const double tv = t.at(y, x, 0);
            for (int c = 0; c < clean.channels; ++c) {
                const double a = params.A[std::min(c, 2)];
                out.at(y, x, c) = clean.at(y, x, c) * tv + a * (1.0 - tv);
            }
        }
    return out;
}

ImageGrid defog(const ImageGrid& foggy, const DepthMap& depth, const FogParams& params, double t_min) {
    params.validate();
    if (!foggy.same_extent(depth)) throw ValidationError("defog: extent mismatch");
    const ImageGrid t = transmittance(depth, params.beta);
    ImageGrid out(foggy.height, foggy.width, foggy.channels);
    for (int y = 0; y < foggy.height; ++y)
        for (int x = 0; x < foggy.width; ++x) {
            const double tv = std::max(t.at(y, x, 0), t_min);
            for (int c = 0; c < foggy.channels; ++c) {
                const double a = params.A[std::min(c, 2)];
                out.at(y, x, c) = (foggy.at(y, x, c) - a * (1.0 - tv)) / tv;
            }
        }
    return out;
}

}  // namespace fogflow
