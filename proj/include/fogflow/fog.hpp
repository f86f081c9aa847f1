#pragma once

#include <array>
#include <string>

#include <json.hpp>

#include "fogflow/grid.hpp"

namespace fogflow {

// Atmospheric scattering parameters: extinction coefficient beta (1/m) and
// per-channel atmospheric light A in (0,1].
struct FogParams {
    double beta = 0.03;
    std::array<double, 3> A{0.8, 0.8, 0.8};

    static FogParams from_json(const nlohmann::json& j);
    static FogParams load(const std::string& path);
    nlohmann::json to_json() const;
    void validate() const;
};

// Harness fog levels: light leaves transmittance above 0.2 across the 5-50 m
// working range; dense drives the far field below 0.05.
inline constexpr double kBetaLight = 0.03;
inline constexpr double kBetaDense = 0.12;

// t(p) = exp(-beta * D(p)), in (0,1].
ImageGrid transmittance(const DepthMap& depth, double beta);

// Beer-Lambert blend J = I*t + A*(1-t), per channel.
ImageGrid add_fog(const ImageGrid& clean, const DepthMap& depth, const FogParams& params);

// Exact inverse I = (J - A*(1-t)) / t with t clamped below at t_min.
ImageGrid defog(const ImageGrid& foggy, const DepthMap& depth, const FogParams& params,
                double t_min = 1e-3);

}  // namespace fogflow
