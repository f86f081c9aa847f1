#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "fogflow/ad.hpp"
#include "fogflow/cost_volume.hpp"

namespace fogflow {

// Correlation-distribution alignment: sample correlations out of normalized
// cost volumes, bin them into k classes, and align the class distributions
// of two domains with a KL loss.
struct CdaConfig {
    int n_samples = 1000;  // N
    int k_cda = 10;        // class count
    // k_cda - 1 ascending thresholds in (0,1); empty selects the linear
    // defaults i / k_cda.
    std::vector<double> thresholds;
    std::uint64_t seed = 0;
    // Sharpness of the soft (training-time) bin assignment.
    double temperature = 0.05;

    void validate() const;
    // Thresholds in effect (the linear defaults when none are set).
    std::vector<double> effective_thresholds() const;
    // Midpoints of the k bins the thresholds carve out of [0,1].
    std::vector<double> bin_centers() const;
    // Hard bin index of a correlation value; bin i covers [t_{i-1}, t_i).
    int bin_of(double c) const;

    static CdaConfig from_json(const nlohmann::json& j);
    static CdaConfig load(const std::string& path);
    nlohmann::json to_json() const;
};

// A k-class Laplace-smoothed distribution plus the integer evidence it came
// from: probs_i = (counts_i + 1)/(n_samples + k).
struct CorrelationDistribution {
    std::vector<double> probs;
    std::vector<long long> counts;
    long long n_samples = 0;

    double floor() const { return 1.0 / (static_cast<double>(n_samples) + static_cast<double>(probs.size())); }
};

// Uniform sample of N slot indices without replacement, deterministic under
// cfg.seed. Rejects volumes with fewer than N slots or values outside [0,1].
std::vector<int> sample_slots(const CostVolume& cv, const CdaConfig& cfg);
// The correlation values at those slots.
std::vector<double> sample_correlations(const CostVolume& cv, const CdaConfig& cfg);

// Hard Eq.-8 histogram: bin by thresholds, smooth as (n_i + 1)/(N + k).
CorrelationDistribution histogram(const std::vector<double>& samples, const CdaConfig& cfg);

// KL divergence sum_i p_r_i * log(p_r_i / p_s_i); needs floored inputs.
double kl_loss(const CorrelationDistribution& p_r, const CorrelationDistribution& p_s);

namespace ad {

// Soft differentiable histogram of a (n,1,1) sample vector: each sample is
// assigned to bins by a softmax over -|c - center_i| / temperature, then
// smoothed like Eq. 8. Output (k,1,1); probs sum to 1.
Var soft_histogram(Var samples, const CdaConfig& cfg);

// KL between two strictly positive (k,1,1) distributions, as a scalar node.
Var kl_loss(Var p_r, Var p_s);

}  // namespace ad

}  // namespace fogflow
