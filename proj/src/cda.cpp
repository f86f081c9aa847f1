#include "fogflow/cda.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <numeric>

#include "fogflow/errors.hpp"
#include "fogflow/rng.hpp"

namespace fogflow {

void CdaConfig::validate() const {
    if (k_cda < 2) throw ValidationError("cda: k_cda must be >= 2");
    if (n_samples < k_cda) throw ValidationError("cda: N must be >= k_cda");
    if (!(temperature > 0.0) || !std::isfinite(temperature))
        throw ValidationError("cda: temperature must be positive");
    if (!thresholds.empty()) {
        if (static_cast<int>(thresholds.size()) != k_cda - 1)
            throw ValidationError("cda: need k_cda - 1 thresholds");
        double prev = 0.0;
        for (double t : thresholds) {
            if (!(t > prev && t < 1.0)) throw ValidationError("cda: thresholds must ascend strictly within (0,1)");
            prev = t;
        }
    }
}

std::vector<double> CdaConfig::effective_thresholds() const {
    validate();
    if (!thresholds.empty()) return thresholds;
    std::vector<double> t(static_cast<std::size_t>(k_cda) - 1);
    for (int i = 1; i < k_cda; ++i) t[i - 1] = static_cast<double>(i) / k_cda;
    return t;
}

std::vector<double> CdaConfig::bin_centers() const {
    const std::vector<double> t = effective_thresholds();
    std::vector<double> c(static_cast<std::size_t>(k_cda));
    for (int i = 0; i < k_cda; ++i) {
        const double lo = i == 0 ? 0.0 : t[i - 1];
        const double hi = i == k_cda - 1 ? 1.0 : t[i];
        c[i] = 0.5 * (lo + hi);
    }
    return c;
}

int CdaConfig::bin_of(double c) const {
    const std::vector<double> t = effective_thresholds();
    return static_cast<int>(std::upper_bound(t.begin(), t.end(), c) - t.begin());
}

CdaConfig CdaConfig::from_json(const nlohmann::json& j) {
    CdaConfig c;
    try {
        c.n_samples = j.value("n_samples", c.n_samples);
        c.k_cda = j.value("k_cda", c.k_cda);
        c.seed = j.value("seed", c.seed);
        c.temperature = j.value("temperature", c.temperature);
        if (j.contains("thresholds")) c.thresholds = j.at("thresholds").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("cda config: ") + e.what());
    }
    c.validate();
    return c;
}

CdaConfig CdaConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open cda config '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("cda config '" + path + "': " + e.what());
    }
    return from_json(j);
}

nlohmann::json CdaConfig::to_json() const {
    nlohmann::json j{{"n_samples", n_samples},
                     {"k_cda", k_cda},
                     {"seed", seed},
                     {"temperature", temperature}};
    if (!thresholds.empty()) j["thresholds"] = thresholds;
    return j;
}

std::vector<int> sample_slots(const CostVolume& cv, const CdaConfig& cfg) {
    cfg.validate();
    const std::size_t m = cv.data.size();
    if (m < static_cast<std::size_t>(cfg.n_samples))
        throw ValidationError("sample_slots: volume has fewer slots than N");
    for (double v : cv.data)
        if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("sample_slots: volume is not normalized to [0,1]");
    // Partial Fisher-Yates gives a uniform draw without replacement.
    std::vector<int> idx(m);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(cfg.seed);
    for (int i = 0; i < cfg.n_samples; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(m - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(static_cast<std::size_t>(cfg.n_samples));
    return idx;
}

std::vector<double> sample_correlations(const CostVolume& cv, const CdaConfig& cfg) {
    const std::vector<int> idx = sample_slots(cv, cfg);
    std::vector<double> s(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) s[i] = cv.data[static_cast<std::size_t>(idx[i])];
    return s;
}

CorrelationDistribution histogram(const std::vector<double>& samples, const CdaConfig& cfg) {
    const std::vector<double> t = cfg.effective_thresholds();
    if (samples.empty()) throw ValidationError("histogram: no samples");
    CorrelationDistribution d;
    d.counts.assign(static_cast<std::size_t>(cfg.k_cda), 0);
    d.n_samples = static_cast<long long>(samples.size());
    for (double s : samples) {
        if (!(s >= 0.0 && s <= 1.0)) throw ValidationError("histogram: sample outside [0,1]");
        const std::size_t bin = std::upper_bound(t.begin(), t.end(), s) - t.begin();
        ++d.counts[bin];
    }
    const double denom = static_cast<double>(d.n_samples) + cfg.k_cda;
    d.probs.resize(d.counts.size());
    for (std::size_t i = 0; i < d.counts.size(); ++i)
        d.probs[i] = (static_cast<double>(d.counts[i]) + 1.0) / denom;
    return d;
}

double kl_loss(const CorrelationDistribution& p_r, const CorrelationDistribution& p_s) {
    if (p_r.probs.size() != p_s.probs.size()) throw ValidationError("kl_loss: class count mismatch");
    if (p_r.probs.empty()) throw ValidationError("kl_loss: empty distribution");
    double kl = 0.0;
    for (std::size_t i = 0; i < p_r.probs.size(); ++i) {
        const double r = p_r.probs[i], s = p_s.probs[i];
        if (!(r > 0.0) || !(s > 0.0)) throw ValidationError("kl_loss: distributions must be strictly positive");
        kl += r * std::log(r / s);
    }
    return kl;
}

namespace ad {

Var soft_histogram(Var samples, const CdaConfig& cfg) {
    if (!samples.valid()) throw ValidationError("soft_histogram: invalid operand");
    Tape& t = *samples.tape();
    const int n = samples.shape().size();
    if (n < 1) throw ValidationError("soft_histogram: no samples");
    const std::vector<double> centers = cfg.bin_centers();
    const int k = cfg.k_cda;
    const double temp = cfg.temperature;
    const int is = samples.id();
    const bool ng = t.needs_grad(is);
    const int id = t.make_node(Shape{k, 1, 1}, ng);

    const auto& sv = t.val(is);
    auto& out = t.val(id);
    const double denom = static_cast<double>(n) + k;
    // Softmax over bins of -|c - center_i| / temp; occupancy is the sum of
    // each sample's assignment weights, smoothed like the hard histogram.
    std::vector<double> w(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) out[i] = 1.0 / denom;
    for (int j = 0; j < n; ++j) {
        if (!std::isfinite(sv[j])) throw ValidationError("soft_histogram: non-finite sample");
        double zmax = -1e300;
        for (int i = 0; i < k; ++i) {
            w[i] = -std::abs(sv[j] - centers[i]) / temp;
            zmax = std::max(zmax, w[i]);
        }
        double zsum = 0.0;
        for (int i = 0; i < k; ++i) {
            w[i] = std::exp(w[i] - zmax);
            zsum += w[i];
        }
        for (int i = 0; i < k; ++i) out[i] += w[i] / zsum / denom;
    }
    if (ng)
        t.set_backward(id, [id, is, n, k, temp, denom, centers](Tape& tp) {
            const auto& g = tp.grad(id);
            const auto& sv2 = tp.val(is);
            auto& gs = tp.grad(is);
            std::vector<double> w(static_cast<std::size_t>(k)), dz(static_cast<std::size_t>(k));
            for (int j = 0; j < n; ++j) {
                double zmax = -1e300;
                for (int i = 0; i < k; ++i) {
                    w[i] = -std::abs(sv2[j] - centers[i]) / temp;
                    zmax = std::max(zmax, w[i]);
                    dz[i] = (sv2[j] - centers[i] >= 0.0 ? -1.0 : 1.0) / temp;
                }
                double zsum = 0.0;
                for (int i = 0; i < k; ++i) {
                    w[i] = std::exp(w[i] - zmax);
                    zsum += w[i];
                }
                double mean_dz = 0.0;
                for (int i = 0; i < k; ++i) {
                    w[i] /= zsum;
                    mean_dz += w[i] * dz[i];
                }
                double acc = 0.0;
                for (int i = 0; i < k; ++i) acc += g[i] * w[i] * (dz[i] - mean_dz);
                gs[j] += acc / denom;
            }
        });
    return Var(&t, id);
}

Var kl_loss(Var p_r, Var p_s) {
    if (!p_r.valid() || !p_s.valid()) throw ValidationError("kl_loss: invalid operand");
    if (p_r.tape() != p_s.tape()) throw ValidationError("kl_loss: operands on different tapes");
    if (p_r.shape() != p_s.shape()) throw ValidationError("kl_loss: class count mismatch");
    for (double v : p_r.value())
        if (!(v > 0.0)) throw ValidationError("kl_loss: distributions must be strictly positive");
    for (double v : p_s.value())
        if (!(v > 0.0)) throw ValidationError("kl_loss: distributions must be strictly positive");
    return sum(mul(p_r, sub(log_v(p_r), log_v(p_s))));
}

}  // namespace ad

}  // namespace fogflow
