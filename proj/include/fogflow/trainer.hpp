#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fogflow/cda.hpp"
#include "fogflow/errors.hpp"
#include "fogflow/eval.hpp"
#include "fogflow/flownet.hpp"
#include "fogflow/fog.hpp"
#include "fogflow/losses.hpp"
#include "fogflow/scene.hpp"

namespace fogflow {

// `count` draws of one scene recipe; draw i is seeded hash_combine(seed, i).
struct SceneSetConfig {
    SceneConfig base;
    int count = 4;
    std::uint64_t seed = 1;

    void validate() const;
    static SceneSetConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

// One scene rendered in every domain. syn_* carry rendered fog on the left
// frames; real_* carry fog plus a gamma shift and sensor noise, the
// distribution-shifted stand-in for captured foggy footage.
struct DomainSample {
    SceneSample scene;
    ImageGrid syn_t, syn_t1;
    ImageGrid real_t, real_t1;
    FlowField rigid;    // camera-induced flow from D_t
    Mask geo_excluded;  // nonrigid or geometrically invalid pixels
};

struct SceneSets {
    std::vector<DomainSample> train;
    std::vector<DomainSample> real;  // held-out; only real_* renders are trained on
    std::vector<DomainSample> eval;
};

// Full schedule: clean training, fog-consistency transfer, correlation
// distillation, optional joint fine-tune. Step counts are desk-scale.
struct TrainConfig {
    int clean_steps = 500;
    int consis_steps = 300;
    int cama_steps = 200;
    int joint_steps = 0;
    double lr = 5e-4;
    double lr_joint = 2e-4;
    double momentum = 0.9;
    bool mean_normalize = true;  // average (not sum) the flow-agreement losses
    LossWeights weights;
    SparseNorm norm;
    CdaConfig cda;
    EmaConfig ema;
    // Both domains render target-density fog; the remaining synthetic-to-real
    // gap is photometric style (gamma shift plus sensor noise).
    FogParams fog_syn{kBetaDense, {0.8, 0.8, 0.8}};
    FogParams fog_real{kBetaDense, {0.8, 0.8, 0.8}};
    double real_noise_sigma = 0.01;
    double real_gamma = 1.2;
    std::uint64_t seed = 0;
    FlowNetConfig net;
    SceneSetConfig train_scenes;
    SceneSetConfig real_scenes;
    SceneSetConfig eval_scenes;
    std::vector<double> depth_bands{0.0, 12.0, 20.0, 30.0, 40.0, 100.0};

    TrainConfig();

    void validate() const;
    static TrainConfig from_json(const nlohmann::json& j);
    static TrainConfig load(const std::string& path);
    nlohmann::json to_json() const;
};

DomainSample make_domain_sample(const SceneConfig& base, std::uint64_t scene_seed,
                                const TrainConfig& cfg);
SceneSets build_scene_sets(const TrainConfig& cfg);

// Heavy-ball SGD: v <- momentum*v + g, theta <- theta - lr*v. step() consumes
// and clears the store's accumulated gradients.
struct SgdMomentum {
    double lr = 5e-4;
    double momentum = 0.9;
    std::map<std::string, std::vector<double>> velocity;

    void step(ParamStore& params);
};

// Trips on a non-finite total, on any loss above an absolute ceiling, or --
// once the trailing window is full -- on a 10x jump past the window's largest
// loss (floored at 1e-6 so near-zero plateaus cannot trip it). The window
// must fill first because a distilled student starts at a zero residual and
// legitimately drifts up to its working scale over the first steps.
class DivergenceGuard {
public:
    static constexpr double kCeiling = 1e6;

    explicit DivergenceGuard(std::string stage, int window = 50);
    void check(double loss, int step);

private:
    std::string stage_;
    int window_;
    std::deque<double> recent_;
};

struct DamaResult {
    FlowNet clean;
    FlowNet synth;
    std::vector<LossCurveRow> clean_curve;
    std::vector<LossCurveRow> consis_curve;
};

struct CamaResult {
    FlowNet real;
    std::vector<LossCurveRow> curve;
    double kl_start = 0.0;  // mean hard-histogram KL over the eval set
    double kl_end = 0.0;
};

// Clean-domain training (photometric + depth + geometric), then the
// synthetic-fog branch distilled from the frozen clean branch's flow.
DamaResult stage_dama(const TrainConfig& cfg, const SceneSets& sets);

// Real-domain branch: pseudo-labels from the synthetic branch on real-fog
// frames, correlation-distribution KL against the synthetic domain, and a
// per-step EMA pull of the encoder/context entries toward the synthetic
// branch.
CamaResult stage_cama(const TrainConfig& cfg, const SceneSets& sets, const DamaResult& dama);

struct PipelineResult {
    FlowNet clean;
    FlowNet synth;
    FlowNet real;
    std::vector<LossCurveRow> clean_curve;
    std::vector<LossCurveRow> consis_curve;
    std::vector<LossCurveRow> cama_curve;
    std::vector<LossCurveRow> joint_curve;
    double kl_start = 0.0;
    double kl_end = 0.0;
    nlohmann::json report;
};

PipelineResult run_pipeline(const TrainConfig& cfg);

// report.json, per-stage CSV curves, the real-branch checkpoint, and PPM
// renderings of predicted and ground-truth flow on the eval scenes.
void write_pipeline_outputs(const std::string& dir, const TrainConfig& cfg,
                            const PipelineResult& result);

// Mean endpoint error of the net's predictions on the real-fog renders,
// averaged over the samples (each scene weighted equally).
double mean_epe_real(const FlowNet& net, const std::vector<DomainSample>& samples);
// Full pixel-weighted breakdown of the same predictions.
EvalReport evaluate_real(const FlowNet& net, const std::vector<DomainSample>& samples,
                         const std::vector<double>& band_edges);
// Mean hard-histogram KL between the real branch on real-fog frames and the
// synthetic branch on light-fog frames, over the samples.
double mean_kl_real(const FlowNet& real, const FlowNet& synth,
                    const std::vector<DomainSample>& samples, const CdaConfig& cda);

// One adaptation-toggle row: which transfer losses were active, and the
// resulting real-fog eval metrics.
struct AblationRow {
    std::string name;
    double epe = 0.0;
    double f1 = 0.0;
};

// Paired runs sharing one clean/synthetic training: no adaptation (clean
// branch as-is), consistency transfer only, consistency + self-supervision,
// and the full set with the correlation KL.
std::vector<AblationRow> run_ablation(const TrainConfig& cfg);

}  // namespace fogflow
