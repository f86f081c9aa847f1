#include "fogflow/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <utility>

#include "fogflow/geometry.hpp"
#include "fogflow/rng.hpp"

namespace fogflow {

void SceneSetConfig::validate() const {
    base.validate();
    if (count <= 0) throw ValidationError("scene set: count must be positive");
}

SceneSetConfig SceneSetConfig::from_json(const nlohmann::json& j) {
    SceneSetConfig c;
    try {
        if (j.contains("base")) c.base = SceneConfig::from_json(j.at("base"));
        c.count = j.value("count", c.count);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("scene set: ") + e.what());
    }
    c.validate();
    return c;
}

nlohmann::json SceneSetConfig::to_json() const {
    return nlohmann::json{{"base", base.to_json()}, {"count", count}, {"seed", seed}};
}

TrainConfig::TrainConfig() {
    train_scenes.base.translation_m = {0.3, 0.0, 0.0};
    train_scenes.base.objects = {SceneObjectConfig{6.0, 6.0, 8.0, 8.0, 8.0, 1.5, 0.5}};
    train_scenes.count = 4;
    train_scenes.seed = 1;
    real_scenes.base = train_scenes.base;
    real_scenes.count = 4;
    real_scenes.seed = 101;
    eval_scenes.base = train_scenes.base;
    eval_scenes.count = 2;
    eval_scenes.seed = 202;
}

void TrainConfig::validate() const {
    if (clean_steps < 0 || consis_steps < 0 || cama_steps < 0 || joint_steps < 0)
        throw ValidationError("train config: step counts must be non-negative");
    if (!std::isfinite(lr) || lr <= 0.0) throw ValidationError("train config: lr must be positive");
    if (!std::isfinite(lr_joint) || lr_joint <= 0.0)
        throw ValidationError("train config: lr_joint must be positive");
    if (!std::isfinite(momentum) || momentum < 0.0 || momentum >= 1.0)
        throw ValidationError("train config: momentum must lie in [0,1)");
    if (!std::isfinite(real_noise_sigma) || real_noise_sigma < 0.0)
        throw ValidationError("train config: real_noise_sigma must be non-negative");
    if (!std::isfinite(real_gamma) || real_gamma <= 0.0)
        throw ValidationError("train config: real_gamma must be positive");
    weights.validate();
    norm.validate();
    cda.validate();
    ema.validate();
    fog_syn.validate();
    fog_real.validate();
    net.validate();
    train_scenes.validate();
    real_scenes.validate();
    eval_scenes.validate();
    for (std::size_t i = 0; i + 1 < depth_bands.size(); ++i)
        if (!(depth_bands[i] < depth_bands[i + 1]))
            throw ValidationError("train config: depth_bands must ascend");
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    try {
        c.clean_steps = j.value("clean_steps", c.clean_steps);
        c.consis_steps = j.value("consis_steps", c.consis_steps);
        c.cama_steps = j.value("cama_steps", c.cama_steps);
        c.joint_steps = j.value("joint_steps", c.joint_steps);
        c.lr = j.value("lr", c.lr);
        c.lr_joint = j.value("lr_joint", c.lr_joint);
        c.momentum = j.value("momentum", c.momentum);
        c.mean_normalize = j.value("mean_normalize", c.mean_normalize);
        if (j.contains("weights")) c.weights = LossWeights::from_json(j.at("weights"));
        if (j.contains("norm")) c.norm = SparseNorm::from_json(j.at("norm"));
        if (j.contains("cda")) c.cda = CdaConfig::from_json(j.at("cda"));
        if (j.contains("ema")) c.ema = EmaConfig::from_json(j.at("ema"));
        if (j.contains("fog_syn")) c.fog_syn = FogParams::from_json(j.at("fog_syn"));
        if (j.contains("fog_real")) c.fog_real = FogParams::from_json(j.at("fog_real"));
        c.real_noise_sigma = j.value("real_noise_sigma", c.real_noise_sigma);
        c.real_gamma = j.value("real_gamma", c.real_gamma);
        c.seed = j.value("seed", c.seed);
        if (j.contains("net")) c.net = FlowNetConfig::from_json(j.at("net"));
        if (j.contains("train_scenes")) c.train_scenes = SceneSetConfig::from_json(j.at("train_scenes"));
        if (j.contains("real_scenes")) c.real_scenes = SceneSetConfig::from_json(j.at("real_scenes"));
        if (j.contains("eval_scenes")) c.eval_scenes = SceneSetConfig::from_json(j.at("eval_scenes"));
        c.depth_bands = j.value("depth_bands", c.depth_bands);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("train config: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("train config: ") + e.what());
    }
    return from_json(j);
}

nlohmann::json TrainConfig::to_json() const {
    return nlohmann::json{{"clean_steps", clean_steps},
                          {"consis_steps", consis_steps},
                          {"cama_steps", cama_steps},
                          {"joint_steps", joint_steps},
                          {"lr", lr},
                          {"lr_joint", lr_joint},
                          {"momentum", momentum},
                          {"mean_normalize", mean_normalize},
                          {"weights", weights.to_json()},
                          {"norm", norm.to_json()},
                          {"cda", cda.to_json()},
                          {"ema", ema.to_json()},
                          {"fog_syn", fog_syn.to_json()},
                          {"fog_real", fog_real.to_json()},
                          {"real_noise_sigma", real_noise_sigma},
                          {"real_gamma", real_gamma},
                          {"seed", seed},
                          {"net", net.to_json()},
                          {"train_scenes", train_scenes.to_json()},
                          {"real_scenes", real_scenes.to_json()},
                          {"eval_scenes", eval_scenes.to_json()},
                          {"depth_bands", depth_bands}};
}

namespace {

// Gamma shift plus clamped sensor noise, the photometric half of the
// synthetic-to-real gap.
ImageGrid shift_domain(ImageGrid img, const TrainConfig& cfg, Rng& rng) {
    const double inv_g = 1.0 / cfg.real_gamma;
    for (auto& v : img.data) {
        double x = std::clamp(v, 0.0, 1.0);
        x = std::pow(x, inv_g) + cfg.real_noise_sigma * rng.normal();
        v = std::clamp(x, 0.0, 1.0);
    }
    return img;
}

}  // namespace

DomainSample make_domain_sample(const SceneConfig& base, std::uint64_t scene_seed,
                                const TrainConfig& cfg) {
    DomainSample d;
    d.scene = make_scene(base, scene_seed);
    d.syn_t = add_fog(d.scene.I_t_left, d.scene.D_t, cfg.fog_syn);
    d.syn_t1 = add_fog(d.scene.I_t1_left, d.scene.D_t1, cfg.fog_syn);
    Rng noise(hash_combine(scene_seed, 0xF09ull));
    d.real_t = shift_domain(add_fog(d.scene.I_t_left, d.scene.D_t, cfg.fog_real), cfg, noise);
    d.real_t1 = shift_domain(add_fog(d.scene.I_t1_left, d.scene.D_t1, cfg.fog_real), cfg, noise);
    RigidFlowResult rf = project_rigid_flow(d.scene.D_t, d.scene.camera);
    d.rigid = rf.flow;
    d.geo_excluded = Mask(d.rigid.height, d.rigid.width);
    for (std::size_t i = 0; i < d.geo_excluded.m.size(); ++i)
        d.geo_excluded.m[i] =
            (d.scene.gt_nonrigid.m[i] != 0.0 || rf.valid.m[i] == 0.0) ? 1.0 : 0.0;
    return d;
}

namespace {

std::vector<DomainSample> build_set(const SceneSetConfig& sc, const TrainConfig& cfg) {
    std::vector<DomainSample> v;
    v.reserve(static_cast<std::size_t>(sc.count));
    for (int i = 0; i < sc.count; ++i)
        v.push_back(make_domain_sample(sc.base, hash_combine(sc.seed, static_cast<std::uint64_t>(i)), cfg));
    return v;
}

}  // namespace

SceneSets build_scene_sets(const TrainConfig& cfg) {
    cfg.validate();
    SceneSets s;
    s.train = build_set(cfg.train_scenes, cfg);
    s.real = build_set(cfg.real_scenes, cfg);
    s.eval = build_set(cfg.eval_scenes, cfg);
    return s;
}

void SgdMomentum::step(ParamStore& params) {
    if (!std::isfinite(lr) || lr <= 0.0) throw ValidationError("sgd: lr must be positive");
    if (!std::isfinite(momentum) || momentum < 0.0 || momentum >= 1.0)
        throw ValidationError("sgd: momentum must lie in [0,1)");
    for (auto& e : params.entries()) {
        auto& vel = velocity[e.name];
        if (vel.size() != e.value.size()) vel.assign(e.value.size(), 0.0);
        for (std::size_t i = 0; i < e.value.size(); ++i) {
            vel[i] = momentum * vel[i] + e.grad[i];
            e.value[i] -= lr * vel[i];
        }
    }
    params.zero_grads();
}

DivergenceGuard::DivergenceGuard(std::string stage, int window)
    : stage_(std::move(stage)), window_(window) {
    if (window_ <= 0) throw ValidationError("divergence guard: window must be positive");
}

void DivergenceGuard::check(double loss, int step) {
    if (!std::isfinite(loss))
        throw DivergenceError(stage_ + ": non-finite loss at step " + std::to_string(step));
    // Desk-scale losses sit orders of magnitude below the ceiling; anything
    // near it is a run-away schedule even if growth is too gradual for the
    // ratio rule (saturating activations make blow-ups grow linearly).
    if (loss > kCeiling)
        throw DivergenceError(stage_ + ": loss exploded at step " + std::to_string(step));
    // The ratio check waits for a full window: early losses start at the
    // smoothing floor (a distilled student first sees a zero residual), and
    // measuring growth against that base would flag ordinary warm-up.
    if (static_cast<int>(recent_.size()) == window_) {
        // Compare against the window's largest loss so only a jump past
        // everything recent counts as an explosion.
        const double hi = *std::max_element(recent_.begin(), recent_.end());
        if (loss > 10.0 * std::max(hi, 1e-6))
            throw DivergenceError(stage_ + ": loss exploded at step " + std::to_string(step));
    }
    recent_.push_back(loss);
    if (static_cast<int>(recent_.size()) > window_) recent_.pop_front();
}

namespace {

struct StepOut {
    LossTerms terms;
    double total = 0.0;
};

// Every optimizer step below accumulates the batch-mean gradient over the
// whole scene set before one parameter update: per-scene tapes keep graph
// memory bounded, scaling each loss by 1/B makes the accumulated gradients
// the mean, and the curves track one smooth objective instead of cycling
// through per-scene levels.

// One clean-domain update: photometric (occlusion maps from the current
// bidirectional predictions), analytic-depth objective on both stereo pairs,
// and rigid-region agreement with the projected camera flow.
StepOut clean_step(FlowNet& clean, const std::vector<DomainSample>& batch, const TrainConfig& cfg,
                   SgdMomentum& opt, DivergenceGuard& guard, int step) {
    const double inv = 1.0 / static_cast<double>(batch.size());
    StepOut out;
    for (const DomainSample& s : batch) {
        ad::Tape t;
        auto bind = ad::trainable(t, clean.params());
        ad::Var I_t = t.constant(s.scene.I_t_left);
        ad::Var I_t1 = t.constant(s.scene.I_t1_left);
        ad::Var F_f = ad::forward_flow(bind, cfg.net, I_t, I_t1);
        ad::Var F_b = ad::forward_flow(bind, cfg.net, I_t1, I_t);
        const auto [O_f, O_b] = fb_occlusion(ad::to_flow(F_f), ad::to_flow(F_b));
        ad::Var pho = ad::photometric_flow_loss(I_t, I_t1, F_f, F_b, t.constant(O_f),
                                                t.constant(O_b), cfg.norm);
        ad::Var D_t = ad::forward_disp(bind, cfg.net, I_t);
        ad::Var D_t1 = ad::forward_disp(bind, cfg.net, I_t1);
        ad::Var dep = ad::depth_loss(I_t, t.constant(s.scene.I_t_right), I_t1,
                                     t.constant(s.scene.I_t1_right), D_t, D_t1, cfg.norm);
        ad::Var geo = ad::geo_flow_loss(F_f, t.constant(s.rigid), t.constant(s.geo_excluded));
        ad::TermVars tv;
        tv.pho = pho;
        tv.depth = dep;
        tv.geo = geo;
        ad::Var total = ad::total_loss(t, tv, cfg.weights);
        out.terms.pho += inv * pho.scalar();
        out.terms.depth += inv * dep.scalar();
        out.terms.geo += inv * geo.scalar();
        out.total += inv * total.scalar();
        t.backward(ad::scale(total, inv));
        t.accumulate_param_grads();
    }
    guard.check(out.total, step);
    opt.step(clean.params());
    return out;
}

// One fog-transfer update: the student predicts on the light-fog frames and
// matches pseudo-labels predicted outside the tape (gradient-severed).
StepOut consis_step(FlowNet& synth, const std::vector<FlowField>& pseudo,
                    const std::vector<DomainSample>& batch, const TrainConfig& cfg,
                    SgdMomentum& opt, DivergenceGuard& guard, int step) {
    const double inv = 1.0 / static_cast<double>(batch.size());
    StepOut out;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        ad::Tape t;
        auto bind = ad::trainable(t, synth.params());
        ad::Var F_syn = ad::forward_flow(bind, cfg.net, t.constant(batch[i].syn_t),
                                         t.constant(batch[i].syn_t1));
        ad::Var consis = ad::consistency_loss(F_syn, t.constant(pseudo[i]), cfg.mean_normalize);
        ad::TermVars tv;
        tv.consis = consis;
        ad::Var total = ad::total_loss(t, tv, cfg.weights);
        out.terms.consis += inv * consis.scalar();
        out.total += inv * total.scalar();
        t.backward(ad::scale(total, inv));
        t.accumulate_param_grads();
    }
    guard.check(out.total, step);
    opt.step(synth.params());
    return out;
}

// One real-domain update: self-supervision against the teacher's prediction
// on the same real-fog frames plus the correlation-distribution KL against
// the synthetic domain, followed by the EMA pull of encoder/context entries.
StepOut cama_step(FlowNet& real, const ParamStore& teacher, const std::vector<FlowField>& pseudo,
                  const std::vector<CostVolume>& cv_s, const std::vector<DomainSample>& batch,
                  const TrainConfig& cfg, SgdMomentum& opt, DivergenceGuard& guard, int step) {
    const double inv = 1.0 / static_cast<double>(batch.size());
    StepOut out;
    for (std::size_t j = 0; j < batch.size(); ++j) {
        CdaConfig cda_step = cfg.cda;
        cda_step.seed =
            hash_combine(hash_combine(cfg.cda.seed, static_cast<std::uint64_t>(step) + 1), j);
        const CorrelationDistribution p_s =
            histogram(sample_correlations(cv_s[j % cv_s.size()], cda_step), cda_step);

        ad::Tape t;
        auto bind = ad::trainable(t, real.params());
        double mn = 0.0, mx = 0.0;
        ad::Var cv_r = ad::forward_cv(bind, cfg.net, t.constant(batch[j].real_t),
                                      t.constant(batch[j].real_t1), &mn, &mx);
        CostVolume probe(cv_r.shape().h, cv_r.shape().w, cfg.net.radius);
        probe.data = cv_r.value();
        probe.normalized = true;
        probe.norm_min = mn;
        probe.norm_max = mx;
        const std::vector<int> slots = sample_slots(probe, cda_step);
        ad::Var p_r = ad::soft_histogram(ad::gather(cv_r, slots), cda_step);
        ad::Var p_s_var =
            t.constant(ad::Shape{static_cast<int>(p_s.probs.size()), 1, 1}, p_s.probs);
        ad::Var kl = ad::kl_loss(p_r, p_s_var);
        ad::Var F_real = ad::decode_flow(bind, cfg.net, cv_r);
        ad::Var self = ad::self_supervised_loss(F_real, t.constant(pseudo[j]), cfg.mean_normalize);
        ad::TermVars tv;
        tv.self_sup = self;
        tv.kl = kl;
        ad::Var total = ad::total_loss(t, tv, cfg.weights);
        out.terms.self_sup += inv * self.scalar();
        out.terms.kl += inv * kl.scalar();
        out.total += inv * total.scalar();
        t.backward(ad::scale(total, inv));
        t.accumulate_param_grads();
    }
    guard.check(out.total, step);
    opt.step(real.params());
    ema_update(real.params(), teacher, cfg.ema, {"enc.", "sca."});
    return out;
}

}  // namespace

DamaResult stage_dama(const TrainConfig& cfg, const SceneSets& sets) {
    cfg.validate();
    if (sets.train.empty()) throw ValidationError("stage_dama: empty train set");
    FlowNet clean(cfg.net, cfg.seed);
    std::vector<LossCurveRow> clean_curve;
    {
        SgdMomentum opt{cfg.lr, cfg.momentum, {}};
        DivergenceGuard guard("dama/clean");
        for (int step = 0; step < cfg.clean_steps; ++step) {
            const StepOut o = clean_step(clean, sets.train, cfg, opt, guard, step);
            clean_curve.push_back({step, o.terms, o.total});
        }
    }
    FlowNet synth = clean;
    std::vector<LossCurveRow> consis_curve;
    {
        std::vector<FlowField> pseudo;
        pseudo.reserve(sets.train.size());
        for (const auto& s : sets.train)
            pseudo.push_back(forward_flow(s.scene.I_t_left, s.scene.I_t1_left, clean));
        SgdMomentum opt{cfg.lr, cfg.momentum, {}};
        DivergenceGuard guard("dama/consis");
        for (int step = 0; step < cfg.consis_steps; ++step) {
            const StepOut o = consis_step(synth, pseudo, sets.train, cfg, opt, guard, step);
            consis_curve.push_back({step, o.terms, o.total});
        }
    }
    return DamaResult{std::move(clean), std::move(synth), std::move(clean_curve),
                      std::move(consis_curve)};
}

CamaResult stage_cama(const TrainConfig& cfg, const SceneSets& sets, const DamaResult& dama) {
    cfg.validate();
    if (sets.real.empty()) throw ValidationError("stage_cama: empty real set");
    if (sets.train.empty()) throw ValidationError("stage_cama: empty train set");
    if (sets.eval.empty()) throw ValidationError("stage_cama: empty eval set");
    CamaResult out{dama.synth, {}, 0.0, 0.0};
    out.kl_start = mean_kl_real(out.real, dama.synth, sets.eval, cfg.cda);

    std::vector<FlowField> pseudo;
    pseudo.reserve(sets.real.size());
    for (const auto& r : sets.real)
        pseudo.push_back(forward_flow(r.real_t, r.real_t1, dama.synth));
    std::vector<CostVolume> cv_s;
    cv_s.reserve(sets.train.size());
    for (const auto& s : sets.train)
        cv_s.push_back(forward_cost_volume(s.syn_t, s.syn_t1, dama.synth));

    SgdMomentum opt{cfg.lr, cfg.momentum, {}};
    DivergenceGuard guard("cama");
    for (int step = 0; step < cfg.cama_steps; ++step) {
        const StepOut o =
            cama_step(out.real, dama.synth.params(), pseudo, cv_s, sets.real, cfg, opt, guard, step);
        out.curve.push_back({step, o.terms, o.total});
    }
    out.kl_end = mean_kl_real(out.real, dama.synth, sets.eval, cfg.cda);
    return out;
}

double mean_epe_real(const FlowNet& net, const std::vector<DomainSample>& samples) {
    if (samples.empty()) throw ValidationError("mean_epe_real: empty sample set");
    double acc = 0.0;
    for (const auto& s : samples) {
        const FlowField pred = forward_flow(s.real_t, s.real_t1, net);
        acc += epe(pred, s.scene.gt_flow, Mask(pred.height, pred.width, 1.0));
    }
    return acc / static_cast<double>(samples.size());
}

double mean_kl_real(const FlowNet& real, const FlowNet& synth,
                    const std::vector<DomainSample>& samples, const CdaConfig& cda) {
    if (samples.empty()) throw ValidationError("mean_kl_real: empty sample set");
    double acc = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        CdaConfig c = cda;
        c.seed = hash_combine(cda.seed, 0x5EEDull + i);
        const CostVolume cv_r = forward_cost_volume(samples[i].real_t, samples[i].real_t1, real);
        const CostVolume cv_s = forward_cost_volume(samples[i].syn_t, samples[i].syn_t1, synth);
        const CorrelationDistribution p_r = histogram(sample_correlations(cv_r, c), c);
        const CorrelationDistribution p_s = histogram(sample_correlations(cv_s, c), c);
        acc += kl_loss(p_r, p_s);
    }
    return acc / static_cast<double>(samples.size());
}

EvalReport evaluate_real(const FlowNet& net, const std::vector<DomainSample>& samples,
                         const std::vector<double>& band_edges) {
    if (samples.empty()) throw ValidationError("evaluate_real: empty sample set");
    struct Acc {
        long long n = 0;
        double e = 0.0, f = 0.0;
        void add(const RegionMetrics& m) {
            n += m.count;
            e += m.epe * static_cast<double>(m.count);
            f += m.f1_all * static_cast<double>(m.count);
        }
        RegionMetrics out() const {
            RegionMetrics r;
            r.count = n;
            if (n > 0) {
                r.epe = e / static_cast<double>(n);
                r.f1_all = f / static_cast<double>(n);
            }
            return r;
        }
    };
    Acc all, rigid, nonrigid;
    std::map<std::pair<double, double>, Acc> bands;
    for (const auto& s : samples) {
        const FlowField pred = forward_flow(s.real_t, s.real_t1, net);
        const EvalReport r = evaluate(pred, s.scene.gt_flow, Mask(pred.height, pred.width, 1.0),
                                      s.scene.gt_nonrigid, s.scene.D_t, band_edges);
        all.add(r.all);
        rigid.add(r.rigid);
        nonrigid.add(r.nonrigid);
        for (const auto& b : r.bands) bands[{b.lo, b.hi}].add(b.metrics);
    }
    EvalReport merged;
    merged.all = all.out();
    merged.rigid = rigid.out();
    merged.nonrigid = nonrigid.out();
    for (const auto& [edge, acc] : bands) merged.bands.push_back({edge.first, edge.second, acc.out()});
    return merged;
}

namespace {

nlohmann::json curve_tail(const std::vector<LossCurveRow>& curve) {
    if (curve.empty()) return nullptr;
    return curve.back().total;
}

}  // namespace

PipelineResult run_pipeline(const TrainConfig& cfg) {
    cfg.validate();
    const SceneSets sets = build_scene_sets(cfg);
    DamaResult dama = stage_dama(cfg, sets);
    CamaResult cama = stage_cama(cfg, sets, dama);
    PipelineResult out{std::move(dama.clean),
                       std::move(dama.synth),
                       std::move(cama.real),
                       std::move(dama.clean_curve),
                       std::move(dama.consis_curve),
                       std::move(cama.curve),
                       {},
                       cama.kl_start,
                       cama.kl_end,
                       {}};

    if (cfg.joint_steps > 0) {
        SgdMomentum opt_clean{cfg.lr_joint, cfg.momentum, {}};
        SgdMomentum opt_synth{cfg.lr_joint, cfg.momentum, {}};
        SgdMomentum opt_real{cfg.lr_joint, cfg.momentum, {}};
        DivergenceGuard g_clean("joint/clean"), g_consis("joint/consis"), g_cama("joint/cama");
        for (int step = 0; step < cfg.joint_steps; ++step) {
            const StepOut a = clean_step(out.clean, sets.train, cfg, opt_clean, g_clean, step);
            // Teachers move each joint step, so pseudo-labels and reference
            // volumes are refreshed rather than cached.
            std::vector<FlowField> pseudo_syn;
            pseudo_syn.reserve(sets.train.size());
            for (const auto& s : sets.train)
                pseudo_syn.push_back(forward_flow(s.scene.I_t_left, s.scene.I_t1_left, out.clean));
            const StepOut b =
                consis_step(out.synth, pseudo_syn, sets.train, cfg, opt_synth, g_consis, step);
            std::vector<FlowField> pseudo_real;
            pseudo_real.reserve(sets.real.size());
            for (const auto& r : sets.real)
                pseudo_real.push_back(forward_flow(r.real_t, r.real_t1, out.synth));
            std::vector<CostVolume> cv_s;
            cv_s.reserve(sets.train.size());
            for (const auto& s : sets.train)
                cv_s.push_back(forward_cost_volume(s.syn_t, s.syn_t1, out.synth));
            const StepOut c = cama_step(out.real, out.synth.params(), pseudo_real, cv_s, sets.real,
                                        cfg, opt_real, g_cama, step);
            LossTerms terms;
            terms.depth = a.terms.depth;
            terms.pho = a.terms.pho;
            terms.geo = a.terms.geo;
            terms.consis = b.terms.consis;
            terms.self_sup = c.terms.self_sup;
            terms.kl = c.terms.kl;
            out.joint_curve.push_back({step, terms, a.total + b.total + c.total});
        }
    }

    nlohmann::json report;
    report["schema"] = "flow-train-report-v1";
    report["seed"] = cfg.seed;
    report["steps"] = {{"clean", cfg.clean_steps},
                       {"consis", cfg.consis_steps},
                       {"cama", cfg.cama_steps},
                       {"joint", cfg.joint_steps}};
    report["kl"] = {{"start", out.kl_start}, {"end", out.kl_end}};
    report["final_loss"] = {{"clean", curve_tail(out.clean_curve)},
                            {"consis", curve_tail(out.consis_curve)},
                            {"cama", curve_tail(out.cama_curve)},
                            {"joint", curve_tail(out.joint_curve)}};
    report["metrics"] = {
        {"clean", evaluate_real(out.clean, sets.eval, cfg.depth_bands).to_json()},
        {"synth", evaluate_real(out.synth, sets.eval, cfg.depth_bands).to_json()},
        {"real", evaluate_real(out.real, sets.eval, cfg.depth_bands).to_json()}};
    out.report = std::move(report);
    return out;
}

void write_pipeline_outputs(const std::string& dir, const TrainConfig& cfg,
                            const PipelineResult& result) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        std::ofstream out(dir + "/report.json");
        if (!out) throw ValidationError("pipeline outputs: cannot write " + dir + "/report.json");
        out << result.report.dump(2) << "\n";
    }
    write_loss_curve_csv(dir + "/curve_clean.csv", result.clean_curve);
    write_loss_curve_csv(dir + "/curve_consis.csv", result.consis_curve);
    write_loss_curve_csv(dir + "/curve_cama.csv", result.cama_curve);
    write_loss_curve_csv(dir + "/curve_joint.csv", result.joint_curve);
    const long long steps =
        static_cast<long long>(cfg.clean_steps) + cfg.consis_steps + cfg.cama_steps + cfg.joint_steps;
    save_checkpoint(dir + "/checkpoint", result.real, steps);
    const std::vector<DomainSample> eval_set = build_set(cfg.eval_scenes, cfg);
    char name[64];
    for (std::size_t i = 0; i < eval_set.size(); ++i) {
        const FlowField pred = forward_flow(eval_set[i].real_t, eval_set[i].real_t1, result.real);
        std::snprintf(name, sizeof name, "/pred_%04zu.ppm", i);
        write_flow_ppm(dir + name, pred);
        std::snprintf(name, sizeof name, "/gt_%04zu.ppm", i);
        write_flow_ppm(dir + name, eval_set[i].scene.gt_flow);
    }
}

std::vector<AblationRow> run_ablation(const TrainConfig& cfg) {
    cfg.validate();
    const SceneSets sets = build_scene_sets(cfg);
    const DamaResult dama = stage_dama(cfg, sets);
    auto row = [&](const std::string& name, const FlowNet& net) {
        const EvalReport r = evaluate_real(net, sets.eval, cfg.depth_bands);
        return AblationRow{name, r.all.epe, r.all.f1_all};
    };
    std::vector<AblationRow> rows;
    rows.push_back(row("none", dama.clean));
    rows.push_back(row("consis", dama.synth));
    TrainConfig cfg_self = cfg;
    cfg_self.weights.l6 = 0.0;
    rows.push_back(row("consis+self", stage_cama(cfg_self, sets, dama).real));
    rows.push_back(row("consis+self+kl", stage_cama(cfg, sets, dama).real));
    return rows;
}

}  // namespace fogflow
