#include "fogflow/flownet.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fogflow/errors.hpp"
#include "fogflow/rng.hpp"

namespace fogflow {

void FlowNetConfig::validate() const {
    if (in_channels < 1) throw ValidationError("flownet config: in_channels must be >= 1");
    if (enc_mid < 1 || feat_channels < 1 || dec_mid < 1 || disp_mid < 1)
        throw ValidationError("flownet config: stage widths must be >= 1");
    if (radius < 1) throw ValidationError("flownet config: radius must be >= 1");
    if (sca_window < 3 || sca_window % 2 == 0)
        throw ValidationError("flownet config: sca_window must be odd and >= 3");
    if (sca_k < 1) throw ValidationError("flownet config: sca_k must be >= 1");
    if (!std::isfinite(fuse_alpha) || fuse_alpha < 0.0)
        throw ValidationError("flownet config: fuse_alpha must be finite and >= 0");
}

FlowNetConfig FlowNetConfig::from_json(const nlohmann::json& j) {
    FlowNetConfig c;
    try {
        c.in_channels = j.value("in_channels", c.in_channels);
        c.enc_mid = j.value("enc_mid", c.enc_mid);
        c.feat_channels = j.value("feat_channels", c.feat_channels);
        c.radius = j.value("radius", c.radius);
        c.sca_window = j.value("sca_window", c.sca_window);
        c.sca_k = j.value("sca_k", c.sca_k);
        c.fuse_alpha = j.value("fuse_alpha", c.fuse_alpha);
        c.dec_mid = j.value("dec_mid", c.dec_mid);
        c.disp_mid = j.value("disp_mid", c.disp_mid);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("flownet config: ") + e.what());
    }
    c.validate();
    return c;
}

nlohmann::json FlowNetConfig::to_json() const {
    return nlohmann::json{{"in_channels", in_channels}, {"enc_mid", enc_mid},
                          {"feat_channels", feat_channels}, {"radius", radius},
                          {"sca_window", sca_window},     {"sca_k", sca_k},
                          {"fuse_alpha", fuse_alpha},     {"dec_mid", dec_mid},
                          {"disp_mid", disp_mid}};
}

FlowNet::FlowNet(const FlowNetConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
    cfg_.validate();
    Rng rng(seed);
    auto conv = [&](const std::string& name, int kh, int kw, int ci, int co, double gain = 1.0) {
        std::vector<double> w(static_cast<std::size_t>(kh) * kw * ci * co);
        const double s = gain / std::sqrt(static_cast<double>(kh) * kw * ci);
        for (auto& v : w) v = rng.normal(0.0, s);
        params_.add(name + ".w", std::move(w));
        params_.add(name + ".b", std::vector<double>(co, 0.0));
    };
    conv("enc.c1", 3, 3, cfg_.in_channels, cfg_.enc_mid);
    conv("enc.c2", 3, 3, cfg_.enc_mid, cfg_.feat_channels);
    // Identity plus a nudge: candidate ranking starts in raw feature space.
    std::vector<double> k = identity_kernel(cfg_.feat_channels);
    for (auto& v : k) v += rng.normal(0.0, 0.02);
    params_.add("sca.kernel", std::move(k));
    conv("dec.c1", 3, 3, cfg_.bins(), cfg_.dec_mid);
    // Damped output layers: the x4 upsample-and-scale tail would otherwise
    // start predictions pixels wide, saturating the occlusion check before
    // any training signal exists.
    conv("dec.c2", 3, 3, cfg_.dec_mid, 2, 0.1);
    conv("disp.c1", 3, 3, cfg_.feat_channels, cfg_.disp_mid);
    conv("disp.c2", 3, 3, cfg_.disp_mid, 1, 0.1);
    if (params_.total_size() >= 50000)
        throw ValidationError("flownet: parameter budget (50k) exceeded");
}

namespace ad {

Binder trainable(Tape& t, ParamStore& ps) {
    return [&t, &ps](const std::string& name, Shape sh) { return t.param(ps, name, sh); };
}

Binder frozen(Tape& t, const ParamStore& ps) {
    return [&t, &ps](const std::string& name, Shape sh) {
        const auto& v = ps.value(name);
        if (static_cast<int>(v.size()) != sh.size())
            throw ValidationError("flownet: stored size mismatch for " + name);
        return t.constant(sh, v);
    };
}

namespace {

Var conv_stage(const Binder& bind, const std::string& name, Var x, int ci, int co, int stride) {
    Var w = bind(name + ".w", Shape{9 * ci * co, 1, 1});
    Var b = bind(name + ".b", Shape{co, 1, 1});
    return conv2d(x, w, b, 3, 3, ci, co, stride);
}

}  // namespace

Var encode(const Binder& bind, const FlowNetConfig& cfg, Var frame) {
    cfg.validate();
    const Shape sh = frame.shape();
    if (sh.c != cfg.in_channels) throw ValidationError("encode: input channel mismatch");
    if (sh.h % 4 != 0 || sh.w % 4 != 0)
        throw ValidationError("encode: extent must be divisible by 4");
    Var h1 = tanh_v(conv_stage(bind, "enc.c1", frame, cfg.in_channels, cfg.enc_mid, 2));
    return tanh_v(conv_stage(bind, "enc.c2", h1, cfg.enc_mid, cfg.feat_channels, 2));
}

Var decode_flow(const Binder& bind, const FlowNetConfig& cfg, Var fused_cv) {
    if (fused_cv.shape().c != cfg.bins())
        throw ValidationError("decode_flow: volume bin count mismatch");
    Var h = tanh_v(conv_stage(bind, "dec.c1", fused_cv, cfg.bins(), cfg.dec_mid, 1));
    Var q = conv_stage(bind, "dec.c2", h, cfg.dec_mid, 2, 1);
    return scale(upsample_bilinear(q, 4), 4.0);
}

Var decode_disp(const Binder& bind, const FlowNetConfig& cfg, Var features) {
    if (features.shape().c != cfg.feat_channels)
        throw ValidationError("decode_disp: feature channel mismatch");
    Var h = tanh_v(conv_stage(bind, "disp.c1", features, cfg.feat_channels, cfg.disp_mid, 1));
    Var q = softplus_v(conv_stage(bind, "disp.c2", h, cfg.disp_mid, 1, 1));
    return scale(upsample_bilinear(q, 4), 4.0);
}

Var forward_cv(const Binder& bind, const FlowNetConfig& cfg, Var frame_t, Var frame_t1,
               double* out_min, double* out_max) {
    Var f_t = encode(bind, cfg, frame_t);
    Var f_t1 = encode(bind, cfg, frame_t1);
    Tape& t = *f_t.tape();
    const Shape fs = f_t.shape();
    Var zero_flow = t.constant(Shape{fs.h, fs.w, 2},
                               std::vector<double>(static_cast<std::size_t>(fs.h) * fs.w * 2, 0.0));
    Var cv_temp = temporal_cv(f_t, f_t1, zero_flow, cfg.radius);
    Var kernel = bind("sca.kernel", Shape{cfg.feat_channels * cfg.feat_channels, 1, 1});
    Var cv_spa = sca_cv(f_t, cfg.sca_window, cfg.sca_k, kernel);
    return fuse_cv(cv_temp, cv_spa, cfg.fuse_alpha, out_min, out_max);
}

Var forward_flow(const Binder& bind, const FlowNetConfig& cfg, Var frame_t, Var frame_t1) {
    return decode_flow(bind, cfg, forward_cv(bind, cfg, frame_t, frame_t1));
}

Var forward_disp(const Binder& bind, const FlowNetConfig& cfg, Var frame) {
    return decode_disp(bind, cfg, encode(bind, cfg, frame));
}

}  // namespace ad

std::pair<ImageGrid, ImageGrid> encode_pair(const ImageGrid& I_t, const ImageGrid& I_t1,
                                            const FlowNet& net) {
    ad::Tape t;
    auto bind = ad::frozen(t, net.params());
    ad::Var a = ad::encode(bind, net.config(), t.constant(I_t));
    ad::Var b = ad::encode(bind, net.config(), t.constant(I_t1));
    return {ad::to_grid(a), ad::to_grid(b)};
}

FlowField forward_flow(const ImageGrid& I_t, const ImageGrid& I_t1, const FlowNet& net) {
    ad::Tape t;
    auto bind = ad::frozen(t, net.params());
    ad::Var out = ad::forward_flow(bind, net.config(), t.constant(I_t), t.constant(I_t1));
    return ad::to_flow(out);
}

CostVolume forward_cost_volume(const ImageGrid& I_t, const ImageGrid& I_t1, const FlowNet& net) {
    ad::Tape t;
    auto bind = ad::frozen(t, net.params());
    double mn = 0.0, mx = 0.0;
    ad::Var out =
        ad::forward_cv(bind, net.config(), t.constant(I_t), t.constant(I_t1), &mn, &mx);
    CostVolume cv(out.shape().h, out.shape().w, net.config().radius);
    cv.data = out.value();
    cv.normalized = true;
    cv.norm_min = mn;
    cv.norm_max = mx;
    return cv;
}

ImageGrid forward_disp(const ImageGrid& frame, const FlowNet& net) {
    ad::Tape t;
    auto bind = ad::frozen(t, net.params());
    return ad::to_grid(ad::forward_disp(bind, net.config(), t.constant(frame)));
}

FlowField argmax_flow(const CostVolume& cv) {
    if (cv.height <= 0 || cv.width <= 0) throw ValidationError("argmax_flow: empty volume");
    FlowField f(cv.height, cv.width);
    const int side = cv.side();
    for (int y = 0; y < cv.height; ++y) {
        for (int x = 0; x < cv.width; ++x) {
            int best = 0;
            double bv = cv.at(y, x, 0);
            for (int b = 1; b < cv.bins(); ++b) {
                const double v = cv.at(y, x, b);
                if (v > bv) {
                    bv = v;
                    best = b;
                }
            }
            f.u(y, x) = best % side - cv.radius;
            f.v(y, x) = best / side - cv.radius;
        }
    }
    return f;
}

void EmaConfig::validate() const {
    if (!std::isfinite(lambda) || lambda < 0.0 || lambda >= 1.0)
        throw ValidationError("ema config: lambda must lie in [0,1)");
}

EmaConfig EmaConfig::from_json(const nlohmann::json& j) {
    EmaConfig c;
    try {
        c.lambda = j.value("lambda", c.lambda);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("ema config: ") + e.what());
    }
    c.validate();
    return c;
}

EmaConfig EmaConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("ema config: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("ema config: ") + e.what());
    }
    return from_json(j);
}

nlohmann::json EmaConfig::to_json() const { return nlohmann::json{{"lambda", lambda}}; }

void ema_update(ParamStore& slow, const ParamStore& fast, const EmaConfig& cfg,
                const std::vector<std::string>& prefixes) {
    cfg.validate();
    auto matches = [&](const std::string& name) {
        if (prefixes.empty()) return true;
        for (const auto& p : prefixes)
            if (name.rfind(p, 0) == 0) return true;
        return false;
    };
    bool any = false;
    for (const auto& e : fast.entries()) {
        if (!matches(e.name)) continue;
        any = true;
        if (!slow.has(e.name)) throw ValidationError("ema_update: missing entry " + e.name);
        auto& dst = slow.value(e.name);
        if (dst.size() != e.value.size())
            throw ValidationError("ema_update: size mismatch for " + e.name);
        for (std::size_t i = 0; i < dst.size(); ++i)
            dst[i] = cfg.lambda * dst[i] + (1.0 - cfg.lambda) * e.value[i];
    }
    if (!any) throw ValidationError("ema_update: no entries matched");
}

namespace {

void put_f32_le(std::ostream& os, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, sizeof u);
    const char b[4] = {static_cast<char>(u & 0xff), static_cast<char>((u >> 8) & 0xff),
                       static_cast<char>((u >> 16) & 0xff), static_cast<char>((u >> 24) & 0xff)};
    os.write(b, 4);
}

float get_f32_le(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw ValidationError("checkpoint: truncated parameter blob");
    const std::uint32_t u = static_cast<std::uint32_t>(b[0]) |
                            (static_cast<std::uint32_t>(b[1]) << 8) |
                            (static_cast<std::uint32_t>(b[2]) << 16) |
                            (static_cast<std::uint32_t>(b[3]) << 24);
    float v;
    std::memcpy(&v, &u, sizeof v);
    return v;
}

constexpr const char* kCheckpointFormat = "flow-checkpoint-v1";

}  // namespace

void save_checkpoint(const std::string& dir, const FlowNet& net, long long step) {
    std::filesystem::create_directories(dir);
    const std::string blob_path = dir + "/params.bin";
    std::ofstream blob(blob_path, std::ios::binary);
    if (!blob) throw ValidationError("checkpoint: cannot open " + blob_path);
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : net.params().entries()) {
        entries.push_back({{"name", e.name}, {"size", e.value.size()}});
        for (double d : e.value) put_f32_le(blob, static_cast<float>(d));
    }
    blob.flush();
    if (!blob) throw ValidationError("checkpoint: write failed for " + blob_path);
    const nlohmann::json manifest{{"format", kCheckpointFormat},
                                  {"step", step},
                                  {"seed", net.seed()},
                                  {"config", net.config().to_json()},
                                  {"params", entries},
                                  {"blob", "params.bin"}};
    const std::string man_path = dir + "/manifest.json";
    std::ofstream man(man_path);
    if (!man) throw ValidationError("checkpoint: cannot open " + man_path);
    man << manifest.dump(2) << "\n";
    man.flush();
    if (!man) throw ValidationError("checkpoint: write failed for " + man_path);
}

Checkpoint load_checkpoint(const std::string& dir) {
    const std::string man_path = dir + "/manifest.json";
    std::ifstream man(man_path);
    if (!man) throw ValidationError("checkpoint: cannot open " + man_path);
    nlohmann::json j;
    try {
        man >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("checkpoint: ") + e.what());
    }
    Checkpoint ck;
    try {
        if (j.at("format").get<std::string>() != kCheckpointFormat)
            throw ValidationError("checkpoint: unknown format");
        const FlowNetConfig cfg = FlowNetConfig::from_json(j.at("config"));
        ck.net = FlowNet(cfg, j.value("seed", std::uint64_t{0}));
        ck.step = j.value("step", 0LL);
        const std::string blob_path = dir + "/" + j.value("blob", std::string("params.bin"));
        std::ifstream blob(blob_path, std::ios::binary);
        if (!blob) throw ValidationError("checkpoint: cannot open " + blob_path);
        const auto& listed = j.at("params");
        auto& entries = ck.net.params().entries();
        if (listed.size() != entries.size())
            throw ValidationError("checkpoint: entry count does not match architecture");
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const std::string name = listed[i].at("name").get<std::string>();
            const std::size_t size = listed[i].at("size").get<std::size_t>();
            if (name != entries[i].name || size != entries[i].value.size())
                throw ValidationError("checkpoint: entry " + name + " does not match architecture");
            for (auto& v : entries[i].value) v = static_cast<double>(get_f32_le(blob));
        }
        if (blob.peek() != std::char_traits<char>::eof())
            throw ValidationError("checkpoint: blob longer than manifest describes");
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("checkpoint: ") + e.what());
    }
    return ck;
}

}  // namespace fogflow
