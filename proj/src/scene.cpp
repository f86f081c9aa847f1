#include "fogflow/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>

#include "fogflow/errors.hpp"
#include "fogflow/rng.hpp"

namespace fogflow {

namespace {

double lattice_value(std::uint64_t salt, long long ix, long long iy) {
    const std::uint64_t h =
        hash_combine(hash_combine(salt, static_cast<std::uint64_t>(ix)), static_cast<std::uint64_t>(iy));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double fade(double u) { return u * u * u * (u * (6.0 * u - 15.0) + 10.0); }

double value_noise(std::uint64_t salt, double x, double y) {
    const double fx = std::floor(x), fy = std::floor(y);
    const long long ix = static_cast<long long>(fx), iy = static_cast<long long>(fy);
    const double u = fade(x - fx), v = fade(y - fy);
    const double v00 = lattice_value(salt, ix, iy);
    const double v10 = lattice_value(salt, ix + 1, iy);
    const double v01 = lattice_value(salt, ix, iy + 1);
    const double v11 = lattice_value(salt, ix + 1, iy + 1);
    return (1 - u) * (1 - v) * v00 + u * (1 - v) * v10 + (1 - u) * v * v01 + u * v * v11;
}

// Multi-octave value noise in [0,1]; octave o doubles frequency, halves weight.
double fbm(std::uint64_t salt, double x, double y, int octaves) {
    double val = 0.0, amp = 1.0, total = 0.0, freq = 1.0;
    for (int o = 0; o < octaves; ++o) {
        val += amp * value_noise(hash_combine(salt, static_cast<std::uint64_t>(o)), x * freq, y * freq);
        total += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    return val / total;
}

// Fronto-parallel object patch in world (frame-t) coordinates.
struct ObjectPlane {
    double z = 0.0;
    double lo_x = 0.0, hi_x = 0.0, lo_y = 0.0, hi_y = 0.0;
    Vec3 delta{0.0, 0.0, 0.0};  // world translation between frames
    std::uint64_t salt = 0;
};

// Background plane n·X = h with n = (0, n_y, 1).
struct BackgroundPlane {
    double n_y = 0.0;
    double h = 0.0;
    std::uint64_t salt = 0;
};

struct SceneGeometry {
    BackgroundPlane bg;
    std::vector<ObjectPlane> objects;
    double cell = 1.0;
    int octaves = 3;
};

struct Hit {
    double s = 0.0;       // camera-space depth of the hit
    Vec3 X{0, 0, 0};      // hit point in frame-t world coordinates
    int object = -1;      // -1: background
    double tex_x = 0.0, tex_y = 0.0;
};

// Cast the ray of pixel (px, py) of a camera whose coordinate transform from
// frame-t world is X_cam = R_c·X + t_c; `tau` is 0 at frame t, 1 at frame t+1
// (objects sit at their translated positions).
std::optional<Hit> cast_ray(const SceneGeometry& geo, const SceneConfig& cfg, const Mat3& R_c,
                            const Vec3& t_c, int tau, double px, double py) {
    const Mat3 Rt = mat3_transpose(R_c);
    const Vec3 r{(px - cfg.center_x()) / cfg.fx, (py - cfg.center_y()) / cfg.fy, 1.0};
    const Vec3 dir = mat3_apply(Rt, r);
    const Vec3 neg_t{-t_c[0], -t_c[1], -t_c[2]};
    const Vec3 org = mat3_apply(Rt, neg_t);

    std::optional<Hit> best;
    auto consider = [&best](const Hit& h) {
        if (h.s > 1e-9 && (!best || h.s < best->s)) best = h;
    };

    const double denom = geo.bg.n_y * dir[1] + dir[2];
    if (std::abs(denom) > 1e-12) {
        const double s = (geo.bg.h - (geo.bg.n_y * org[1] + org[2])) / denom;
        Hit h;
        h.s = s;
        h.X = {org[0] + s * dir[0], org[1] + s * dir[1], org[2] + s * dir[2]};
        h.object = -1;
        h.tex_x = h.X[0];
        h.tex_y = h.X[1];
        consider(h);
    }
    for (std::size_t i = 0; i < geo.objects.size(); ++i) {
        const ObjectPlane& ob = geo.objects[i];
        if (std::abs(dir[2]) < 1e-12) continue;
        const double s = (ob.z - org[2]) / dir[2];
        if (s <= 1e-9) continue;
        const double wx = org[0] + s * dir[0] - tau * ob.delta[0];
        const double wy = org[1] + s * dir[1] - tau * ob.delta[1];
        if (wx < ob.lo_x || wx >= ob.hi_x || wy < ob.lo_y || wy >= ob.hi_y) continue;
        Hit h;
        h.s = s;
        h.X = {org[0] + s * dir[0], org[1] + s * dir[1], org[2] + s * dir[2]};
        h.object = static_cast<int>(i);
        h.tex_x = wx;
        h.tex_y = wy;
        consider(h);
    }
    return best;
}

double shade(const SceneGeometry& geo, const Hit& h, int channel) {
    const std::uint64_t salt =
        hash_combine(h.object < 0 ? geo.bg.salt : geo.objects[h.object].salt,
                     static_cast<std::uint64_t>(channel));
    return 0.1 + 0.8 * fbm(salt, h.tex_x / geo.cell, h.tex_y / geo.cell, geo.octaves);
}

// Render one camera; optionally keep depths and per-pixel hits.
ImageGrid render(const SceneGeometry& geo, const SceneConfig& cfg, const Mat3& R_c, const Vec3& t_c,
                 int tau, DepthMap* depth_out, std::vector<Hit>* hits_out) {
    ImageGrid img(cfg.height, cfg.width, 3);
    if (depth_out) *depth_out = DepthMap(cfg.height, cfg.width, 1);
    if (hits_out) hits_out->resize(static_cast<std::size_t>(cfg.height) * cfg.width);
    for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x) {
            const auto hit = cast_ray(geo, cfg, R_c, t_c, tau, x, y);
            if (!hit)
                throw ValidationError("make_scene: a pixel ray misses every surface (depth plane behind camera)");
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = shade(geo, *hit, c);
            if (depth_out) depth_out->at(y, x, 0) = hit->s;
            if (hits_out) (*hits_out)[static_cast<std::size_t>(y) * cfg.width + x] = *hit;
        }
    return img;
}

void add_sensor_noise(ImageGrid& img, double sigma, std::uint64_t seed) {
    if (sigma <= 0.0) return;
    Rng rng(seed);
    for (auto& v : img.data) v = std::clamp(v + sigma * rng.normal(), 0.0, 1.0);
}

}  // namespace

SceneConfig SceneConfig::from_json(const nlohmann::json& j) {
    SceneConfig c;
    try {
        c.width = j.value("width", c.width);
        c.height = j.value("height", c.height);
        c.fx = j.value("fx", c.fx);
        c.fy = j.value("fy", c.fy);
        c.cx = j.value("cx", c.cx);
        c.cy = j.value("cy", c.cy);
        c.baseline_m = j.value("baseline_m", c.baseline_m);
        c.depth_near_m = j.value("depth_near_m", c.depth_near_m);
        c.depth_far_m = j.value("depth_far_m", c.depth_far_m);
        if (j.contains("pose")) {
            const auto& p = j.at("pose");
            if (p.contains("rotation_deg"))
                for (int i = 0; i < 3; ++i) c.rotation_deg[i] = p.at("rotation_deg").at(i).get<double>();
            if (p.contains("translation_m"))
                for (int i = 0; i < 3; ++i) c.translation_m[i] = p.at("translation_m").at(i).get<double>();
        }
        if (j.contains("objects")) {
            for (const auto& jo : j.at("objects")) {
                SceneObjectConfig o;
                o.x_px = jo.at("x_px").get<double>();
                o.y_px = jo.at("y_px").get<double>();
                o.w_px = jo.at("w_px").get<double>();
                o.h_px = jo.at("h_px").get<double>();
                o.depth_m = jo.at("depth_m").get<double>();
                o.dx_px = jo.value("dx_px", 0.0);
                o.dy_px = jo.value("dy_px", 0.0);
                c.objects.push_back(o);
            }
        }
        c.texture_octaves = j.value("texture_octaves", c.texture_octaves);
        c.texture_base_cell_m = j.value("texture_base_cell_m", c.texture_base_cell_m);
        c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("scene config: ") + e.what());
    }
    c.validate();
    return c;
}

SceneConfig SceneConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open scene config '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("scene config '" + path + "': " + e.what());
    }
    return from_json(j);
}

nlohmann::json SceneConfig::to_json() const {
    nlohmann::json j;
    j["width"] = width;
    j["height"] = height;
    j["fx"] = fx;
    j["fy"] = fy;
    j["cx"] = cx;
    j["cy"] = cy;
    j["baseline_m"] = baseline_m;
    j["depth_near_m"] = depth_near_m;
    j["depth_far_m"] = depth_far_m;
    j["pose"]["rotation_deg"] = rotation_deg;
    j["pose"]["translation_m"] = translation_m;
    j["objects"] = nlohmann::json::array();
    for (const auto& o : objects)
        j["objects"].push_back({{"x_px", o.x_px},
                                {"y_px", o.y_px},
                                {"w_px", o.w_px},
                                {"h_px", o.h_px},
                                {"depth_m", o.depth_m},
                                {"dx_px", o.dx_px},
                                {"dy_px", o.dy_px}});
    j["texture_octaves"] = texture_octaves;
    j["texture_base_cell_m"] = texture_base_cell_m;
    j["noise_sigma"] = noise_sigma;
    return j;
}

void SceneConfig::validate() const {
    if (width < 16 || height < 16) throw ValidationError("scene config: extent must be at least 16x16");
    if (!(fx > 0.0) || !(fy > 0.0)) throw ValidationError("scene config: focal lengths must be positive");
    if (!(depth_near_m > 0.0) || !(depth_far_m > 0.0))
        throw ValidationError("scene config: depth plane behind camera");
    if (baseline_m < 0.0) throw ValidationError("scene config: baseline must be non-negative");
    if (texture_octaves < 1) throw ValidationError("scene config: texture_octaves must be >= 1");
    if (!(texture_base_cell_m > 0.0)) throw ValidationError("scene config: texture cell must be positive");
    if (noise_sigma < 0.0) throw ValidationError("scene config: noise_sigma must be non-negative");
    for (const auto& o : objects) {
        if (!(o.depth_m > 0.0)) throw ValidationError("scene config: object depth plane behind camera");
        if (o.w_px < 1.0 || o.h_px < 1.0) throw ValidationError("scene config: object must span at least a pixel");
        if (o.x_px < 0.0 || o.y_px < 0.0 || o.x_px + o.w_px > width || o.y_px + o.h_px > height)
            throw ValidationError("scene config: object outside frame");
    }
}

SceneSample make_scene(const SceneConfig& config, std::uint64_t seed) {
    config.validate();
    const double cx = config.center_x(), cy = config.center_y();

    SceneGeometry geo;
    geo.cell = config.texture_base_cell_m;
    geo.octaves = config.texture_octaves;
    geo.bg.salt = hash_combine(seed, 1000);

    // Background plane: ray depth depth_far_m at row 0, depth_near_m at the
    // last row; fronto-parallel when the two coincide.
    const double g0 = (0.0 - cy) / config.fy;
    const double g1 = (config.height - 1.0 - cy) / config.fy;
    if (std::abs(config.depth_far_m - config.depth_near_m) < 1e-12) {
        geo.bg.n_y = 0.0;
        geo.bg.h = config.depth_far_m;
    } else {
        const double denom = config.depth_far_m * g0 - config.depth_near_m * g1;
        if (std::abs(denom) < 1e-12)
            throw ValidationError("make_scene: cannot fit background plane to requested depth range");
        geo.bg.n_y = (config.depth_near_m - config.depth_far_m) / denom;
        geo.bg.h = config.depth_far_m * (geo.bg.n_y * g0 + 1.0);
    }
    for (int y = 0; y < config.height; ++y) {
        const double denom = geo.bg.n_y * (y - cy) / config.fy + 1.0;
        if (!(denom > 1e-9) || !(geo.bg.h / denom > 0.0))
            throw ValidationError("make_scene: depth plane behind camera");
    }

    for (std::size_t i = 0; i < config.objects.size(); ++i) {
        const auto& oc = config.objects[i];
        ObjectPlane ob;
        ob.z = oc.depth_m;
        // Same association as the ray expression depth * ((px - cx) / fx), so
        // the frame-t footprint is the pixel rect bit-exactly.
        ob.lo_x = oc.depth_m * ((oc.x_px - cx) / config.fx);
        ob.hi_x = oc.depth_m * ((oc.x_px + oc.w_px - cx) / config.fx);
        ob.lo_y = oc.depth_m * ((oc.y_px - cy) / config.fy);
        ob.hi_y = oc.depth_m * ((oc.y_px + oc.h_px - cy) / config.fy);
        ob.delta = {oc.dx_px * oc.depth_m / config.fx, oc.dy_px * oc.depth_m / config.fy, 0.0};
        ob.salt = hash_combine(seed, 2000 + 8 * i);
        // must sit in front of the background over its pixel rows
        for (double yr : {oc.y_px, oc.y_px + oc.h_px}) {
            const double denom = geo.bg.n_y * (yr - cy) / config.fy + 1.0;
            if (oc.depth_m >= geo.bg.h / denom)
                throw ValidationError("scene config: object hidden behind background");
        }
        geo.objects.push_back(ob);
    }

    const Mat3 R_cam =
        euler_deg_rotation(config.rotation_deg[0], config.rotation_deg[1], config.rotation_deg[2]);
    const Vec3 motion{config.translation_m[0], config.translation_m[1], config.translation_m[2]};
    CameraModel cam =
        camera_from_motion(config.fx, config.fy, cx, cy, R_cam, motion, config.baseline_m);

    SceneSample s;
    s.camera = cam;

    std::vector<Hit> hits_t, hits_t1;
    s.I_t_left = render(geo, config, mat3_identity(), {0, 0, 0}, 0, &s.D_t, &hits_t);
    s.I_t1_left = render(geo, config, cam.R, cam.t, 1, &s.D_t1, &hits_t1);
    s.I_t_right = render(geo, config, mat3_identity(), {-config.baseline_m, 0, 0}, 0, nullptr, nullptr);
    const Vec3 t_right1{cam.t[0] - config.baseline_m, cam.t[1], cam.t[2]};
    s.I_t1_right = render(geo, config, cam.R, t_right1, 1, nullptr, nullptr);

    // Ground truth: project each frame-t surface point into frame t+1 (adding
    // the object's own displacement), and symmetrically for the backward flow.
    s.gt_flow = FlowField(config.height, config.width);
    s.gt_flow_bwd = FlowField(config.height, config.width);
    s.gt_nonrigid = Mask(config.height, config.width);
    for (int y = 0; y < config.height; ++y)
        for (int x = 0; x < config.width; ++x) {
            const Hit& h = hits_t[static_cast<std::size_t>(y) * config.width + x];
            Vec3 X = h.X;
            if (h.object >= 0) {
                const Vec3& d = geo.objects[h.object].delta;
                X = {X[0] + d[0], X[1] + d[1], X[2] + d[2]};
                s.gt_nonrigid.at(y, x) = 1.0;
            }
            const Vec3 rx = mat3_apply(cam.R, X);
            const double zx = rx[0] + cam.t[0], zy = rx[1] + cam.t[1], zz = rx[2] + cam.t[2];
            if (zz <= 1e-6) throw ValidationError("make_scene: surface point behind camera at t+1");
            s.gt_flow.u(y, x) = config.fx * zx / zz + cx - x;
            s.gt_flow.v(y, x) = config.fy * zy / zz + cy - y;

            const Hit& hb = hits_t1[static_cast<std::size_t>(y) * config.width + x];
            Vec3 Xb = hb.X;  // t+1 surface position in frame-t world coordinates
            if (hb.object >= 0) {
                const Vec3& d = geo.objects[hb.object].delta;
                Xb = {Xb[0] - d[0], Xb[1] - d[1], Xb[2] - d[2]};
            }
            if (Xb[2] <= 1e-6) throw ValidationError("make_scene: surface point behind camera at t");
            s.gt_flow_bwd.u(y, x) = config.fx * Xb[0] / Xb[2] + cx - x;
            s.gt_flow_bwd.v(y, x) = config.fy * Xb[1] / Xb[2] + cy - y;
        }

    add_sensor_noise(s.I_t_left, config.noise_sigma, hash_combine(seed, 7001));
    add_sensor_noise(s.I_t1_left, config.noise_sigma, hash_combine(seed, 7002));
    add_sensor_noise(s.I_t_right, config.noise_sigma, hash_combine(seed, 7003));
    add_sensor_noise(s.I_t1_right, config.noise_sigma, hash_combine(seed, 7004));
    return s;
}

}  // namespace fogflow
