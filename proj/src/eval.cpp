#include "fogflow/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "fogflow/errors.hpp"
#include "fogflow/io.hpp"

namespace fogflow {

namespace {

struct Accumulator {
    long long count = 0;
    double err_sum = 0.0;
    long long outliers = 0;

    void add(double err, double gt_mag) {
        ++count;
        err_sum += err;
        if (err > 3.0 && err > 0.05 * gt_mag) ++outliers;
    }
    RegionMetrics metrics() const {
        RegionMetrics m;
        m.count = count;
        if (count > 0) {
            m.epe = err_sum / static_cast<double>(count);
            m.f1_all = static_cast<double>(outliers) / static_cast<double>(count);
        }
        return m;
    }
};

void check_pair(const FlowField& pred, const FlowField& gt, const char* what) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw ValidationError(std::string(what) + ": flow extents differ");
    if (pred.height <= 0 || pred.width <= 0)
        throw ValidationError(std::string(what) + ": empty flow");
}

double endpoint_error(const FlowField& pred, const FlowField& gt, int y, int x) {
    const double du = pred.u(y, x) - gt.u(y, x);
    const double dv = pred.v(y, x) - gt.v(y, x);
    return std::sqrt(du * du + dv * dv);
}

double gt_magnitude(const FlowField& gt, int y, int x) {
    return std::sqrt(gt.u(y, x) * gt.u(y, x) + gt.v(y, x) * gt.v(y, x));
}

Accumulator accumulate_masked(const FlowField& pred, const FlowField& gt, const Mask& valid,
                              const char* what) {
    check_pair(pred, gt, what);
    if (valid.height != pred.height || valid.width != pred.width)
        throw ValidationError(std::string(what) + ": mask extent differs");
    Accumulator acc;
    for (int y = 0; y < pred.height; ++y)
        for (int x = 0; x < pred.width; ++x)
            if (valid.at(y, x) != 0.0)
                acc.add(endpoint_error(pred, gt, y, x), gt_magnitude(gt, y, x));
    if (acc.count == 0) throw ValidationError(std::string(what) + ": no valid pixels");
    return acc;
}

nlohmann::json region_json(const RegionMetrics& m) {
    return nlohmann::json{{"count", m.count}, {"epe", m.epe}, {"f1_all", m.f1_all}};
}

RegionMetrics region_from_json(const nlohmann::json& j) {
    RegionMetrics m;
    m.count = j.at("count").get<long long>();
    m.epe = j.at("epe").get<double>();
    m.f1_all = j.at("f1_all").get<double>();
    return m;
}

}  // namespace

double epe(const FlowField& pred, const FlowField& gt, const Mask& valid) {
    return accumulate_masked(pred, gt, valid, "epe").metrics().epe;
}

double f1_all(const FlowField& pred, const FlowField& gt, const Mask& valid) {
    return accumulate_masked(pred, gt, valid, "f1_all").metrics().f1_all;
}

std::vector<DepthBandRow> depth_band_report(const FlowField& pred, const FlowField& gt,
                                            const DepthMap& depth,
                                            const std::vector<double>& band_edges) {
    check_pair(pred, gt, "depth_band_report");
    if (depth.height != pred.height || depth.width != pred.width || depth.channels != 1)
        throw ValidationError("depth_band_report: depth extent differs");
    if (band_edges.size() < 2) throw ValidationError("depth_band_report: need at least two edges");
    for (std::size_t i = 1; i < band_edges.size(); ++i)
        if (!(band_edges[i - 1] < band_edges[i]))
            throw ValidationError("depth_band_report: edges must ascend");

    std::vector<Accumulator> acc(band_edges.size() - 1);
    for (int y = 0; y < pred.height; ++y)
        for (int x = 0; x < pred.width; ++x) {
            const double d = depth.at(y, x, 0);
            const auto it = std::upper_bound(band_edges.begin(), band_edges.end(), d);
            const int band = static_cast<int>(it - band_edges.begin()) - 1;
            if (band < 0 || band >= static_cast<int>(acc.size())) continue;
            acc[band].add(endpoint_error(pred, gt, y, x), gt_magnitude(gt, y, x));
        }
    std::vector<DepthBandRow> rows;
    for (std::size_t b = 0; b < acc.size(); ++b) {
        if (acc[b].count == 0) continue;  // empty band: absent, not zero
        rows.push_back({band_edges[b], band_edges[b + 1], acc[b].metrics()});
    }
    return rows;
}

EvalReport evaluate(const FlowField& pred, const FlowField& gt, const Mask& valid,
                    const Mask& nonrigid, const DepthMap& depth,
                    const std::vector<double>& band_edges) {
    if (nonrigid.height != pred.height || nonrigid.width != pred.width)
        throw ValidationError("evaluate: nonrigid mask extent differs");
    EvalReport rep;
    rep.all = accumulate_masked(pred, gt, valid, "evaluate").metrics();
    Accumulator rigid_acc, nonrigid_acc;
    for (int y = 0; y < pred.height; ++y)
        for (int x = 0; x < pred.width; ++x) {
            if (valid.at(y, x) == 0.0) continue;
            auto& acc = nonrigid.at(y, x) != 0.0 ? nonrigid_acc : rigid_acc;
            acc.add(endpoint_error(pred, gt, y, x), gt_magnitude(gt, y, x));
        }
    rep.rigid = rigid_acc.metrics();
    rep.nonrigid = nonrigid_acc.metrics();
    rep.bands = depth_band_report(pred, gt, depth, band_edges);
    return rep;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json bands_j = nlohmann::json::array();
    for (const auto& row : bands) {
        nlohmann::json r = region_json(row.metrics);
        r["lo"] = row.lo;
        r["hi"] = row.hi;
        bands_j.push_back(std::move(r));
    }
    return nlohmann::json{{"all", region_json(all)},
                          {"rigid", region_json(rigid)},
                          {"nonrigid", region_json(nonrigid)},
                          {"bands", bands_j}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
    EvalReport rep;
    try {
        rep.all = region_from_json(j.at("all"));
        rep.rigid = region_from_json(j.at("rigid"));
        rep.nonrigid = region_from_json(j.at("nonrigid"));
        for (const auto& r : j.at("bands")) {
            DepthBandRow row;
            row.lo = r.at("lo").get<double>();
            row.hi = r.at("hi").get<double>();
            row.metrics = region_from_json(r);
            rep.bands.push_back(row);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("eval report: ") + e.what());
    }
    return rep;
}

EvalReport evaluate_dirs(const std::string& pred_dir, const std::string& gt_dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(gt_dir)) throw ValidationError("evaluate_dirs: not a directory: " + gt_dir);
    if (!fs::is_directory(pred_dir))
        throw ValidationError("evaluate_dirs: not a directory: " + pred_dir);
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(gt_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".flo")
            names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());
    Accumulator acc;
    for (const auto& name : names) {
        const fs::path pred_path = fs::path(pred_dir) / name;
        if (!fs::exists(pred_path))
            throw ValidationError("evaluate_dirs: missing prediction " + pred_path.string());
        const FlowField gt = read_flo((fs::path(gt_dir) / name).string());
        const FlowField pred = read_flo(pred_path.string());
        check_pair(pred, gt, "evaluate_dirs");
        for (int y = 0; y < pred.height; ++y)
            for (int x = 0; x < pred.width; ++x)
                acc.add(endpoint_error(pred, gt, y, x), gt_magnitude(gt, y, x));
    }
    if (acc.count == 0) throw ValidationError("evaluate_dirs: no paired .flo files");
    EvalReport rep;
    rep.all = acc.metrics();
    return rep;
}

namespace {

// Middlebury-style wheel: smooth transitions over six hue arcs.
std::vector<std::array<double, 3>> color_wheel() {
    const int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
    std::vector<std::array<double, 3>> wheel;
    wheel.reserve(RY + YG + GC + CB + BM + MR);
    for (int i = 0; i < RY; ++i) wheel.push_back({1.0, static_cast<double>(i) / RY, 0.0});
    for (int i = 0; i < YG; ++i) wheel.push_back({1.0 - static_cast<double>(i) / YG, 1.0, 0.0});
    for (int i = 0; i < GC; ++i) wheel.push_back({0.0, 1.0, static_cast<double>(i) / GC});
    for (int i = 0; i < CB; ++i) wheel.push_back({0.0, 1.0 - static_cast<double>(i) / CB, 1.0});
    for (int i = 0; i < BM; ++i) wheel.push_back({static_cast<double>(i) / BM, 0.0, 1.0});
    for (int i = 0; i < MR; ++i) wheel.push_back({1.0, 0.0, 1.0 - static_cast<double>(i) / MR});
    return wheel;
}

}  // namespace

ImageGrid flow_to_color(const FlowField& f) {
    if (f.height <= 0 || f.width <= 0) throw ValidationError("flow_to_color: empty flow");
    static const std::vector<std::array<double, 3>> wheel = color_wheel();
    const int ncols = static_cast<int>(wheel.size());
    double max_rad = 0.0;
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x)
            max_rad = std::max(max_rad, std::hypot(f.u(y, x), f.v(y, x)));
    const double norm = max_rad > 0.0 ? max_rad : 1.0;
    ImageGrid img(f.height, f.width, 3);
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x) {
            const double u = f.u(y, x), v = f.v(y, x);
            const double rad = std::hypot(u, v) / norm;
            const double angle = std::atan2(-v, -u) / 3.14159265358979323846;
            const double fk = (angle + 1.0) / 2.0 * (ncols - 1);
            const int k0 = static_cast<int>(std::floor(fk));
            const int k1 = (k0 + 1) % ncols;
            const double frac = fk - k0;
            for (int c = 0; c < 3; ++c) {
                const double col = (1.0 - frac) * wheel[k0][c] + frac * wheel[k1][c];
                img.at(y, x, c) = 1.0 - rad * (1.0 - col);  // white at zero motion
            }
        }
    return img;
}

void write_flow_ppm(const std::string& path, const FlowField& f) {
    for (double v : f.uv)
        if (!std::isfinite(v)) throw ValidationError("write_flow_ppm: non-finite flow");
    const ImageGrid img = flow_to_color(f);
    double max_rad = 0.0;
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x)
            max_rad = std::max(max_rad, std::hypot(f.u(y, x), f.v(y, x)));
    char comment[64];
    std::snprintf(comment, sizeof comment, "# max-magnitude=%.17g\n", max_rad);
    std::string buf = "P6\n";
    buf += comment;
    buf += std::to_string(f.width) + " " + std::to_string(f.height) + "\n255\n";
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x)
            for (int c = 0; c < 3; ++c) {
                const double q = std::round(std::clamp(img.at(y, x, c), 0.0, 1.0) * 255.0);
                buf.push_back(static_cast<char>(static_cast<unsigned char>(q)));
            }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("write_flow_ppm: cannot open " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw ValidationError("write_flow_ppm: write failed for " + path);
}

}  // namespace fogflow
