#include "fogflow/cost_volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>

#include "fogflow/errors.hpp"
#include "fogflow/io.hpp"

namespace fogflow {

CostVolume::CostVolume(int h, int w, int r) : height(h), width(w), radius(r) {
    if (h <= 0 || w <= 0 || r < 0) throw ValidationError("CostVolume: extent must be positive, radius >= 0");
    data.assign(static_cast<std::size_t>(h) * w * bins(), 0.0);
}

bool CostVolume::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

namespace ad {

Var corr_window(Var a, Var b, int r) {
    if (!a.valid() || !b.valid()) throw ValidationError("corr_window: invalid operand");
    Tape& t = *a.tape();
    if (b.tape() != &t) throw ValidationError("corr_window: operands on different tapes");
    if (a.shape() != b.shape()) throw ValidationError("corr_window: extent mismatch");
    if (r < 0) throw ValidationError("corr_window: radius must be >= 0");
    const Shape sh = a.shape();
    const int H = sh.h, W = sh.w, C = sh.c;
    const int side = 2 * r + 1, bins = side * side;
    const int ia = a.id(), ib = b.id();
    const bool ng = t.needs_grad(ia) || t.needs_grad(ib);
    const int id = t.make_node(Shape{H, W, bins}, ng);

    auto& out = t.val(id);
    const auto& av = t.val(ia);
    const auto& bv = t.val(ib);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const std::size_t pi = static_cast<std::size_t>(y) * W + x;
            for (int dy = -r; dy <= r; ++dy) {
                const int qy = y + dy;
                if (qy < 0 || qy >= H) continue;
                for (int dx = -r; dx <= r; ++dx) {
                    const int qx = x + dx;
                    if (qx < 0 || qx >= W) continue;
                    const std::size_t qi = static_cast<std::size_t>(qy) * W + qx;
                    double dot = 0.0;
                    for (int c = 0; c < C; ++c) dot += av[pi * C + c] * bv[qi * C + c];
                    out[pi * bins + (dy + r) * side + (dx + r)] = dot / C;
                }
            }
        }
    }
    if (ng)
        t.set_backward(id, [id, ia, ib, H, W, C, r, side, bins](Tape& tp) {
            const auto& g = tp.grad(id);
            const auto& av2 = tp.val(ia);
            const auto& bv2 = tp.val(ib);
            const bool ga = tp.needs_grad(ia), gb = tp.needs_grad(ib);
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    const std::size_t pi = static_cast<std::size_t>(y) * W + x;
                    for (int dy = -r; dy <= r; ++dy) {
                        const int qy = y + dy;
                        if (qy < 0 || qy >= H) continue;
                        for (int dx = -r; dx <= r; ++dx) {
                            const int qx = x + dx;
                            if (qx < 0 || qx >= W) continue;
                            const std::size_t qi = static_cast<std::size_t>(qy) * W + qx;
                            const double go = g[pi * bins + (dy + r) * side + (dx + r)] / C;
                            if (go == 0.0) continue;
                            for (int c = 0; c < C; ++c) {
                                if (ga) tp.grad(ia)[pi * C + c] += go * bv2[qi * C + c];
                                if (gb) tp.grad(ib)[qi * C + c] += go * av2[pi * C + c];
                            }
                        }
                    }
                }
            }
        });
    return Var(&t, id);
}

Var temporal_cv(Var f_t, Var f_t1, Var flow_init, int r) {
    return corr_window(f_t, warp_bilinear(f_t1, flow_init), r);
}

Var sca_cv(Var f_t, int window, int k, Var kernel) {
    if (!f_t.valid() || !kernel.valid()) throw ValidationError("sca_cv: invalid operand");
    Tape& t = *f_t.tape();
    if (kernel.tape() != &t) throw ValidationError("sca_cv: operands on different tapes");
    if (window < 3 || window % 2 == 0) throw ValidationError("sca_cv: window must be odd and >= 3");
    if (k < 1) throw ValidationError("sca_cv: k must be >= 1");
    const Shape sh = f_t.shape();
    const int H = sh.h, W = sh.w, C = sh.c;
    if (kernel.shape().size() != C * C) throw ValidationError("sca_cv: kernel must hold c*c values");
    const int rw = (window - 1) / 2;
    const int corner = (std::min(W - 1, rw) + 1) * (std::min(H - 1, rw) + 1) - 1;
    if (k > corner) throw ValidationError("sca_cv: k exceeds candidate count");

    Var bias = t.constant(Shape{1, 1, C}, std::vector<double>(C, 0.0));
    Var g = conv2d(f_t, kernel, bias, 1, 1, C, C, 1);

    const int side = window, bins = side * side;
    const int ifea = f_t.id(), ig = g.id();
    const bool ng = t.needs_grad(ifea) || t.needs_grad(ig);
    const int id = t.make_node(Shape{H, W, bins}, ng);

    const auto& fv = t.val(ifea);
    const auto& gv = t.val(ig);
    std::vector<double> norm(static_cast<std::size_t>(H) * W);
    for (std::size_t p = 0; p < norm.size(); ++p) {
        double s = 0.0;
        for (int c = 0; c < C; ++c) s += gv[p * C + c] * gv[p * C + c];
        norm[p] = std::sqrt(s);
    }

    const double denom = static_cast<double>(k) * C;
    std::vector<int> sel(static_cast<std::size_t>(H) * W * k, -1);
    auto& out = t.val(id);
    std::vector<double> best_s(k);
    std::vector<int> best_b(k);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const std::size_t pi = static_cast<std::size_t>(y) * W + x;
            int filled = 0;
            for (int dy = -rw; dy <= rw; ++dy) {
                const int qy = y + dy;
                if (qy < 0 || qy >= H) continue;
                for (int dx = -rw; dx <= rw; ++dx) {
                    if (dy == 0 && dx == 0) continue;
                    const int qx = x + dx;
                    if (qx < 0 || qx >= W) continue;
                    const std::size_t qi = static_cast<std::size_t>(qy) * W + qx;
                    double dot = 0.0;
                    for (int c = 0; c < C; ++c) dot += gv[pi * C + c] * gv[qi * C + c];
                    const double score = dot / std::max(norm[pi] * norm[qi], 1e-12);
                    if (filled == k && score <= best_s[filled - 1]) continue;
                    int pos = std::min(filled, k - 1);
                    while (pos > 0 && best_s[pos - 1] < score) --pos;
                    for (int j = std::min(filled, k - 1); j > pos; --j) {
                        best_s[j] = best_s[j - 1];
                        best_b[j] = best_b[j - 1];
                    }
                    best_s[pos] = score;
                    best_b[pos] = (dy + rw) * side + (dx + rw);
                    if (filled < k) ++filled;
                }
            }
            for (int i = 0; i < k; ++i) {
                const int b = best_b[i];
                sel[pi * k + i] = b;
                const int qy = y + b / side - rw, qx = x + b % side - rw;
                const std::size_t qi = static_cast<std::size_t>(qy) * W + qx;
                double dot = 0.0;
                for (int c = 0; c < C; ++c) dot += gv[qi * C + c] * fv[pi * C + c];
                out[pi * bins + b] = dot / denom;
            }
        }
    }
    if (ng)
        t.set_backward(id, [id, ifea, ig, H, W, C, rw, side, bins, k, denom, sel = std::move(sel)](Tape& tp) {
            const auto& gout = tp.grad(id);
            const auto& fv2 = tp.val(ifea);
            const auto& gv2 = tp.val(ig);
            const bool gf = tp.needs_grad(ifea), gg = tp.needs_grad(ig);
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    const std::size_t pi = static_cast<std::size_t>(y) * W + x;
                    for (int i = 0; i < k; ++i) {
                        const int b = sel[pi * k + i];
                        const double go = gout[pi * bins + b] / denom;
                        if (go == 0.0) continue;
                        const int qy = y + b / side - rw, qx = x + b % side - rw;
                        const std::size_t qi = static_cast<std::size_t>(qy) * W + qx;
                        for (int c = 0; c < C; ++c) {
                            if (gf) tp.grad(ifea)[pi * C + c] += go * gv2[qi * C + c];
                            if (gg) tp.grad(ig)[qi * C + c] += go * fv2[pi * C + c];
                        }
                    }
                }
            }
        });
    return Var(&t, id);
}

Var fuse_cv(Var cv_temp, Var cv_spa, double alpha, double* out_min, double* out_max) {
    if (!cv_temp.valid() || !cv_spa.valid()) throw ValidationError("fuse_cv: invalid operand");
    if (cv_spa.tape() != cv_temp.tape()) throw ValidationError("fuse_cv: operands on different tapes");
    if (cv_temp.shape() != cv_spa.shape()) throw ValidationError("fuse_cv: layout mismatch");
    if (!std::isfinite(alpha)) throw ValidationError("fuse_cv: alpha must be finite");
    return minmax_normalize(add(cv_temp, scale(cv_spa, alpha)), out_min, out_max);
}

}  // namespace ad

namespace {

CostVolume volume_from_var(ad::Var v, int r) {
    const ad::Shape sh = v.shape();
    CostVolume cv(sh.h, sh.w, r);
    if (sh.c != cv.bins()) throw ValidationError("cost volume: bin count mismatch");
    cv.data = v.value();
    return cv;
}

}  // namespace

CostVolume temporal_cv(const ImageGrid& f_t, const ImageGrid& f_t1, const FlowField& flow_init, int r) {
    ad::Tape t;
    ad::Var cv = ad::temporal_cv(t.constant(f_t), t.constant(f_t1), t.constant(flow_init), r);
    return volume_from_var(cv, r);
}

CostVolume sca_cv(const ImageGrid& f_t, int window, int k, const ParamStore& kernel,
                  const std::string& kernel_name) {
    if (!kernel.has(kernel_name)) throw ValidationError("sca_cv: missing kernel entry " + kernel_name);
    ad::Tape t;
    const std::vector<double>& kv = kernel.value(kernel_name);
    ad::Var kvar = t.constant(ad::Shape{1, 1, static_cast<int>(kv.size())}, kv);
    ad::Var cv = ad::sca_cv(t.constant(f_t), window, k, kvar);
    return volume_from_var(cv, (window - 1) / 2);
}

CostVolume fuse_cv(const CostVolume& cv_temp, const CostVolume& cv_spa, double alpha) {
    if (!cv_temp.same_layout(cv_spa)) throw ValidationError("fuse_cv: layout mismatch");
    ad::Tape t;
    const ad::Shape sh{cv_temp.height, cv_temp.width, cv_temp.bins()};
    double mn = 0.0, mx = 0.0;
    ad::Var out = ad::fuse_cv(t.constant(sh, cv_temp.data), t.constant(sh, cv_spa.data), alpha, &mn, &mx);
    CostVolume cv = volume_from_var(out, cv_temp.radius);
    cv.normalized = true;
    cv.norm_min = mn;
    cv.norm_max = mx;
    return cv;
}

std::vector<double> identity_kernel(int c) {
    if (c <= 0) throw ValidationError("identity_kernel: channels must be positive");
    std::vector<double> k(static_cast<std::size_t>(c) * c, 0.0);
    for (int i = 0; i < c; ++i) k[static_cast<std::size_t>(i) * c + i] = 1.0;
    return k;
}

void write_cost_volume_pfm(const std::string& path, const CostVolume& cv) {
    if (cv.height <= 0 || cv.width <= 0) throw ValidationError("write_cost_volume_pfm: empty volume");
    ImageGrid img(cv.height * cv.bins(), cv.width, 1);
    for (int b = 0; b < cv.bins(); ++b)
        for (int y = 0; y < cv.height; ++y)
            for (int x = 0; x < cv.width; ++x) img.at(b * cv.height + y, x, 0) = cv.at(y, x, b);
    write_pfm(path, img);
}

CostVolume read_cost_volume_pfm(const std::string& path, int radius) {
    if (radius < 0) throw ValidationError("read_cost_volume_pfm: radius must be >= 0");
    const ImageGrid img = read_pfm(path);
    if (img.channels != 1) throw ValidationError("read_cost_volume_pfm: stack must be grayscale");
    const int side = 2 * radius + 1, bins = side * side;
    if (img.height % bins != 0) throw ValidationError("read_cost_volume_pfm: height not divisible by bin count");
    CostVolume cv(img.height / bins, img.width, radius);
    for (int b = 0; b < bins; ++b)
        for (int y = 0; y < cv.height; ++y)
            for (int x = 0; x < cv.width; ++x) cv.at(y, x, b) = img.at(b * cv.height + y, x, 0);
    return cv;
}

}  // namespace fogflow
