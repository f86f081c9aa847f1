#pragma once

#include <string>
#include <vector>

#include "fogflow/ad.hpp"
#include "fogflow/grid.hpp"
#include "fogflow/param_store.hpp"

namespace fogflow {

// Per-pixel correlation scores over a (2r+1)^2 displacement window.
// Bin index b = (dy+r)*(2r+1) + (dx+r); the zero displacement sits at the
// window center. Raw volumes carry unbounded scores; after fusion the values
// live in [0,1] and (norm_min, norm_max) record the affine map that was used.
struct CostVolume {
    int height = 0;
    int width = 0;
    int radius = 0;
    std::vector<double> data;  // ((y*W + x)*bins + b)
    bool normalized = false;
    double norm_min = 0.0;
    double norm_max = 0.0;

    CostVolume() = default;
    CostVolume(int h, int w, int r);

    int side() const { return 2 * radius + 1; }
    int bins() const { return side() * side(); }
    double& at(int y, int x, int b) { return data[(static_cast<std::size_t>(y) * width + x) * bins() + b]; }
    double at(int y, int x, int b) const { return data[(static_cast<std::size_t>(y) * width + x) * bins() + b]; }
    bool same_layout(const CostVolume& o) const { return height == o.height && width == o.width && radius == o.radius; }
    bool all_finite() const;
};

namespace ad {

// Windowed correlation: score(p,d) = <a(p), b(p+d)> / C for |d|_inf <= r,
// 0 when p+d leaves the frame. Output shape (h, w, (2r+1)^2).
Var corr_window(Var a, Var b, int r);

// Temporal volume: b is first backward-warped by flow_init, then correlated
// against a over the displacement window.
Var temporal_cv(Var f_t, Var f_t1, Var flow_init, int r);

// Spatial-context volume. A 1x1 learnable kernel (ci*co doubles, row ci,
// column co) maps features to g = K f; candidates q != p inside the odd
// `window` are ranked by cosine(g(p), g(q)) and the top k win, ties broken
// toward the smaller bin. Each winning slot holds <g(q), f(p)> / (k*C) so the
// window sum equals the mean attended correlation; losing slots stay zero.
// Selection is straight-through: gradients flow only through winning slots.
Var sca_cv(Var f_t, int window, int k, Var kernel);

// Residual fusion cv_temp + alpha*cv_spa followed by min-max normalization
// to [0,1] (constant volumes map to 0.5). The constants used are reported
// through out_min/out_max when non-null.
Var fuse_cv(Var cv_temp, Var cv_spa, double alpha, double* out_min = nullptr, double* out_max = nullptr);

}  // namespace ad

// Plain-carrier wrappers; each runs the tape op on a scratch tape so both
// paths share one implementation. sca_cv reads the kernel from the store
// entry named `kernel_name` (ci*co doubles).
CostVolume temporal_cv(const ImageGrid& f_t, const ImageGrid& f_t1, const FlowField& flow_init, int r);
CostVolume sca_cv(const ImageGrid& f_t, int window, int k, const ParamStore& kernel,
                  const std::string& kernel_name = "sca.kernel");
CostVolume fuse_cv(const CostVolume& cv_temp, const CostVolume& cv_spa, double alpha);

// Identity 1x1 kernel for a c-channel map, flattened row-major.
std::vector<double> identity_kernel(int c);

// Cost-volume dump: one grayscale PFM whose rows stack the bins bin-major
// (rows [b*h, (b+1)*h) carry bin b), float32 like any PFM. The reader needs
// the radius to split the stack and rejects heights that do not divide.
void write_cost_volume_pfm(const std::string& path, const CostVolume& cv);
CostVolume read_cost_volume_pfm(const std::string& path, int radius);

}  // namespace fogflow
