#pragma once

#include <cstddef>
#include <vector>

namespace fogflow {

// H x W x C raster of doubles, row-major, channel-interleaved.
// Photometric images live in [0,1]; feature maps are unbounded finite reals.
struct ImageGrid {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    ImageGrid() = default;
    ImageGrid(int h, int w, int c, double fill = 0.0);

    double& at(int y, int x, int ch) { return data[(static_cast<std::size_t>(y) * width + x) * channels + ch]; }
    double at(int y, int x, int ch) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + ch]; }

    std::size_t size() const { return data.size(); }
    bool same_extent(const ImageGrid& o) const { return height == o.height && width == o.width; }
    bool all_finite() const;
};

// Depth maps are 1-channel grids of positive metric depth.
using DepthMap = ImageGrid;

// H x W field of pixel displacements (u, v), interleaved.
struct FlowField {
    int height = 0;
    int width = 0;
    std::vector<double> uv;  // (y*W + x)*2 + {0:u, 1:v}

    FlowField() = default;
    FlowField(int h, int w, double u0 = 0.0, double v0 = 0.0);

    double& u(int y, int x) { return uv[(static_cast<std::size_t>(y) * width + x) * 2]; }
    double u(int y, int x) const { return uv[(static_cast<std::size_t>(y) * width + x) * 2]; }
    double& v(int y, int x) { return uv[(static_cast<std::size_t>(y) * width + x) * 2 + 1]; }
    double v(int y, int x) const { return uv[(static_cast<std::size_t>(y) * width + x) * 2 + 1]; }

    bool all_finite() const;
};

// H x W mask; {0,1} when hard, [0,1] when soft.
struct Mask {
    int height = 0;
    int width = 0;
    std::vector<double> m;

    Mask() = default;
    Mask(int h, int w, double fill = 0.0);

    double& at(int y, int x) { return m[static_cast<std::size_t>(y) * width + x]; }
    double at(int y, int x) const { return m[static_cast<std::size_t>(y) * width + x]; }

    double sum() const;
};

// Bilinear interpolation of the four neighbors of (x, y), per channel.
// Coordinates outside [0,W-1]x[0,H-1] clamp to the border; `out_of_bounds`
// (when non-null) is set so callers can use the flag as occlusion evidence.
// `out` must hold src.channels values.
void bilinear_sample(const ImageGrid& src, double x, double y, double* out, bool* out_of_bounds = nullptr);

// Backward warp: out(p) = src sampled at p + flow(p). The flow maps pixels of
// the target frame into the source frame. `oob` (optional) marks pixels whose
// sample location fell outside the source.
ImageGrid warp(const ImageGrid& src, const FlowField& flow, Mask* oob = nullptr);

// Per-channel discrete 5-point Laplacian with replicate-padded borders.
ImageGrid laplacian(const ImageGrid& src);

}  // namespace fogflow
