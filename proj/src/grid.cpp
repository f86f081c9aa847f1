#include "fogflow/grid.hpp"

#include <algorithm>
#include <cmath>

#include "fogflow/errors.hpp"

namespace fogflow {

ImageGrid::ImageGrid(int h, int w, int c, double fill)
    : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {
    if (h <= 0 || w <= 0 || c <= 0) throw ValidationError("ImageGrid: extents must be positive");
}

bool ImageGrid::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

FlowField::FlowField(int h, int w, double u0, double v0) : height(h), width(w), uv(static_cast<std::size_t>(h) * w * 2) {
    if (h <= 0 || w <= 0) throw ValidationError("FlowField: extents must be positive");
    for (std::size_t i = 0; i < uv.size(); i += 2) {
        uv[i] = u0;
        uv[i + 1] = v0;
    }
}

bool FlowField::all_finite() const {
    return std::all_of(uv.begin(), uv.end(), [](double v) { return std::isfinite(v); });
}

Mask::Mask(int h, int w, double fill) : height(h), width(w), m(static_cast<std::size_t>(h) * w, fill) {
    if (h <= 0 || w <= 0) throw ValidationError("Mask: extents must be positive");
}

double Mask::sum() const {
    double s = 0.0;
    for (double v : m) s += v;
    return s;
}

void bilinear_sample(const ImageGrid& src, double x, double y, double* out, bool* out_of_bounds) {
    const int W = src.width;
    const int H = src.height;
    const bool oob = x < 0.0 || y < 0.0 || x > static_cast<double>(W - 1) || y > static_cast<double>(H - 1);
    if (out_of_bounds) *out_of_bounds = oob;

    const double cx = std::clamp(x, 0.0, static_cast<double>(W - 1));
    const double cy = std::clamp(y, 0.0, static_cast<double>(H - 1));
    const int x0 = static_cast<int>(std::floor(cx));
    const int y0 = static_cast<int>(std::floor(cy));
    const int x1 = std::min(x0 + 1, W - 1);
    const int y1 = std::min(y0 + 1, H - 1);
    const double a = cx - x0;
    const double b = cy - y0;

    for (int ch = 0; ch < src.channels; ++ch) {
        const double v00 = src.at(y0, x0, ch);
        const double v10 = src.at(y0, x1, ch);
        const double v01 = src.at(y1, x0, ch);
        const double v11 = src.at(y1, x1, ch);
        out[ch] = (1.0 - a) * (1.0 - b) * v00 + a * (1.0 - b) * v10 + (1.0 - a) * b * v01 + a * b * v11;
    }
}

ImageGrid warp(const ImageGrid& src, const FlowField& flow, Mask* oob) {
    if (src.height != flow.height || src.width != flow.width)
        throw ValidationError("warp: image/flow extent mismatch");
    ImageGrid out(src.height, src.width, src.channels);
    if (oob) *oob = Mask(src.height, src.width, 0.0);
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            bool flag = false;
            bilinear_sample(src, x + flow.u(y, x), y + flow.v(y, x), &out.at(y, x, 0), &flag);
            if (oob && flag) oob->at(y, x) = 1.0;
        }
    }
    return out;
}

ImageGrid laplacian(const ImageGrid& src) {
    if (src.height < 3 || src.width < 3) throw ValidationError("laplacian: grid must be at least 3x3");
    ImageGrid out(src.height, src.width, src.channels);
    const int H = src.height, W = src.width;
    for (int y = 0; y < H; ++y) {
        const int ym = std::max(y - 1, 0);
        const int yp = std::min(y + 1, H - 1);
        for (int x = 0; x < W; ++x) {
            const int xm = std::max(x - 1, 0);
            const int xp = std::min(x + 1, W - 1);
            for (int ch = 0; ch < src.channels; ++ch) {
                out.at(y, x, ch) = src.at(y, xm, ch) + src.at(y, xp, ch) + src.at(ym, x, ch) + src.at(yp, x, ch) -
                                   4.0 * src.at(y, x, ch);
            }
        }
    }
    return out;
}

}  // namespace fogflow
