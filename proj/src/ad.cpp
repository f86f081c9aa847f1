#include "fogflow/ad.hpp"

#include <algorithm>
#include <cmath>

#include "fogflow/errors.hpp"

namespace fogflow::ad {

const Shape& Var::shape() const { return tape_->shape(id_); }
const std::vector<double>& Var::value() const { return tape_->val(id_); }
const std::vector<double>& Var::grad() const { return tape_->grad(id_); }

double Var::scalar() const {
    if (shape().size() != 1) throw ValidationError("Var::scalar: node is not a scalar");
    return value()[0];
}

int Tape::make_node(Shape shape, bool needs_grad) {
    Node n;
    n.shape = shape;
    n.val.assign(static_cast<std::size_t>(shape.size()), 0.0);
    if (needs_grad) n.grad.assign(static_cast<std::size_t>(shape.size()), 0.0);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::leaf(Shape shape, std::vector<double> value) {
    if (static_cast<int>(value.size()) != shape.size()) throw ValidationError("Tape::leaf: data/shape mismatch");
    int id = make_node(shape, true);
    nodes_[id].val = std::move(value);
    return Var(this, id);
}

Var Tape::constant(Shape shape, std::vector<double> value) {
    if (static_cast<int>(value.size()) != shape.size()) throw ValidationError("Tape::constant: data/shape mismatch");
    int id = make_node(shape, false);
    nodes_[id].val = std::move(value);
    return Var(this, id);
}

Var Tape::constant(const ImageGrid& g) { return constant(Shape{g.height, g.width, g.channels}, g.data); }
Var Tape::constant(const FlowField& f) { return constant(Shape{f.height, f.width, 2}, f.uv); }
Var Tape::constant(const Mask& m) { return constant(Shape{m.height, m.width, 1}, m.m); }
Var Tape::constant_scalar(double v) { return constant(Shape{1, 1, 1}, {v}); }

Var Tape::param(ParamStore& store, const std::string& name, Shape shape) {
    const auto& e = store.entry(name);
    if (static_cast<int>(e.value.size()) != shape.size())
        throw ValidationError("Tape::param: shape mismatch for '" + name + "'");
    Var v = leaf(shape, e.value);
    bindings_.push_back({v.id(), &store, name});
    return v;
}

void Tape::backward(Var root) {
    if (root.tape() != this) throw ValidationError("Tape::backward: root from another tape");
    if (shape(root.id()).size() != 1) throw ValidationError("Tape::backward: root must be scalar");
    if (!needs_grad(root.id())) throw ValidationError("Tape::backward: root does not track gradients");
    grad(root.id())[0] = 1.0;
    for (int i = root.id(); i >= 0; --i) {
        if (nodes_[i].needs_grad && nodes_[i].back) nodes_[i].back(*this);
    }
}

void Tape::accumulate_param_grads() {
    for (const auto& b : bindings_) {
        auto& g = b.store->grad(b.name);
        const auto& ng = nodes_[b.node].grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += ng[i];
    }
}

namespace {

Tape& tape_of(Var a, const char* op) {
    if (!a.valid()) throw ValidationError(std::string(op) + ": invalid operand");
    return *a.tape();
}

void require_pair(Var a, Var b, const char* op) {
    if (a.tape() != b.tape()) throw ValidationError(std::string(op) + ": operands on different tapes");
    if (a.shape() != b.shape()) throw ValidationError(std::string(op) + ": shape mismatch");
}

}  // namespace

Var add(Var a, Var b) {
    require_pair(a, b, "add");
    Tape& t = tape_of(a, "add");
    const int ia = a.id(), ib = b.id();
    const bool ng = t.needs_grad(ia) || t.needs_grad(ib);
    const int id = t.make_node(a.shape(), ng);
    auto& out = t.val(id);
    const auto& va = t.val(ia);
    const auto& vb = t.val(ib);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
    if (ng)
        t.set_backward(id, [id, ia, ib](Tape& tp) {
            const auto& g = tp.grad(id);
            if (tp.needs_grad(ia)) {
                auto& ga = tp.grad(ia);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (tp.needs_grad(ib)) {
                auto& gb = tp.grad(ib);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    return Var(&t, id);
}

Var sub(Var a, Var b) {
    require_pair(a, b, "sub");
    Tape& t = tape_of(a, "sub");
    const int ia = a.id(), ib = b.id();
    const bool ng = t.needs_grad(ia) || t.needs_grad(ib);
    const int id = t.make_node(a.shape(), ng);
    auto& out = t.val(id);
    const auto& va = t.val(ia);
    const auto& vb = t.val(ib);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
    if (ng)
        t.set_backward(id, [id, ia, ib](Tape& tp) {
            const auto& g = tp.grad(id);
            if (tp.needs_grad(ia)) {
                auto& ga = tp.grad(ia);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (tp.needs_grad(ib)) {
                auto& gb = tp.grad(ib);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    return Var(&t, id);
}

Var mul(Var a, Var b) {
    require_pair(a, b, "mul");
    Tape& t = tape_of(a, "mul");
    const int ia = a.id(), ib = b.id();
    const bool ng = t.needs_grad(ia) || t.needs_grad(ib);
    const int id = t.make_node(a.shape(), ng);
    auto& out = t.val(id);
    const auto& va = t.val(ia);
    const auto& vb = t.val(ib);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
    if (ng)
        t.set_backward(id, [id, ia, ib](Tape& tp) {
            const auto& g = tp.grad(id);
            const auto& va2 = tp.val(ia);
            const auto& vb2 = tp.val(ib);
            if (tp.needs_grad(ia)) {
                auto& ga = tp.grad(ia);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb2[i];
            }
            if (tp.needs_grad(ib)) {
                auto& gb = tp.grad(ib);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va2[i];
            }
        });
    return Var(&t, id);
}

namespace {

// Unary op helper: y_i = f(x_i), dy_i/dx_i supplied as a second functor.
template <typename F, typename D>
Var unary_op(Var a, const char* name, F f, D dfdx) {
    Tape& t = tape_of(a, name);
    const int ia = a.id();
    const bool ng = t.needs_grad(ia);
    const int id = t.make_node(a.shape(), ng);
    auto& out = t.val(id);
    const auto& va = t.val(ia);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(va[i]);
    if (ng)
        t.set_backward(id, [id, ia, dfdx](Tape& tp) {
            const auto& g = tp.grad(id);
            const auto& x = tp.val(ia);
            const auto& y = tp.val(id);
            auto& ga = tp.grad(ia);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(x[i], y[i]);
        });
    return Var(&t, id);
}

}  // namespace

Var scale(Var a, double s) {
    return unary_op(
        a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
    return unary_op(
        a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var exp_v(Var a) {
    return unary_op(
        a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log_v(Var a) {
    for (double v : a.value())
        if (!(v > 0.0)) throw ValidationError("log: non-positive input");
    return unary_op(
        a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh_v(Var a) {
    return unary_op(
        a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var softplus_v(Var a) {
    return unary_op(
        a, "softplus", [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
        [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Var smooth_abs(Var a, double eps) {
    return unary_op(
        a, "smooth_abs", [eps](double x) { return std::sqrt(x * x + eps * eps); },
        [](double x, double y) { return x / y; });
}

Var sparse_pow(Var a, double p, double eps, double abs_eps) {
    if (!(p > 0.0 && p <= 1.0)) throw ValidationError("sparse_pow: exponent must be in (0,1]");
    return unary_op(
        a, "sparse_pow",
        [p, eps, abs_eps](double x) { return std::pow(std::sqrt(x * x + abs_eps * abs_eps) + eps, p); },
        [p, eps, abs_eps](double x, double) {
            const double s = std::sqrt(x * x + abs_eps * abs_eps);
            return p * std::pow(s + eps, p - 1.0) * (x / s);
        });
}

Var sum(Var a) {
    Tape& t = tape_of(a, "sum");
    const int ia = a.id();
    const bool ng = t.needs_grad(ia);
    const int id = t.make_node(Shape{1, 1, 1}, ng);
    double s = 0.0;
    for (double v : t.val(ia)) s += v;
    t.val(id)[0] = s;
    if (ng)
        t.set_backward(id, [id, ia](Tape& tp) {
            const double g = tp.grad(id)[0];
            auto& ga = tp.grad(ia);
            for (auto& v : ga) v += g;
        });
    return Var(&t, id);
}

Var channel_sum(Var a) {
    Tape& t = tape_of(a, "channel_sum");
    const int ia = a.id();
    const Shape sh = a.shape();
    const bool ng = t.needs_grad(ia);
    const int id = t.make_node(Shape{sh.h, sh.w, 1}, ng);
    auto& out = t.val(id);
    const auto& va = t.val(ia);
    for (int p = 0; p < sh.h * sh.w; ++p) {
        double s = 0.0;
        for (int c = 0; c < sh.c; ++c) s += va[static_cast<std::size_t>(p) * sh.c + c];
        out[p] = s;
    }
    if (ng)
        t.set_backward(id, [id, ia, sh](Tape& tp) {
            const auto& g = tp.grad(id);
            auto& ga = tp.grad(ia);
            for (int p = 0; p < sh.h * sh.w; ++p)
                for (int c = 0; c < sh.c; ++c) ga[static_cast<std::size_t>(p) * sh.c + c] += g[p];
        });
    return Var(&t, id);
}

Var gather(Var a, std::vector<int> idx) {
    Tape& t = tape_of(a, "gather");
    const int ia = a.id();
    const int n = static_cast<int>(idx.size());
    const int total = a.shape().size();
    for (int i : idx)
        if (i < 0 || i >= total) throw ValidationError("gather: index out of range");
    const bool ng = t.needs_grad(ia);
    const int id = t.make_node(Shape{n, 1, 1}, ng);
    auto& out = t.val(id);
    const auto& va = t.val(ia);
    for (int i = 0; i < n; ++i) out[i] = va[idx[i]];
    if (ng)
        t.set_backward(id, [id, ia, idx = std::move(idx)](Tape& tp) {
            const auto& g = tp.grad(id);
            auto& ga = tp.grad(ia);
            for (std::size_t i = 0; i < idx.size(); ++i) ga[idx[i]] += g[i];
        });
    return Var(&t, id);
}

Var softmax_channels(Var a) {
    Tape& t = tape_of(a, "softmax_channels");
    const int ia = a.id();
    const Shape sh = a.shape();
    const bool ng = t.needs_grad(ia);
    const int id = t.make_node(sh, ng);
    auto& out = t.val(id);
    const auto& va = t.val(ia);
    for (int p = 0; p < sh.h * sh.w; ++p) {
        const std::size_t base = static_cast<std::size_t>(p) * sh.c;
        double m = va[base];
        for (int c = 1; c < sh.c; ++c) m = std::max(m, va[base + c]);
        double z = 0.0;
        for (int c = 0; c < sh.c; ++c) {
            out[base + c] = std::exp(va[base + c] - m);
            z += out[base + c];
        }
        for (int c = 0; c < sh.c; ++c) out[base + c] /= z;
    }
    if (ng)
        t.set_backward(id, [id, ia, sh](Tape& tp) {
            const auto& g = tp.grad(id);
            const auto& y = tp.val(id);
            auto& ga = tp.grad(ia);
            for (int p = 0; p < sh.h * sh.w; ++p) {
                const std::size_t base = static_cast<std::size_t>(p) * sh.c;
                double dot = 0.0;
                for (int c = 0; c < sh.c; ++c) dot += g[base + c] * y[base + c];
                for (int c = 0; c < sh.c; ++c) ga[base + c] += y[base + c] * (g[base + c] - dot);
            }
        });
    return Var(&t, id);
}

Var conv2d(Var input, Var weight, Var bias, int kh, int kw, int ci, int co, int stride) {
    Tape& t = tape_of(input, "conv2d");
    if (weight.tape() != &t || bias.tape() != &t) throw ValidationError("conv2d: operands on different tapes");
    const Shape in_sh = input.shape();
    if (in_sh.c != ci) throw ValidationError("conv2d: input channel mismatch");
    if (weight.shape().size() != kh * kw * ci * co) throw ValidationError("conv2d: weight size mismatch");
    if (bias.shape().size() != co) throw ValidationError("conv2d: bias size mismatch");
    if (stride < 1) throw ValidationError("conv2d: stride must be >= 1");
    const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
    const int oh = (in_sh.h + 2 * ph - kh) / stride + 1;
    const int ow = (in_sh.w + 2 * pw - kw) / stride + 1;
    const int ii = input.id(), iw = weight.id(), ib = bias.id();
    const bool ng = t.needs_grad(ii) || t.needs_grad(iw) || t.needs_grad(ib);
    const int id = t.make_node(Shape{oh, ow, co}, ng);

    auto& out = t.val(id);
    const auto& x = t.val(ii);
    const auto& w = t.val(iw);
    const auto& b = t.val(ib);
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            double* o = &out[(static_cast<std::size_t>(oy) * ow + ox) * co];
            for (int oc = 0; oc < co; ++oc) o[oc] = b[oc];
            for (int ky = 0; ky < kh; ++ky) {
                const int ysrc = oy * stride + ky - ph;
                if (ysrc < 0 || ysrc >= in_sh.h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    const int xsrc = ox * stride + kx - pw;
                    if (xsrc < 0 || xsrc >= in_sh.w) continue;
                    const double* xi = &x[(static_cast<std::size_t>(ysrc) * in_sh.w + xsrc) * ci];
                    const double* wk = &w[((static_cast<std::size_t>(ky) * kw + kx) * ci) * co];
                    for (int ic = 0; ic < ci; ++ic) {
                        const double xv = xi[ic];
                        const double* wc = wk + static_cast<std::size_t>(ic) * co;
                        for (int oc = 0; oc < co; ++oc) o[oc] += xv * wc[oc];
                    }
                }
            }
        }
    }
    if (ng)
        t.set_backward(id, [id, ii, iw, ib, in_sh, kh, kw, ci, co, stride, ph, pw, oh, ow](Tape& tp) {
            const auto& g = tp.grad(id);
            const auto& x2 = tp.val(ii);
            const auto& w2 = tp.val(iw);
            const bool gx = tp.needs_grad(ii), gw = tp.needs_grad(iw), gb = tp.needs_grad(ib);
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    const double* go = &g[(static_cast<std::size_t>(oy) * ow + ox) * co];
                    if (gb) {
                        auto& bg = tp.grad(ib);
                        for (int oc = 0; oc < co; ++oc) bg[oc] += go[oc];
                    }
                    for (int ky = 0; ky < kh; ++ky) {
                        const int ysrc = oy * stride + ky - ph;
                        if (ysrc < 0 || ysrc >= in_sh.h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int xsrc = ox * stride + kx - pw;
                            if (xsrc < 0 || xsrc >= in_sh.w) continue;
                            const std::size_t xoff = (static_cast<std::size_t>(ysrc) * in_sh.w + xsrc) * ci;
                            const std::size_t woff = (static_cast<std::size_t>(ky) * kw + kx) * ci * co;
                            for (int ic = 0; ic < ci; ++ic) {
                                double acc = 0.0;
                                const double* wc = &w2[woff + static_cast<std::size_t>(ic) * co];
                                for (int oc = 0; oc < co; ++oc) acc += go[oc] * wc[oc];
                                if (gx) tp.grad(ii)[xoff + ic] += acc;
                                if (gw) {
                                    const double xv = x2[xoff + ic];
                                    double* wg = &tp.grad(iw)[woff + static_cast<std::size_t>(ic) * co];
                                    for (int oc = 0; oc < co; ++oc) wg[oc] += go[oc] * xv;
                                }
                            }
                        }
                    }
                }
            }
        });
    return Var(&t, id);
}

Var warp_bilinear(Var src, Var flow) {
    Tape& t = tape_of(src, "warp_bilinear");
    if (flow.tape() != &t) throw ValidationError("warp_bilinear: operands on different tapes");
    const Shape ss = src.shape();
    const Shape fs = flow.shape();
    if (fs.h != ss.h || fs.w != ss.w || fs.c != 2) throw ValidationError("warp_bilinear: flow must be (h,w,2)");
    const int is = src.id(), ifl = flow.id();
    const bool ng = t.needs_grad(is) || t.needs_grad(ifl);
    const int id = t.make_node(ss, ng);

    const int H = ss.h, W = ss.w, C = ss.c;
    auto& out = t.val(id);
    const auto& sv = t.val(is);
    const auto& fv = t.val(ifl);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const std::size_t pi = static_cast<std::size_t>(y) * W + x;
            const double sx = std::clamp(x + fv[pi * 2], 0.0, static_cast<double>(W - 1));
            const double sy = std::clamp(y + fv[pi * 2 + 1], 0.0, static_cast<double>(H - 1));
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const int x1 = std::min(x0 + 1, W - 1);
            const int y1 = std::min(y0 + 1, H - 1);
            const double a = sx - x0, b = sy - y0;
            for (int c = 0; c < C; ++c) {
                const double v00 = sv[(static_cast<std::size_t>(y0) * W + x0) * C + c];
                const double v10 = sv[(static_cast<std::size_t>(y0) * W + x1) * C + c];
                const double v01 = sv[(static_cast<std::size_t>(y1) * W + x0) * C + c];
                const double v11 = sv[(static_cast<std::size_t>(y1) * W + x1) * C + c];
                out[pi * C + c] = (1 - a) * (1 - b) * v00 + a * (1 - b) * v10 + (1 - a) * b * v01 + a * b * v11;
            }
        }
    }
    if (ng)
        t.set_backward(id, [id, is, ifl, H, W, C](Tape& tp) {
            const auto& g = tp.grad(id);
            const auto& sv2 = tp.val(is);
            const auto& fv2 = tp.val(ifl);
            const bool gs = tp.needs_grad(is), gf = tp.needs_grad(ifl);
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    const std::size_t pi = static_cast<std::size_t>(y) * W + x;
                    const double rx = x + fv2[pi * 2];
                    const double ry = y + fv2[pi * 2 + 1];
                    const bool in_x = rx > 0.0 && rx < static_cast<double>(W - 1);
                    const bool in_y = ry > 0.0 && ry < static_cast<double>(H - 1);
                    const double sx = std::clamp(rx, 0.0, static_cast<double>(W - 1));
                    const double sy = std::clamp(ry, 0.0, static_cast<double>(H - 1));
                    const int x0 = static_cast<int>(std::floor(sx));
                    const int y0 = static_cast<int>(std::floor(sy));
                    const int x1 = std::min(x0 + 1, W - 1);
                    const int y1 = std::min(y0 + 1, H - 1);
                    const double a = sx - x0, b = sy - y0;
                    double du = 0.0, dv = 0.0;
                    for (int c = 0; c < C; ++c) {
                        const double go = g[pi * C + c];
                        if (go == 0.0 && !gf) continue;
                        const std::size_t i00 = (static_cast<std::size_t>(y0) * W + x0) * C + c;
                        const std::size_t i10 = (static_cast<std::size_t>(y0) * W + x1) * C + c;
                        const std::size_t i01 = (static_cast<std::size_t>(y1) * W + x0) * C + c;
                        const std::size_t i11 = (static_cast<std::size_t>(y1) * W + x1) * C + c;
                        if (gs) {
                            auto& sg = tp.grad(is);
                            sg[i00] += go * (1 - a) * (1 - b);
                            sg[i10] += go * a * (1 - b);
                            sg[i01] += go * (1 - a) * b;
                            sg[i11] += go * a * b;
                        }
                        if (gf) {
                            const double v00 = sv2[i00], v10 = sv2[i10], v01 = sv2[i01], v11 = sv2[i11];
                            if (in_x) du += go * ((1 - b) * (v10 - v00) + b * (v11 - v01));
                            if (in_y) dv += go * ((1 - a) * (v01 - v00) + a * (v11 - v10));
                        }
                    }
                    if (gf) {
                        auto& fg = tp.grad(ifl);
                        fg[pi * 2] += du;
                        fg[pi * 2 + 1] += dv;
                    }
                }
            }
        });
    return Var(&t, id);
}

Var laplacian_v(Var a) {
    Tape& t = tape_of(a, "laplacian");
    const Shape sh = a.shape();
    if (sh.h < 3 || sh.w < 3) throw ValidationError("laplacian: grid must be at least 3x3");
    const int ia = a.id();
    const bool ng = t.needs_grad(ia);
    const int id = t.make_node(sh, ng);
    auto& out = t.val(id);
    const auto& x = t.val(ia);
    const int H = sh.h, W = sh.w, C = sh.c;
    auto at = [W, C](int y, int xx, int c) { return (static_cast<std::size_t>(y) * W + xx) * C + c; };
    for (int y = 0; y < H; ++y) {
        const int ym = std::max(y - 1, 0), yp = std::min(y + 1, H - 1);
        for (int xx = 0; xx < W; ++xx) {
            const int xm = std::max(xx - 1, 0), xp = std::min(xx + 1, W - 1);
            for (int c = 0; c < C; ++c)
                out[at(y, xx, c)] =
                    x[at(y, xm, c)] + x[at(y, xp, c)] + x[at(ym, xx, c)] + x[at(yp, xx, c)] - 4.0 * x[at(y, xx, c)];
        }
    }
    if (ng)
        t.set_backward(id, [id, ia, H, W, C, at](Tape& tp) {
            const auto& g = tp.grad(id);
            auto& ga = tp.grad(ia);
            for (int y = 0; y < H; ++y) {
                const int ym = std::max(y - 1, 0), yp = std::min(y + 1, H - 1);
                for (int xx = 0; xx < W; ++xx) {
                    const int xm = std::max(xx - 1, 0), xp = std::min(xx + 1, W - 1);
                    for (int c = 0; c < C; ++c) {
                        const double go = g[at(y, xx, c)];
                        ga[at(y, xm, c)] += go;
                        ga[at(y, xp, c)] += go;
                        ga[at(ym, xx, c)] += go;
                        ga[at(yp, xx, c)] += go;
                        ga[at(y, xx, c)] -= 4.0 * go;
                    }
                }
            }
        });
    return Var(&t, id);
}

Var upsample_bilinear(Var a, int factor) {
    if (factor < 1) throw ValidationError("upsample_bilinear: factor must be >= 1");
    Tape& t = tape_of(a, "upsample_bilinear");
    const Shape sh = a.shape();
    const int ia = a.id();
    const int OH = sh.h * factor, OW = sh.w * factor;
    const bool ng = t.needs_grad(ia);
    const int id = t.make_node(Shape{OH, OW, sh.c}, ng);
    auto& out = t.val(id);
    const auto& x = t.val(ia);
    const int H = sh.h, W = sh.w, C = sh.c;
    // Half-pixel-centered sampling (align_corners=false convention).
    for (int oy = 0; oy < OH; ++oy) {
        const double sy = std::clamp((oy + 0.5) / factor - 0.5, 0.0, static_cast<double>(H - 1));
        const int y0 = static_cast<int>(std::floor(sy));
        const int y1 = std::min(y0 + 1, H - 1);
        const double b = sy - y0;
        for (int ox = 0; ox < OW; ++ox) {
            const double sx = std::clamp((ox + 0.5) / factor - 0.5, 0.0, static_cast<double>(W - 1));
            const int x0 = static_cast<int>(std::floor(sx));
            const int x1 = std::min(x0 + 1, W - 1);
            const double aa = sx - x0;
            for (int c = 0; c < C; ++c) {
                const double v00 = x[(static_cast<std::size_t>(y0) * W + x0) * C + c];
                const double v10 = x[(static_cast<std::size_t>(y0) * W + x1) * C + c];
                const double v01 = x[(static_cast<std::size_t>(y1) * W + x0) * C + c];
                const double v11 = x[(static_cast<std::size_t>(y1) * W + x1) * C + c];
                out[(static_cast<std::size_t>(oy) * OW + ox) * C + c] =
                    (1 - aa) * (1 - b) * v00 + aa * (1 - b) * v10 + (1 - aa) * b * v01 + aa * b * v11;
            }
        }
    }
    if (ng)
        t.set_backward(id, [id, ia, H, W, C, OH, OW, factor](Tape& tp) {
            const auto& g = tp.grad(id);
            auto& ga = tp.grad(ia);
            for (int oy = 0; oy < OH; ++oy) {
                const double sy = std::clamp((oy + 0.5) / factor - 0.5, 0.0, static_cast<double>(H - 1));
                const int y0 = static_cast<int>(std::floor(sy));
                const int y1 = std::min(y0 + 1, H - 1);
                const double b = sy - y0;
                for (int ox = 0; ox < OW; ++ox) {
                    const double sx = std::clamp((ox + 0.5) / factor - 0.5, 0.0, static_cast<double>(W - 1));
                    const int x0 = static_cast<int>(std::floor(sx));
                    const int x1 = std::min(x0 + 1, W - 1);
                    const double aa = sx - x0;
                    for (int c = 0; c < C; ++c) {
                        const double go = g[(static_cast<std::size_t>(oy) * OW + ox) * C + c];
                        ga[(static_cast<std::size_t>(y0) * W + x0) * C + c] += go * (1 - aa) * (1 - b);
                        ga[(static_cast<std::size_t>(y0) * W + x1) * C + c] += go * aa * (1 - b);
                        ga[(static_cast<std::size_t>(y1) * W + x0) * C + c] += go * (1 - aa) * b;
                        ga[(static_cast<std::size_t>(y1) * W + x1) * C + c] += go * aa * b;
                    }
                }
            }
        });
    return Var(&t, id);
}

Var disparity_to_flow(Var d) {
    Tape& t = tape_of(d, "disparity_to_flow");
    const Shape sh = d.shape();
    if (sh.c != 1) throw ValidationError("disparity_to_flow: disparity must be single-channel");
    const int ia = d.id();
    const bool ng = t.needs_grad(ia);
    const int id = t.make_node(Shape{sh.h, sh.w, 2}, ng);
    auto& out = t.val(id);
    const auto& x = t.val(ia);
    for (std::size_t p = 0; p < x.size(); ++p) {
        out[p * 2] = -x[p];
        out[p * 2 + 1] = 0.0;
    }
    if (ng)
        t.set_backward(id, [id, ia](Tape& tp) {
            const auto& g = tp.grad(id);
            auto& ga = tp.grad(ia);
            for (std::size_t p = 0; p < ga.size(); ++p) ga[p] -= g[p * 2];
        });
    return Var(&t, id);
}

Var minmax_normalize(Var a, double* out_min, double* out_max) {
    Tape& t = tape_of(a, "minmax_normalize");
    const int ia = a.id();
    const auto& x = t.val(ia);
    std::size_t imin = 0, imax = 0;
    for (std::size_t i = 1; i < x.size(); ++i) {
        if (x[i] < x[imin]) imin = i;
        if (x[i] > x[imax]) imax = i;
    }
    const double m = x[imin], M = x[imax];
    if (out_min) *out_min = m;
    if (out_max) *out_max = M;
    const bool ng = t.needs_grad(ia);
    const int id = t.make_node(a.shape(), ng);
    auto& out = t.val(id);
    if (M == m) {
        std::fill(out.begin(), out.end(), 0.5);  // constant volume convention
        return Var(&t, id);                      // gradient is zero everywhere
    }
    const double R = M - m;
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - m) / R;
    if (ng)
        t.set_backward(id, [id, ia, imin, imax, m, R](Tape& tp) {
            const auto& g = tp.grad(id);
            const auto& x2 = tp.val(ia);
            auto& ga = tp.grad(ia);
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) {
                s1 += g[i];
                s2 += g[i] * (x2[i] - m);
            }
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / R;
            ga[imin] += -s1 / R + s2 / (R * R);
            ga[imax] += -s2 / (R * R);
        });
    return Var(&t, id);
}

ImageGrid to_grid(Var v) {
    const Shape sh = v.shape();
    ImageGrid g(sh.h, sh.w, sh.c);
    g.data = v.value();
    return g;
}

FlowField to_flow(Var v) {
    const Shape sh = v.shape();
    if (sh.c != 2) throw ValidationError("to_flow: node is not a flow field");
    FlowField f(sh.h, sh.w);
    f.uv = v.value();
    return f;
}

}  // namespace fogflow::ad
