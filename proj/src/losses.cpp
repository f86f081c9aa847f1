#include "fogflow/losses.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "fogflow/errors.hpp"

namespace fogflow {

void SparseNorm::validate() const {
    if (!(p > 0.0 && p <= 1.0)) throw ValidationError("sparse norm: p must be in (0,1]");
    if (!(eps > 0.0) || !std::isfinite(eps)) throw ValidationError("sparse norm: eps must be positive");
}

SparseNorm SparseNorm::from_json(const nlohmann::json& j) {
    SparseNorm n;
    try {
        n.p = j.value("p", n.p);
        n.eps = j.value("eps", n.eps);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("sparse norm: ") + e.what());
    }
    n.validate();
    return n;
}

nlohmann::json SparseNorm::to_json() const { return nlohmann::json{{"p", p}, {"eps", eps}}; }

void LossWeights::validate() const {
    for (double v : {l1, l2, l3, l4, l5, l6})
        if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("loss weights: must be non-negative finite");
}

LossWeights LossWeights::from_json(const nlohmann::json& j) {
    LossWeights w;
    try {
        w.l1 = j.value("l1", w.l1);
        w.l2 = j.value("l2", w.l2);
        w.l3 = j.value("l3", w.l3);
        w.l4 = j.value("l4", w.l4);
        w.l5 = j.value("l5", w.l5);
        w.l6 = j.value("l6", w.l6);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("loss weights: ") + e.what());
    }
    w.validate();
    return w;
}

nlohmann::json LossWeights::to_json() const {
    return nlohmann::json{{"l1", l1}, {"l2", l2}, {"l3", l3}, {"l4", l4}, {"l5", l5}, {"l6", l6}};
}

double total_loss(const LossTerms& terms, const LossWeights& weights) {
    weights.validate();
    const struct {
        const char* name;
        double value;
        double weight;
    } entries[] = {{"depth", terms.depth, weights.l1},   {"pho", terms.pho, weights.l2},
                   {"geo", terms.geo, weights.l3},       {"consis", terms.consis, weights.l4},
                   {"self", terms.self_sup, weights.l5}, {"kl", terms.kl, weights.l6}};
    double total = 0.0;
    for (const auto& e : entries) {
        if (!std::isfinite(e.value)) throw ValidationError(std::string("total_loss: non-finite term ") + e.name);
        total += e.weight * e.value;
    }
    return total;
}

namespace ad {

namespace {

Var pixel_mean(Var x) {
    const Shape sh = x.shape();
    return scale(sum(x), 1.0 / (static_cast<double>(sh.h) * sh.w));
}

// Mean over pixels whose 5-point stencil needs no border replication.
Var interior_mean(Var x) {
    const Shape sh = x.shape();
    if (sh.h < 3 || sh.w < 3) throw ValidationError("losses: smoothness needs at least 3x3 extent");
    Tape& t = *x.tape();
    std::vector<double> m(static_cast<std::size_t>(sh.h) * sh.w, 0.0);
    for (int y = 1; y < sh.h - 1; ++y)
        for (int x2 = 1; x2 < sh.w - 1; ++x2) m[static_cast<std::size_t>(y) * sh.w + x2] = 1.0;
    Var mask = t.constant(Shape{sh.h, sh.w, 1}, std::move(m));
    return scale(sum(mul(x, mask)), 1.0 / (static_cast<double>(sh.h - 2) * (sh.w - 2)));
}

// sum(x * (1-O)) / sum(1-O), the normalizer read off the mask values.
Var masked_mean(Var x, Var occlusion, const char* what) {
    if (occlusion.shape() != x.shape()) throw ValidationError(std::string(what) + ": mask extent mismatch");
    Var w = add_scalar(scale(occlusion, -1.0), 1.0);
    const double denom = std::accumulate(w.value().begin(), w.value().end(), 0.0);
    if (!(denom > 0.0)) throw ValidationError(std::string(what) + ": fully occluded");
    return scale(sum(mul(x, w)), 1.0 / denom);
}

Var l1_channel_sum(Var a, Var b) {
    if (a.shape() != b.shape()) throw ValidationError("losses: extent mismatch");
    return channel_sum(smooth_abs(sub(a, b)));
}

}  // namespace

Var sparse_lp(Var x, const SparseNorm& norm) {
    norm.validate();
    return channel_sum(sparse_pow(x, norm.p, norm.eps));
}

Var photometric_flow_loss(Var I_t, Var I_t1, Var F_f, Var F_b, Var O_f, Var O_b,
                          const SparseNorm& norm) {
    norm.validate();
    if (I_t.shape() != I_t1.shape()) throw ValidationError("photometric_flow_loss: extent mismatch");
    Var res_f = sparse_lp(sub(I_t, warp_bilinear(I_t1, F_f)), norm);
    Var res_b = sparse_lp(sub(I_t1, warp_bilinear(I_t, F_b)), norm);
    Var fwd = masked_mean(res_f, O_f, "photometric_flow_loss");
    Var bwd = masked_mean(res_b, O_b, "photometric_flow_loss");
    return add(fwd, bwd);
}

Var depth_loss(Var I_t_l, Var I_t_r, Var I_t1_l, Var I_t1_r, Var D_t, Var D_t1,
               const SparseNorm& norm) {
    norm.validate();
    if (I_t_l.shape() != I_t_r.shape() || I_t_l.shape() != I_t1_l.shape() ||
        I_t_l.shape() != I_t1_r.shape())
        throw ValidationError("depth_loss: image extent mismatch");
    const Shape sh = I_t_l.shape();
    const Shape ds{sh.h, sh.w, 1};
    if (D_t.shape() != ds || D_t1.shape() != ds) throw ValidationError("depth_loss: disparity extent mismatch");

    auto frame = [&](Var left, Var right, Var disp) {
        Var photo = pixel_mean(sparse_lp(sub(left, warp_bilinear(right, disparity_to_flow(disp))), norm));
        Var edge = exp_v(scale(channel_sum(smooth_abs(laplacian_v(left))), -1.0 / sh.c));
        Var smooth = interior_mean(mul(smooth_abs(laplacian_v(disp)), edge));
        return add(photo, smooth);
    };
    return add(frame(I_t_l, I_t_r, D_t), frame(I_t1_l, I_t1_r, D_t1));
}

Var geo_flow_loss(Var F, Var F_rigid, Var V) {
    return masked_mean(l1_channel_sum(F, F_rigid), V, "geo_flow_loss");
}

Var consistency_loss(Var F_syn, Var F, bool mean) {
    Var s = sum(l1_channel_sum(F_syn, F));
    if (!mean) return s;
    const Shape sh = F_syn.shape();
    return scale(s, 1.0 / (static_cast<double>(sh.h) * sh.w));
}

Var self_supervised_loss(Var F_real, Var F_pseudo, bool mean) {
    return consistency_loss(F_real, F_pseudo, mean);
}

Var total_loss(Tape& t, const TermVars& terms, const LossWeights& weights) {
    weights.validate();
    const struct {
        const char* name;
        Var v;
        double weight;
    } entries[] = {{"depth", terms.depth, weights.l1},   {"pho", terms.pho, weights.l2},
                   {"geo", terms.geo, weights.l3},       {"consis", terms.consis, weights.l4},
                   {"self", terms.self_sup, weights.l5}, {"kl", terms.kl, weights.l6}};
    Var total = t.constant_scalar(0.0);
    for (const auto& e : entries) {
        if (!e.v.valid()) continue;
        if (e.v.shape().size() != 1) throw ValidationError(std::string("total_loss: term not scalar: ") + e.name);
        if (!std::isfinite(e.v.scalar()))
            throw ValidationError(std::string("total_loss: non-finite term ") + e.name);
        total = add(total, scale(e.v, e.weight));
    }
    return total;
}

}  // namespace ad

ImageGrid sparse_lp(const ImageGrid& x, const SparseNorm& norm) {
    ad::Tape t;
    return ad::to_grid(ad::sparse_lp(t.constant(x), norm));
}

double photometric_flow_loss(const ImageGrid& I_t, const ImageGrid& I_t1, const FlowField& F_f,
                             const FlowField& F_b, const Mask& O_f, const Mask& O_b,
                             const SparseNorm& norm) {
    ad::Tape t;
    return ad::photometric_flow_loss(t.constant(I_t), t.constant(I_t1), t.constant(F_f),
                                     t.constant(F_b), t.constant(O_f), t.constant(O_b), norm)
        .scalar();
}

double depth_loss(const ImageGrid& I_t_l, const ImageGrid& I_t_r, const ImageGrid& I_t1_l,
                  const ImageGrid& I_t1_r, const ImageGrid& D_t, const ImageGrid& D_t1,
                  const SparseNorm& norm) {
    ad::Tape t;
    return ad::depth_loss(t.constant(I_t_l), t.constant(I_t_r), t.constant(I_t1_l),
                          t.constant(I_t1_r), t.constant(D_t), t.constant(D_t1), norm)
        .scalar();
}

double geo_flow_loss(const FlowField& F, const FlowField& F_rigid, const Mask& V) {
    ad::Tape t;
    return ad::geo_flow_loss(t.constant(F), t.constant(F_rigid), t.constant(V)).scalar();
}

double consistency_loss(const FlowField& F_syn, const FlowField& F, bool mean) {
    ad::Tape t;
    return ad::consistency_loss(t.constant(F_syn), t.constant(F), mean).scalar();
}

double self_supervised_loss(const FlowField& F_real, const FlowField& F_pseudo, bool mean) {
    return consistency_loss(F_real, F_pseudo, mean);
}

void write_loss_curve_csv(const std::string& path, const std::vector<LossCurveRow>& rows) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write loss curve '" + path + "'");
    out << "step,depth,pho,geo,consis,self,kl,total\n";
    char buf[512];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step,
                      r.terms.depth, r.terms.pho, r.terms.geo, r.terms.consis, r.terms.self_sup,
                      r.terms.kl, r.total);
        out << buf;
    }
    if (!out) throw ValidationError("failed writing loss curve '" + path + "'");
}

}  // namespace fogflow
