#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "fogflow/ad.hpp"
#include "fogflow/grid.hpp"

namespace fogflow {

// psi(x) = (|x| + eps)^p, the sparse penalty applied to every residual. The
// differentiable path smooths |x| as sqrt(x^2 + 1e-12), so the floor sits at
// (1e-6 + eps)^p rather than eps^p.
struct SparseNorm {
    double p = 0.4;
    double eps = 1e-2;
    void validate() const;
    static SparseNorm from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

// Weights of the six training objectives, in loss order: depth, photometric,
// geometric, consistency, self-supervised, correlation-KL.
struct LossWeights {
    double l1 = 1.0;   // depth
    double l2 = 1.0;   // photometric
    double l3 = 0.1;   // geometric
    double l4 = 1.0;   // consistency
    double l5 = 1.0;   // self-supervised
    double l6 = 0.1;   // correlation KL
    void validate() const;
    static LossWeights from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct LossTerms {
    double depth = 0.0;
    double pho = 0.0;
    double geo = 0.0;
    double consis = 0.0;
    double self_sup = 0.0;
    double kl = 0.0;
};

// Weighted Eq.-style total; throws naming the first non-finite term.
double total_loss(const LossTerms& terms, const LossWeights& weights);

namespace ad {

// psi applied elementwise then channel-summed: (h,w,c) -> (h,w,1).
Var sparse_lp(Var x, const SparseNorm& norm);

// Bidirectional occlusion-masked photometric penalty. Each direction is
// sum(psi(I_a - warp(I_b, F)) * (1-O)) / sum(1-O); masks are treated as data
// (the normalizer is not differentiated). Throws when a direction is fully
// occluded.
Var photometric_flow_loss(Var I_t, Var I_t1, Var F_f, Var F_b, Var O_f, Var O_b,
                          const SparseNorm& norm);

// Stereo disparity objective: per frame, the pixel-mean psi residual of the
// left image against the disparity-warped right image, plus edge-aware
// second-order smoothness mean(|lap D| * exp(-mean_c|lap I_l|)) evaluated on
// the interior where the 5-point stencil is complete. Disparities are
// horizontal pixel offsets (left pixel x samples right image at x - d).
Var depth_loss(Var I_t_l, Var I_t_r, Var I_t1_l, Var I_t1_r, Var D_t, Var D_t1,
               const SparseNorm& norm);

// Rigid-region flow consistency: sum(|F - F_rigid|_1 * (1-V)) / sum(1-V),
// where V marks nonrigid pixels. Throws when V covers everything.
Var geo_flow_loss(Var F, Var F_rigid, Var V);

// L1 flow agreement, a plain sum as printed (mean = true averages instead,
// for resolution-independent weighting).
Var consistency_loss(Var F_syn, Var F, bool mean = false);
// Same penalty against a detached pseudo-label (pass it as a constant).
Var self_supervised_loss(Var F_real, Var F_pseudo, bool mean = false);

// Weighted total over whichever term nodes are present; default-constructed
// (invalid) Vars are simply omitted. Every present term must be scalar.
struct TermVars {
    Var depth, pho, geo, consis, self_sup, kl;
};
Var total_loss(Tape& t, const TermVars& terms, const LossWeights& weights);

}  // namespace ad

// Plain-carrier wrappers; each evaluates the tape form on constants.
ImageGrid sparse_lp(const ImageGrid& x, const SparseNorm& norm);
double photometric_flow_loss(const ImageGrid& I_t, const ImageGrid& I_t1, const FlowField& F_f,
                             const FlowField& F_b, const Mask& O_f, const Mask& O_b,
                             const SparseNorm& norm);
double depth_loss(const ImageGrid& I_t_l, const ImageGrid& I_t_r, const ImageGrid& I_t1_l,
                  const ImageGrid& I_t1_r, const ImageGrid& D_t, const ImageGrid& D_t1,
                  const SparseNorm& norm);
double geo_flow_loss(const FlowField& F, const FlowField& F_rigid, const Mask& V);
double consistency_loss(const FlowField& F_syn, const FlowField& F, bool mean = false);
double self_supervised_loss(const FlowField& F_real, const FlowField& F_pseudo, bool mean = false);

// Loss-curve rows for the trainer's CSV emission (step, six terms, total).
// Values print with %.17g so parsing the file reproduces the doubles exactly.
struct LossCurveRow {
    int step = 0;
    LossTerms terms;
    double total = 0.0;
};
void write_loss_curve_csv(const std::string& path, const std::vector<LossCurveRow>& rows);

}  // namespace fogflow
