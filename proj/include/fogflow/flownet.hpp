#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fogflow/ad.hpp"
#include "fogflow/cost_volume.hpp"
#include "fogflow/grid.hpp"
#include "fogflow/param_store.hpp"

namespace fogflow {

// Architecture dims of the small estimator: two stride-2 tanh conv stages down
// to quarter-resolution features, a cost-volume decoder that predicts flow at
// feature resolution (upsampled x4 and scaled x4 back to pixel units), and a
// softplus disparity head off the same features. The spatial-context kernel
// lives in the same store under "sca.kernel".
struct FlowNetConfig {
    int in_channels = 3;
    int enc_mid = 8;         // first encoder stage width
    int feat_channels = 16;  // feature width C
    int radius = 3;          // temporal search radius at feature resolution
    int sca_window = 7;      // spatial-context candidate window
    int sca_k = 4;           // top-k spatial candidates
    double fuse_alpha = 0.25;
    int dec_mid = 32;
    int disp_mid = 8;

    int bins() const {
        const int s = 2 * radius + 1;
        return s * s;
    }
    void validate() const;
    bool operator==(const FlowNetConfig&) const = default;

    static FlowNetConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

// Parameters of one branch (clean, synthetic, or real). Entries are created
// in a fixed order so flattened vectors and checkpoint blobs are stable:
// enc.c1, enc.c2, sca.kernel, dec.c1, dec.c2, disp.c1, disp.c2.
class FlowNet {
public:
    FlowNet() = default;
    FlowNet(const FlowNetConfig& cfg, std::uint64_t seed);

    const FlowNetConfig& config() const { return cfg_; }
    std::uint64_t seed() const { return seed_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    std::size_t param_count() const { return params_.total_size(); }

private:
    FlowNetConfig cfg_;
    ParamStore params_;
    std::uint64_t seed_ = 0;
};

namespace ad {

// How forward builders fetch named tensors onto a tape: as trainable params
// (student passes) or frozen constants (gradient-severed teacher passes).
using Binder = std::function<Var(const std::string&, Shape)>;
Binder trainable(Tape& t, ParamStore& ps);
Binder frozen(Tape& t, const ParamStore& ps);

// Image (h,w,cin) -> features (h/4,w/4,C); extents must divide by 4.
Var encode(const Binder& bind, const FlowNetConfig& cfg, Var frame);
// Fused cost volume -> flow. Quarter-resolution prediction, upsampled x4 and
// multiplied by 4 so values are full-resolution pixel displacements.
Var decode_flow(const Binder& bind, const FlowNetConfig& cfg, Var fused_cv);
// Features -> nonnegative full-resolution disparity (h,w,1), same convention.
Var decode_disp(const Binder& bind, const FlowNetConfig& cfg, Var features);
// encode both frames -> temporal volume (zero init flow) -> spatial-context
// volume -> residual fusion; the normalized volume the decoder reads.
Var forward_cv(const Binder& bind, const FlowNetConfig& cfg, Var frame_t, Var frame_t1,
               double* out_min = nullptr, double* out_max = nullptr);
// forward_cv composed with decode_flow.
Var forward_flow(const Binder& bind, const FlowNetConfig& cfg, Var frame_t, Var frame_t1);
Var forward_disp(const Binder& bind, const FlowNetConfig& cfg, Var frame);

}  // namespace ad

// Plain inference wrappers; frozen params on a scratch tape.
std::pair<ImageGrid, ImageGrid> encode_pair(const ImageGrid& I_t, const ImageGrid& I_t1,
                                            const FlowNet& net);
FlowField forward_flow(const ImageGrid& I_t, const ImageGrid& I_t1, const FlowNet& net);
ImageGrid forward_disp(const ImageGrid& frame, const FlowNet& net);
// Fused normalized volume at feature resolution (norm_min/norm_max filled in).
CostVolume forward_cost_volume(const ImageGrid& I_t, const ImageGrid& I_t1, const FlowNet& net);

// Winner-take-all readout: per pixel the displacement of the largest bin, as
// integer flow at volume resolution (ties toward the smaller bin). The
// non-learned decoder used to probe matching evidence directly.
FlowField argmax_flow(const CostVolume& cv);

struct EmaConfig {
    double lambda = 0.99;  // weight kept on the slow side per update

    void validate() const;
    static EmaConfig from_json(const nlohmann::json& j);
    static EmaConfig load(const std::string& path);
    nlohmann::json to_json() const;
};

// slow <- lambda*slow + (1-lambda)*fast elementwise, for every fast entry
// whose name starts with one of `prefixes` (every entry when none given).
// Entries missing or sized differently on the slow side are errors; `fast`
// is never touched.
void ema_update(ParamStore& slow, const ParamStore& fast, const EmaConfig& cfg,
                const std::vector<std::string>& prefixes = {});

// Checkpoint directory: manifest.json (architecture dims, step, seed, entry
// table) plus params.bin (raw little-endian float32 values in entry order).
struct Checkpoint {
    FlowNet net;
    long long step = 0;
};
void save_checkpoint(const std::string& dir, const FlowNet& net, long long step);
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace fogflow
