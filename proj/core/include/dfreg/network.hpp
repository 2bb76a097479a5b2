#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dfreg/autodiff.hpp"
#include "dfreg/field.hpp"

namespace dfreg {

/// Architecture of the symmetric multiscale registration cascade.
/// channels are listed coarsest to finest; the full-size preset from the
/// source architecture is L=5 with {64,32,16,16,8}, the desk default L=3
/// with {16,16,8}.
struct SrConfig {
    int dims = 2;
    int scales = 3;     // L
    int cascades = 4;   // N
    std::vector<int> channels = {16, 16, 8};
    double sigma_h = 2.0;
    double h_min = 1e-3;
    bool prealign = true;

    double dt() const { return 1.0 / cascades; }
    void validate() const;
};

namespace net {

struct ConvParams {
    ad::Value w, b;
};

struct UnetParams {
    ConvParams enc_in;                   // 1 -> ch[L-1], 3^d kernel, stride 1
    std::vector<ConvParams> enc_down;    // 2^d kernels, stride 2, coarsening
    struct DecoderStage {
        ConvParams up;    // transposed 2^d kernel, stride 2
        ConvParams fuse;  // 3^d kernel over [up, skip] concat
    };
    std::vector<DecoderStage> dec;
};

struct GateParams {
    ad::Value w, b;  // 3^d kernel -> 4*dims gate channels
};

struct ModelParams {
    UnetParams unet;
    std::vector<std::vector<GateParams>> gates;  // [scale][cascade]
};

struct BlockOut {
    ad::Value u;  // increment field [d,S...]
    ad::Value c;  // updated memory
};

struct StepRecord {
    double t = 0.0;
    ad::Value u, h, phi;  // h is evaluated at the post-step phi
};

struct PathTrace {
    ad::Value h_initial;  // h at the field the scale started from
    std::vector<StepRecord> steps;
};

struct ScaleTrace {
    GridShape grid;
    PathTrace fwd, bwd;
    const ad::Value& phi_fwd() const { return fwd.steps.back().phi; }
    const ad::Value& phi_bwd() const { return bwd.steps.back().phi; }
};

struct SrResult {
    ad::Value phi_fwd, phi_bwd;  // full-scale displacements [d,S...]
    std::vector<ScaleTrace> scales;
};

}  // namespace net

/// Shared-weight dual-tower feature extractor plus per-(scale,cascade) gate
/// convolutions; flat name/value views follow registration order and back the
/// checkpoint format.
struct RegistrationModel {
    SrConfig config;
    net::ModelParams params;
    std::vector<std::string> names;
    std::vector<ad::Value> values;

    static RegistrationModel init(const SrConfig& cfg, std::uint64_t seed);
    ad::Value param(const std::string& name) const;
    std::int64_t parameter_count() const;
};

/// Encoder/decoder pyramid; returns L per-scale feature maps coarsest to
/// finest. Image extents must be divisible by 2^(L-1).
std::vector<ad::Value> unet_features(const ad::Value& img, const net::UnetParams& p, const SrConfig& cfg);

/// One convolutional LSTM gate update:
///   f,i,g,o = conv([fx_warped, fy, phi_disp]);
///   c' = sigmoid(f)*c + sigmoid(i)*tanh(g);  u = sigmoid(o)*tanh(c').
net::BlockOut cnn_lstm_block(const ad::Value& fx_warped, const ad::Value& fy, const ad::Value& phi_disp,
                             const ad::Value& c_state, const net::GateParams& gp, int dims);

/// Symmetric multiscale cascade: coarse-to-fine over L scales, N gated
/// increments per scale on each path, both paths through the same gate
/// parameters with the feature roles reversed.
net::SrResult sr_module(const std::vector<ad::Value>& pyr_x, const std::vector<ad::Value>& pyr_y,
                        const SrConfig& cfg, const net::ModelParams& params);

}  // namespace dfreg
