#ifndef SEGFLOW_PATHWAYS_HPP_
#define SEGFLOW_PATHWAYS_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "nn_kernels.hpp"
#include "segflow/ops.hpp"
#include "segflow/tensor.hpp"

// The two desk-scale pathways and their binding into segment flow:
//   appearance: 4-stage strided conv encoder (stride 8 total) + a two-block
//     prediction head ending in c mask logits at 1/8 resolution
//   motion: a shared stride-8 frame encoder, one correlation stage
//     (radius 4 -> 81 channels), and a dense-connection feature stack
//     ending at d_v = 96 channels
//   readout: a two-layer perceptron mapping pooled motion features to one
//     (dx, dy) per segment; final layer zero-initialized so training starts
//     from zero flow

namespace segflow {

using FTensor = Tensor<float>;
using FWorkspace = nn::Workspace<float>;

struct ModelConfig {
    int c = 5;
    int d_v = 96;
    int radius = 4;
    int app_enc[4] = {32, 64, 128, 128};
    int app_head_width = 128;
    int mot_enc[3] = {16, 32, 32};
    int readout_hidden = 64;

    bool operator==(const ModelConfig&) const = default;
};

struct ParamInfo {
    std::string name;
    std::vector<int> shape;
    size_t offset = 0;
};

struct ConvRef {
    int cin = 0, cout = 0, stride = 1;
    size_t w = 0, b = 0;
};

struct NormRef {
    int ch = 0;
    size_t gamma = 0, beta = 0;
};

struct LinearRef {
    int cin = 0, cout = 0;
    size_t w = 0, b = 0;
};

// Offsets of every learnable tensor inside the flat parameter vector,
// derived deterministically from the configuration.
struct ModelLayout {
    ModelConfig cfg;
    ConvRef app_enc[4];
    NormRef app_enc_norm[4];
    ConvRef app_head[2];
    NormRef app_head_norm[2];
    ConvRef app_out;
    ConvRef mot_enc[3];
    ConvRef mot_stack[5];  // 115->128, 128->128, 256->96, 224->64, 160->32
    LinearRef read1, read2;
    std::vector<ParamInfo> params;
    size_t total = 0;
};

ModelLayout build_layout(const ModelConfig& cfg);
size_t param_count(const ModelConfig& cfg);

// All learnable parameters of both pathways plus the readout head.
struct ModelState {
    ModelConfig config;
    std::vector<float> params;
};

ModelState init_model(const ModelConfig& cfg, uint64_t seed);

void save_checkpoint(const std::string& path, const ModelState& state);
ModelState load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// forward caches
// ---------------------------------------------------------------------------

struct BlockCache {
    FTensor in, conv, norm, act;
    nn::NormCache<float> stats;
};

struct AppearanceCache {
    BlockCache block[6];  // enc0..3, head0..1
    FTensor out_in;       // input of the final conv
    FTensor logits;
};

struct MotionEncCache {
    FTensor in[3];
    FTensor act[3];  // post-ReLU
};

struct MotionStackCache {
    FTensor corr, assembly;
    FTensor l2, l3, cat23, l5, cat35, l7, cat57, l9;
    FTensor v;
};

struct ReadoutCache {
    FTensor pooled;  // [c, d_v]
    FTensor hidden;  // [c, hidden] post-ReLU
    FTensor vecs;    // [c, 2]
};

// ---------------------------------------------------------------------------
// forward passes (pure given parameters)
// ---------------------------------------------------------------------------

FTensor appearance_forward(const ModelLayout& L, const float* p, const FTensor& image,
                           AppearanceCache* cache, FWorkspace& ws);

FTensor motion_encode(const ModelLayout& L, const float* p, const FTensor& image,
                      MotionEncCache* cache, FWorkspace& ws);

FTensor motion_stack_forward(const ModelLayout& L, const float* p, const FTensor& enc_src,
                             const FTensor& enc_dst, MotionStackCache* cache, FWorkspace& ws);

FTensor motion_forward(const ModelLayout& L, const float* p, const FTensor& x_i,
                       const FTensor& x_j, FWorkspace& ws);

FTensor readout_flow(const ModelLayout& L, const float* p, const FTensor& pooled,
                     ReadoutCache* cache);

struct ModelOutputs {
    FTensor masks;      // [c, h/8, w/8]
    FTensor flow_vecs;  // [c, 2]
    FTensor flow;       // [2, h/8, w/8]
};

// Chains the pathways: masks come from x_i only (the source frame).
ModelOutputs model_forward(const ModelState& state, const FTensor& x_i, const FTensor& x_j);

// ---------------------------------------------------------------------------
// training: symmetric reconstruction loss for one frame pair, with gradients
// accumulated into a flat buffer parallel to the parameter vector
// ---------------------------------------------------------------------------

float pair_loss_and_grad(const ModelLayout& L, const float* params, const FTensor& x_i,
                         const FTensor& x_j, const LossConfig& loss_cfg, float* grad,
                         FWorkspace& ws);

// Forward-only symmetric loss (used for logging/validation).
float pair_loss(const ModelLayout& L, const float* params, const FTensor& x_i,
                const FTensor& x_j, const LossConfig& loss_cfg, FWorkspace& ws);

}  // namespace segflow

#endif  // SEGFLOW_PATHWAYS_HPP_
