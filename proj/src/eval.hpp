#ifndef SEGFLOW_EVAL_HPP_
#define SEGFLOW_EVAL_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "data.hpp"
#include "pathways.hpp"
#include "training.hpp"

// Zero-shot inference, object-channel selection, per-video test-time
// adaptation and the segmentation metrics with exact contracts.

namespace segflow {

// Mask-mass-weighted mean flow magnitude per channel over sampled pairs;
// returns the argmax channel, ties broken by lowest index.
int select_object_channel(const ModelState& state, const std::vector<const Video*>& videos,
                          uint64_t seed, int min_pairs = 32);

// Per-channel scores backing the selection (exposed for tests/reports).
std::vector<double> channel_motion_scores(const ModelState& state,
                                          const std::vector<const Video*>& videos, uint64_t seed,
                                          int min_pairs = 32);
int argmax_channel(const std::vector<double>& scores);

// Upsampled probability of one mask channel, values in [0,1], shape [h,w].
Tensor<float> infer_saliency(const ModelState& state, const FTensor& image, int channel);

struct AdaptConfig {
    int iterations = 100;
    int batch_pairs = 2;
    uint64_t seed = 0;
    TrainConfig train;  // learning rate, decay, crop etc.; c/symmetric inherited
};

// Clones the state and continues the self-supervised objective on pairs from
// this video only; the input state is never mutated.
ModelState test_time_adapt(const ModelState& state, const Video& video, const AdaptConfig& cfg);

// |pred % gt| / |pred ∪ gt|, defined as 1 when both masks are empty.
double jaccard(const Tensor<uint8_t>& pred, const Tensor<uint8_t>& gt);

// Maximum F_beta over 255 evenly spaced binarization thresholds k/255.
double f_beta(const Tensor<float>& pred_soft, const Tensor<uint8_t>& gt, double beta_sq = 0.3);

double mae(const Tensor<float>& pred_soft, const Tensor<uint8_t>& gt);

enum class EvalMode { per_image, per_video };

struct EvalItem {
    std::string id;
    double jaccard = 0.0, f_beta = 0.0, mae = 0.0;
};

struct EvalReport {
    EvalMode mode = EvalMode::per_image;
    int channel = -1;
    std::vector<EvalItem> items;  // one per video (mean over its frames)
    double mean_jaccard = 0.0, mean_f_beta = 0.0, mean_mae = 0.0;
    std::string config_echo;
};

struct EvalConfig {
    int channel = -1;  // must be set by the caller (frozen training-corpus choice)
    double jaccard_threshold = 0.5;
    double beta_sq = 0.3;
    uint64_t seed = 0;
    int threads = 0;  // parallel across videos in per_video mode
    AdaptConfig adapt;
};

EvalReport evaluate(const ModelState& state, const VideoDataset& dataset, EvalMode mode,
                    const EvalConfig& cfg);

void write_report_csv(const std::string& path, const EvalReport& report);
void write_report_text(const std::string& path, const EvalReport& report);

// Hue = direction, saturation = magnitude / max magnitude; zero flow is white.
FTensor visualize_flow(const FTensor& flow);

// Argmax-channel tint blended over the frame, for qualitative inspection.
FTensor overlay_masks(const FTensor& image, const FTensor& masks);

}  // namespace segflow

#endif  // SEGFLOW_EVAL_HPP_
