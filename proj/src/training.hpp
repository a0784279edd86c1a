#ifndef SEGFLOW_TRAINING_HPP_
#define SEGFLOW_TRAINING_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "data.hpp"
#include "pathways.hpp"
#include "segflow/rng.hpp"

namespace segflow {

struct TrainConfig {
    double learning_rate = 1e-4;
    double weight_decay = 1e-6;
    int batch_pairs = 16;
    int iterations = 0;
    int crop_size = 64;
    double hflip_prob = 0.5;
    uint64_t seed = 0;
    int c = 5;
    bool symmetric = true;
    bool allow_unstable_c = false;  // override for the c < 4 instability guard
    int threads = 0;                // 0 = one worker per pair up to hardware limit
    int checkpoint_every = 0;       // 0 = max(iterations/20, 100)
    LossConfig loss;

    ModelConfig model_config() const {
        ModelConfig m;
        m.c = c;
        return m;
    }

    void validate() const;
};

struct FramePair {
    FTensor a, b;
};

// Uniform video, then uniform adjacent frame pair (t, t+1).
FramePair sample_pair(const VideoDataset& dataset, Rng& rng);

// Short edge resized to crop*9/8, one shared random square crop, one shared
// horizontal flip decision: both frames receive exactly the same transform.
FramePair augment(const FramePair& pair, const TrainConfig& cfg, Rng& rng);

FTensor hflip_image(const FTensor& x);

// Adam with L2-style weight decay folded into the gradient.
struct Optimizer {
    std::vector<float> m, v;
    int64_t t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    void ensure_size(size_t n) {
        if (m.size() != n) {
            m.assign(n, 0.0f);
            v.assign(n, 0.0f);
            t = 0;
        }
    }
};

// One optimization step over the batch: symmetric reconstruction loss
// averaged over pairs, backprop, one Adam update. Returns the pre-update
// loss. Per-pair gradients go to per-pair buffers reduced in batch order, so
// results are bitwise identical for any worker count.
float train_step(ModelState& state, Optimizer& opt, const std::vector<FramePair>& batch,
                 const TrainConfig& cfg, const ModelLayout& layout);

struct TrainResult {
    ModelState state;
    std::vector<float> losses;  // one entry per step
};

// Full loop with loss log ("step,loss" lines) and periodic checkpoints when
// run_dir is non-empty. Reproducible bit-for-bit under a fixed seed.
TrainResult train(const VideoDataset& dataset, const TrainConfig& cfg,
                  const std::string& run_dir = "");

}  // namespace segflow

#endif  // SEGFLOW_TRAINING_HPP_
