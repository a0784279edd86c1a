#ifndef SEGFLOW_SYNTHETIC_HPP_
#define SEGFLOW_SYNTHETIC_HPP_

#include <array>
#include <cstdint>

#include "data.hpp"

// Deterministic moving-sprite videos with exact ground truth: one textured
// sprite translating over a textured background that may drift (camera
// motion). Textures are procedural value noise so the photometric loss has
// local structure to match.

namespace segflow {

enum class SpriteShape { disk, square, blob };

struct SceneSpec {
    int frame_size = 64;
    int num_frames = 24;
    SpriteShape shape = SpriteShape::disk;
    double sprite_scale = 0.3;  // sprite diameter as a fraction of the frame
    uint64_t sprite_texture = 1;
    uint64_t background_texture = 2;
    std::array<double, 2> object_velocity = {2.0, 0.0};  // px/frame, image space
    std::array<double, 2> camera_drift = {0.0, 0.0};     // px/frame
    uint64_t seed = 0;
};

// Trajectories reflect at margins so the sprite stays fully inside the frame;
// the actually applied per-transition velocities are recorded in the output.
Video generate_video(const SceneSpec& spec);

struct CorpusRanges {
    int frame_size = 64;
    int num_frames = 24;
    std::array<double, 2> sprite_scale = {0.28, 0.45};
    std::array<double, 2> object_speed = {0.8, 2.2};  // magnitude, px/frame
    std::array<double, 2> camera_drift = {0.4, 1.2};  // magnitude when drifting
    double drift_fraction = 0.5;                      // share of videos with camera motion
    double min_relative_motion = 0.5;                 // |v_obj - v_cam| lower bound
};

enum class SplitMode { parity, all_train, all_eval };

VideoDataset build_corpus(int n_videos, const CorpusRanges& ranges, uint64_t seed,
                          SplitMode split = SplitMode::parity);

}  // namespace segflow

#endif  // SEGFLOW_SYNTHETIC_HPP_
