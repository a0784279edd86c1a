#ifndef SEGFLOW_DATA_HPP_
#define SEGFLOW_DATA_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "segflow/tensor.hpp"

namespace segflow {

enum class Split { train, eval };

struct Video {
    std::string id;
    std::vector<Tensor<float>> frames;        // [3,h,w] each, values in [0,1]
    std::vector<Tensor<uint8_t>> gt_masks;    // [h,w] each; empty when unlabeled
    std::vector<Tensor<float>> alpha;         // anti-aliased sprite coverage (generator only,
                                              // never serialized)
    std::vector<std::array<double, 2>> object_velocity;  // per-transition (dx,dy), generator truth
    std::vector<std::array<double, 2>> camera_velocity;
    uint64_t seed = 0;
    Split split = Split::train;

    bool has_gt() const { return !gt_masks.empty(); }
};

struct VideoDataset {
    std::vector<Video> videos;

    std::vector<int> indices(Split s) const {
        std::vector<int> out;
        for (int i = 0; i < static_cast<int>(videos.size()); ++i)
            if (videos[i].split == s) out.push_back(i);
        return out;
    }

    VideoDataset subset(Split s) const {
        VideoDataset out;
        for (const Video& v : videos)
            if (v.split == s) out.videos.push_back(v);
        return out;
    }
};

// Directory layout: <root>/videos/<id>/frames/%05d.png (+ masks/%05d.png when
// labeled) plus a key=value `meta` file. Masks round-trip exactly; frames
// round-trip within 8-bit quantization.
void write_dataset(const std::string& root, const VideoDataset& dataset);
VideoDataset read_dataset(const std::string& root);

}  // namespace segflow

#endif  // SEGFLOW_DATA_HPP_
