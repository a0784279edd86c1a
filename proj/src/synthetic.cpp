#include "synthetic.hpp"

#include <cmath>
#include <cstdio>

#include "segflow/errors.hpp"
#include "segflow/rng.hpp"

namespace segflow {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kAntiAlias = 1.0;      // edge softness in pixels
constexpr double kBlobWobble = 0.3;     // radial modulation amplitude for blobs
constexpr double kNoiseScale0 = 11.0;   // base texture wavelength, px
constexpr double kNoiseScale1 = 5.0;

uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double lattice01(uint64_t id, int64_t ix, int64_t iy) {
    uint64_t h = id + 0x9e3779b97f4a7c15ULL;
    h = mix64(h ^ (static_cast<uint64_t>(ix) * 0xc2b2ae3d27d4eb4fULL));
    h = mix64(h ^ (static_cast<uint64_t>(iy) * 0x165667b19e3779f9ULL));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

double value_noise(uint64_t id, double x, double y) {
    const double fx = std::floor(x), fy = std::floor(y);
    const auto ix = static_cast<int64_t>(fx), iy = static_cast<int64_t>(fy);
    const double tx = smoothstep(x - fx), ty = smoothstep(y - fy);
    const double v00 = lattice01(id, ix, iy);
    const double v01 = lattice01(id, ix + 1, iy);
    const double v10 = lattice01(id, ix, iy + 1);
    const double v11 = lattice01(id, ix + 1, iy + 1);
    const double top = v00 + tx * (v01 - v00);
    const double bot = v10 + tx * (v11 - v10);
    return top + ty * (bot - top);
}

struct ProceduralTexture {
    uint64_t id;
    std::array<double, 3> color_a, color_b;

    explicit ProceduralTexture(uint64_t texture_id) : id(texture_id) {
        Rng rng(Rng::derive(texture_id, 0xc0105));
        double dist = 0.0;
        do {
            dist = 0.0;
            for (int c = 0; c < 3; ++c) {
                color_a[c] = rng.uniform();
                color_b[c] = rng.uniform();
                dist += std::abs(color_a[c] - color_b[c]);
            }
        } while (dist < 0.8);  // enough contrast for the photometric loss
    }

    void sample(double x, double y, float* rgb) const {
        const double v = 0.65 * value_noise(id, x / kNoiseScale0, y / kNoiseScale0) +
                         0.35 * value_noise(id ^ 0xabcdef12u, x / kNoiseScale1 + 17.3,
                                            y / kNoiseScale1 + 5.9);
        for (int c = 0; c < 3; ++c)
            rgb[c] = static_cast<float>(color_a[c] + (color_b[c] - color_a[c]) * v);
    }
};

// Squares carry a per-video rotation: lattice-aligned edges would make whole
// pixel columns enter the binary mask at once, which wrecks centroid motion
// fidelity.
double shape_distance(SpriteShape shape, uint64_t texture_id, double dx, double dy, double r0,
                      double cos_rot, double sin_rot) {
    switch (shape) {
        case SpriteShape::disk:
            return std::sqrt(dx * dx + dy * dy) - r0;
        case SpriteShape::square: {
            const double rx = cos_rot * dx + sin_rot * dy;
            const double ry = -sin_rot * dx + cos_rot * dy;
            return std::max(std::abs(rx), std::abs(ry)) - r0;
        }
        case SpriteShape::blob: {
            const double d = std::sqrt(dx * dx + dy * dy);
            if (d < 1e-9) return -r0;
            const double cs = dx / d, sn = dy / d;
            const double wob =
                2.0 * value_noise(texture_id ^ 0xb10bu, cs * 1.5 + 7.37, sn * 1.5 + 13.91) - 1.0;
            return d - r0 * (1.0 + kBlobWobble * wob);
        }
    }
    return 0.0;
}

double max_shape_radius(SpriteShape shape, double r0) {
    switch (shape) {
        case SpriteShape::disk: return r0;
        case SpriteShape::square: return r0 * std::sqrt(2.0);
        case SpriteShape::blob: return r0 * (1.0 + kBlobWobble);
    }
    return r0;
}

}  // namespace

Video generate_video(const SceneSpec& spec) {
    if (spec.frame_size < 16) throw invalid_input("generate_video: frame_size must be >= 16");
    if (spec.num_frames < 2) throw invalid_input("generate_video: num_frames must be >= 2");
    if (spec.sprite_scale <= 0.0)
        throw invalid_input("generate_video: sprite_scale must be > 0");
    const int n = spec.frame_size;
    const double r0 = spec.sprite_scale * n / 2.0;
    const double margin = std::ceil(max_shape_radius(spec.shape, r0) + kAntiAlias) + 1.0;
    if (2.0 * margin >= n - 1)
        throw invalid_input("generate_video: sprite does not fit inside the frame "
                            "(sprite_scale too large)");

    Rng rng(Rng::derive(spec.seed, 0x0b9ec7));
    const double rot = rng.uniform(0.0, 1.5707963267948966);
    const double cos_rot = std::cos(rot), sin_rot = std::sin(rot);
    const double lo = margin, hi = n - 1 - margin;
    double cx = rng.uniform(lo, hi);
    double cy = rng.uniform(lo, hi);
    double vx = spec.object_velocity[0], vy = spec.object_velocity[1];

    // trajectory with reflection; record the velocity actually applied
    std::vector<std::array<double, 2>> centers;
    Video video;
    centers.push_back({cx, cy});
    for (int t = 1; t < spec.num_frames; ++t) {
        double nx = cx + vx, ny = cy + vy;
        for (int guard = 0; guard < 8 && (nx < lo || nx > hi); ++guard) {
            if (nx < lo) nx = 2 * lo - nx;
            if (nx > hi) nx = 2 * hi - nx;
            vx = -vx;
        }
        for (int guard = 0; guard < 8 && (ny < lo || ny > hi); ++guard) {
            if (ny < lo) ny = 2 * lo - ny;
            if (ny > hi) ny = 2 * hi - ny;
            vy = -vy;
        }
        video.object_velocity.push_back({nx - cx, ny - cy});
        video.camera_velocity.push_back({spec.camera_drift[0], spec.camera_drift[1]});
        cx = nx;
        cy = ny;
        centers.push_back({cx, cy});
    }

    const ProceduralTexture sprite_tex(spec.sprite_texture);
    const ProceduralTexture bg_tex(spec.background_texture);
    video.seed = spec.seed;
    for (int t = 0; t < spec.num_frames; ++t) {
        Tensor<float> frame({3, n, n});
        Tensor<uint8_t> mask({n, n});
        Tensor<float> coverage({n, n});
        const double offx = spec.camera_drift[0] * t;
        const double offy = spec.camera_drift[1] * t;
        const double scx = centers[t][0], scy = centers[t][1];
        float rgb[3], srgb[3];
        for (int y = 0; y < n; ++y) {
            for (int x = 0; x < n; ++x) {
                bg_tex.sample(x + offx, y + offy, rgb);
                const double dist = shape_distance(spec.shape, spec.sprite_texture, x - scx,
                                                   y - scy, r0, cos_rot, sin_rot);
                const double alpha =
                    std::min(std::max(0.5 - dist / kAntiAlias, 0.0), 1.0);
                if (alpha > 0.0) {
                    sprite_tex.sample(x - scx, y - scy, srgb);
                    for (int c = 0; c < 3; ++c)
                        frame(c, y, x) = static_cast<float>(alpha * srgb[c] +
                                                            (1.0 - alpha) * rgb[c]);
                } else {
                    for (int c = 0; c < 3; ++c) frame(c, y, x) = rgb[c];
                }
                mask(y, x) = alpha > 0.5 ? 1 : 0;
                coverage(y, x) = static_cast<float>(alpha);
            }
        }
        video.frames.push_back(std::move(frame));
        video.gt_masks.push_back(std::move(mask));
        video.alpha.push_back(std::move(coverage));
    }
    return video;
}

VideoDataset build_corpus(int n_videos, const CorpusRanges& ranges, uint64_t seed,
                          SplitMode split) {
    if (n_videos < 1) throw invalid_input("build_corpus: n_videos must be >= 1");
    VideoDataset ds;
    ds.videos.reserve(static_cast<size_t>(n_videos));
    for (int i = 0; i < n_videos; ++i) {
        Rng rng(Rng::derive(seed, 0x5a3e + static_cast<uint64_t>(i)));
        SceneSpec spec;
        spec.frame_size = ranges.frame_size;
        spec.num_frames = ranges.num_frames;
        spec.seed = Rng::derive(seed, 0x91d0 + static_cast<uint64_t>(i));
        spec.sprite_texture = Rng::derive(spec.seed, 2);
        spec.background_texture = Rng::derive(spec.seed, 3);
        const int shape_pick = static_cast<int>(rng.uniform_index(3));
        spec.shape = shape_pick == 0   ? SpriteShape::disk
                     : shape_pick == 1 ? SpriteShape::square
                                       : SpriteShape::blob;
        spec.sprite_scale = rng.uniform(ranges.sprite_scale[0], ranges.sprite_scale[1]);
        const bool drifts = rng.bernoulli(ranges.drift_fraction);
        for (int attempt = 0; attempt < 64; ++attempt) {
            const double speed = rng.uniform(ranges.object_speed[0], ranges.object_speed[1]);
            const double dir = rng.uniform(0.0, 2.0 * kPi);
            spec.object_velocity = {speed * std::cos(dir), speed * std::sin(dir)};
            if (drifts) {
                const double dmag = rng.uniform(ranges.camera_drift[0], ranges.camera_drift[1]);
                const double ddir = rng.uniform(0.0, 2.0 * kPi);
                spec.camera_drift = {dmag * std::cos(ddir), dmag * std::sin(ddir)};
            } else {
                spec.camera_drift = {0.0, 0.0};
            }
            const double rx = spec.object_velocity[0] - spec.camera_drift[0];
            const double ry = spec.object_velocity[1] - spec.camera_drift[1];
            if (std::sqrt(rx * rx + ry * ry) >= ranges.min_relative_motion) break;
        }
        Video v = generate_video(spec);
        char id[16];
        std::snprintf(id, sizeof(id), "%05d", i);
        v.id = id;
        v.split = split == SplitMode::all_train  ? Split::train
                  : split == SplitMode::all_eval ? Split::eval
                  : (i % 2 == 0 ? Split::train : Split::eval);
        ds.videos.push_back(std::move(v));
    }
    return ds;
}

}  // namespace segflow
