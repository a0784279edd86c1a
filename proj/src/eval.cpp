#include "eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include "segflow/errors.hpp"
#include "segflow/rng.hpp"

namespace segflow {

std::vector<double> channel_motion_scores(const ModelState& state,
                                          const std::vector<const Video*>& videos, uint64_t seed,
                                          int min_pairs) {
    if (videos.empty()) throw invalid_input("channel_motion_scores: no videos given");
    for (const Video* v : videos)
        if (!v || v->frames.size() < 2)
            throw invalid_input("channel_motion_scores: every video needs >= 2 frames");
    Rng rng(Rng::derive(seed, 0x5e1ec7));
    const int n_samples = std::max<int>(min_pairs, static_cast<int>(videos.size()));
    const int c = state.config.c;
    std::vector<double> weighted(c, 0.0), mass_total(c, 0.0);
    for (int s = 0; s < n_samples; ++s) {
        const Video& v = *videos[rng.uniform_index(videos.size())];
        const auto t = rng.uniform_index(v.frames.size() - 1);
        const ModelOutputs out = model_forward(state, v.frames[t], v.frames[t + 1]);
        const size_t plane = static_cast<size_t>(out.masks.dim(1)) * out.masks.dim(2);
        for (int m = 0; m < c; ++m) {
            double mass = 0.0;
            for (size_t p = 0; p < plane; ++p) mass += out.masks[m * plane + p];
            const double mag = std::hypot(static_cast<double>(out.flow_vecs(m, 0)),
                                          static_cast<double>(out.flow_vecs(m, 1)));
            weighted[m] += mass * mag;
            mass_total[m] += mass;
        }
    }
    std::vector<double> scores(c, 0.0);
    for (int m = 0; m < c; ++m)
        scores[m] = mass_total[m] > 0.0 ? weighted[m] / mass_total[m] : 0.0;
    return scores;
}

int argmax_channel(const std::vector<double>& scores) {
    int best = 0;
    for (int m = 1; m < static_cast<int>(scores.size()); ++m)
        if (scores[m] > scores[best]) best = m;  // ties keep the lowest index
    return best;
}

int select_object_channel(const ModelState& state, const std::vector<const Video*>& videos,
                          uint64_t seed, int min_pairs) {
    return argmax_channel(channel_motion_scores(state, videos, seed, min_pairs));
}

Tensor<float> infer_saliency(const ModelState& state, const FTensor& image, int channel) {
    if (channel < 0 || channel >= state.config.c)
        throw invalid_input("infer_saliency: channel " + std::to_string(channel) +
                            " out of range [0," + std::to_string(state.config.c) + ")");
    const ModelLayout L = build_layout(state.config);
    FWorkspace ws;
    const FTensor masks =
        normalize_masks(appearance_forward(L, state.params.data(), image, nullptr, ws));
    const int mh = masks.dim(1), mw = masks.dim(2);
    FTensor one({1, mh, mw});
    const size_t plane = static_cast<size_t>(mh) * mw;
    for (size_t p = 0; p < plane; ++p) one[p] = masks[channel * plane + p];
    const FTensor up = bilinear_resize(one, image.dim(1), image.dim(2));
    Tensor<float> saliency({image.dim(1), image.dim(2)});
    for (size_t i = 0; i < saliency.numel(); ++i) saliency[i] = up[i];
    return saliency;
}

ModelState test_time_adapt(const ModelState& state, const Video& video,
                           const AdaptConfig& cfg) {
    if (video.frames.size() < 2)
        throw invalid_input("test_time_adapt: video needs >= 2 frames");
    ModelState adapted = state;  // the input state stays untouched
    if (cfg.iterations <= 0) return adapted;

    TrainConfig tc = cfg.train;
    tc.c = state.config.c;
    tc.iterations = cfg.iterations;
    tc.batch_pairs = cfg.batch_pairs;
    tc.seed = cfg.seed;
    tc.validate();

    VideoDataset single;
    single.videos.push_back(video);
    single.videos[0].gt_masks.clear();  // adaptation never sees labels

    const ModelLayout layout = build_layout(adapted.config);
    Optimizer opt;
    Rng rng(Rng::derive(cfg.seed, 0xada9));
    for (int step = 1; step <= cfg.iterations; ++step) {
        std::vector<FramePair> batch;
        for (int b = 0; b < cfg.batch_pairs; ++b)
            batch.push_back(augment(sample_pair(single, rng), tc, rng));
        train_step(adapted, opt, batch, tc, layout);
    }
    return adapted;
}

double jaccard(const Tensor<uint8_t>& pred, const Tensor<uint8_t>& gt) {
    if (!pred.same_shape(gt)) throw invalid_input("jaccard: shape mismatch");
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < pred.numel(); ++i) {
        const bool p = pred[i] != 0, g = gt[i] != 0;
        inter += (p && g) ? 1 : 0;
        uni += (p || g) ? 1 : 0;
    }
    if (uni == 0) return 1.0;  // both empty
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double f_beta(const Tensor<float>& pred_soft, const Tensor<uint8_t>& gt, double beta_sq) {
    if (pred_soft.shape() != gt.shape()) throw invalid_input("f_beta: shape mismatch");
    size_t gt_pos = 0;
    for (size_t i = 0; i < gt.numel(); ++i) gt_pos += gt[i] ? 1 : 0;
    if (gt_pos == 0) throw undefined_metric("f_beta: empty ground truth");

    // pixel passes threshold k/255 iff pred > k/255; bucket each pixel by the
    // largest threshold index it still passes, then suffix-sum
    constexpr int kThresholds = 255;
    std::vector<size_t> tp_bucket(kThresholds + 1, 0), pos_bucket(kThresholds + 1, 0);
    for (size_t i = 0; i < pred_soft.numel(); ++i) {
        const double s = static_cast<double>(pred_soft[i]) * kThresholds;
        int limit = static_cast<int>(std::floor(s));
        if (static_cast<double>(limit) == s) limit -= 1;  // pred == k/255 fails "> k/255"
        limit = std::min(limit, kThresholds - 1);
        if (limit < 0) continue;  // passes no threshold
        pos_bucket[limit + 1] += 1;
        if (gt[i]) tp_bucket[limit + 1] += 1;
    }
    double best = 0.0;
    size_t tp = 0, pos = 0;
    for (int k = kThresholds - 1; k >= 0; --k) {
        tp += tp_bucket[k + 1];
        pos += pos_bucket[k + 1];
        const double precision = pos > 0 ? static_cast<double>(tp) / pos : 0.0;
        const double recall = static_cast<double>(tp) / gt_pos;
        const double denom = beta_sq * precision + recall;
        const double f = denom > 0.0 ? (1.0 + beta_sq) * precision * recall / denom : 0.0;
        best = std::max(best, f);
    }
    return best;
}

double mae(const Tensor<float>& pred_soft, const Tensor<uint8_t>& gt) {
    if (pred_soft.shape() != gt.shape()) throw invalid_input("mae: shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < pred_soft.numel(); ++i)
        acc += std::abs(static_cast<double>(pred_soft[i]) - (gt[i] ? 1.0 : 0.0));
    return acc / static_cast<double>(pred_soft.numel());
}

namespace {

EvalItem evaluate_video(const ModelState& state, const Video& video, const EvalConfig& cfg) {
    EvalItem item;
    item.id = video.id;
    double j = 0.0, f = 0.0, m = 0.0;
    int n = 0;
    for (size_t t = 0; t < video.frames.size(); ++t) {
        const Tensor<float> sal = infer_saliency(state, video.frames[t], cfg.channel);
        const Tensor<uint8_t>& gt = video.gt_masks[t];
        Tensor<uint8_t> pred(gt.shape());
        for (size_t i = 0; i < pred.numel(); ++i)
            pred[i] = sal[i] > cfg.jaccard_threshold ? 1 : 0;
        j += jaccard(pred, gt);
        f += f_beta(sal, gt, cfg.beta_sq);
        m += mae(sal, gt);
        ++n;
    }
    item.jaccard = j / n;
    item.f_beta = f / n;
    item.mae = m / n;
    return item;
}

}  // namespace

EvalReport evaluate(const ModelState& state, const VideoDataset& dataset, EvalMode mode,
                    const EvalConfig& cfg) {
    if (cfg.channel < 0 || cfg.channel >= state.config.c)
        throw invalid_input("evaluate: object channel must be selected first");
    std::vector<const Video*> labeled;
    for (const Video& v : dataset.videos)
        if (v.has_gt()) labeled.push_back(&v);
    if (labeled.empty())
        throw invalid_input("evaluate: dataset has no ground-truth masks "
                            "(generate masks/ directories or pick a labeled dataset)");

    EvalReport report;
    report.mode = mode;
    report.channel = cfg.channel;
    report.items.resize(labeled.size());

    auto eval_range = [&](size_t lo, size_t hi) {
        for (size_t k = lo; k < hi; ++k) {
            const Video& video = *labeled[k];
            if (mode == EvalMode::per_video) {
                AdaptConfig ac = cfg.adapt;
                ac.seed = Rng::derive(cfg.seed, 0xe7a1 + k);
                const ModelState adapted = test_time_adapt(state, video, ac);
                report.items[k] = evaluate_video(adapted, video, cfg);
            } else {
                report.items[k] = evaluate_video(state, video, cfg);
            }
        }
    };

    int workers = cfg.threads > 0 ? cfg.threads
                                  : static_cast<int>(std::thread::hardware_concurrency());
    workers = std::max(1, std::min<int>(workers, static_cast<int>(labeled.size())));
    if (workers <= 1 || mode == EvalMode::per_image) {
        eval_range(0, labeled.size());
    } else {
        std::vector<std::thread> pool;
        const size_t chunk = (labeled.size() + workers - 1) / workers;
        for (int w = 0; w < workers; ++w) {
            const size_t lo = static_cast<size_t>(w) * chunk;
            const size_t hi = std::min(labeled.size(), lo + chunk);
            if (lo < hi) pool.emplace_back(eval_range, lo, hi);
        }
        for (auto& t : pool) t.join();
    }

    double js = 0.0, fs = 0.0, ms = 0.0;
    for (const EvalItem& it : report.items) {
        js += it.jaccard;
        fs += it.f_beta;
        ms += it.mae;
    }
    report.mean_jaccard = js / static_cast<double>(report.items.size());
    report.mean_f_beta = fs / static_cast<double>(report.items.size());
    report.mean_mae = ms / static_cast<double>(report.items.size());
    return report;
}

void write_report_csv(const std::string& path, const EvalReport& report) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw io_error("cannot write report: " + path);
    os << "item,jaccard,f_beta,mae\n";
    char line[160];
    for (const EvalItem& it : report.items) {
        std::snprintf(line, sizeof(line), "%s,%.9f,%.9f,%.9f\n", it.id.c_str(), it.jaccard,
                      it.f_beta, it.mae);
        os << line;
    }
    std::snprintf(line, sizeof(line), "mean,%.9f,%.9f,%.9f\n", report.mean_jaccard,
                  report.mean_f_beta, report.mean_mae);
    os << line;
}

void write_report_text(const std::string& path, const EvalReport& report) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw io_error("cannot write report: " + path);
    os << "mode: " << (report.mode == EvalMode::per_video ? "per-video" : "per-image") << "\n";
    os << "object channel: " << report.channel << "\n";
    if (!report.config_echo.empty()) os << report.config_echo;
    os << "videos evaluated: " << report.items.size() << "\n\n";
    char line[160];
    os << "item          jaccard    f_beta     mae\n";
    for (const EvalItem& it : report.items) {
        std::snprintf(line, sizeof(line), "%-12s  %.6f   %.6f   %.6f\n", it.id.c_str(),
                      it.jaccard, it.f_beta, it.mae);
        os << line;
    }
    std::snprintf(line, sizeof(line), "\nmean          %.6f   %.6f   %.6f\n",
                  report.mean_jaccard, report.mean_f_beta, report.mean_mae);
    os << line;
}

FTensor visualize_flow(const FTensor& flow) {
    if (flow.ndim() != 3 || flow.dim(0) != 2)
        throw invalid_input("visualize_flow: flow must be [2,h,w]");
    if (!flow.all_finite()) throw invalid_input("visualize_flow: non-finite flow");
    const int h = flow.dim(1), w = flow.dim(2);
    double max_mag = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            max_mag = std::max(max_mag, std::hypot(static_cast<double>(flow(0, y, x)),
                                                   static_cast<double>(flow(1, y, x))));
    FTensor rgb({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double fx = flow(0, y, x), fy = flow(1, y, x);
            const double mag = std::hypot(fx, fy);
            const double sat = max_mag > 0.0 ? mag / max_mag : 0.0;
            double hue = std::atan2(fy, fx);  // [-pi, pi]
            if (hue < 0.0) hue += 2.0 * 3.14159265358979323846;
            const double hh = hue / (3.14159265358979323846 / 3.0);  // [0,6)
            const int sector = static_cast<int>(hh) % 6;
            const double frac = hh - std::floor(hh);
            const double p = 1.0 - sat;
            const double q = 1.0 - sat * frac;
            const double t = 1.0 - sat * (1.0 - frac);
            double r, g, b;
            switch (sector) {
                case 0: r = 1, g = t, b = p; break;
                case 1: r = q, g = 1, b = p; break;
                case 2: r = p, g = 1, b = t; break;
                case 3: r = p, g = q, b = 1; break;
                case 4: r = t, g = p, b = 1; break;
                default: r = 1, g = p, b = q; break;
            }
            rgb(0, y, x) = static_cast<float>(r);
            rgb(1, y, x) = static_cast<float>(g);
            rgb(2, y, x) = static_cast<float>(b);
        }
    return rgb;
}

FTensor overlay_masks(const FTensor& image, const FTensor& masks) {
    static const float palette[8][3] = {{0.9f, 0.1f, 0.1f}, {0.1f, 0.7f, 0.2f},
                                        {0.15f, 0.3f, 0.9f}, {0.9f, 0.8f, 0.1f},
                                        {0.7f, 0.2f, 0.8f}, {0.1f, 0.8f, 0.8f},
                                        {0.95f, 0.5f, 0.1f}, {0.5f, 0.5f, 0.5f}};
    const FTensor up = bilinear_resize(masks, image.dim(1), image.dim(2));
    const int c = masks.dim(0), h = image.dim(1), w = image.dim(2);
    FTensor out(image.shape());
    const size_t plane = static_cast<size_t>(h) * w;
    for (size_t p = 0; p < plane; ++p) {
        int best = 0;
        for (int m = 1; m < c; ++m)
            if (up[m * plane + p] > up[best * plane + p]) best = m;
        const float* tint = palette[best % 8];
        for (int ch = 0; ch < 3; ++ch)
            out[ch * plane + p] = 0.5f * image[ch * plane + p] + 0.5f * tint[ch];
    }
    return out;
}

}  // namespace segflow
