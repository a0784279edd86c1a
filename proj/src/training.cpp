#include "training.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include "segflow/errors.hpp"

namespace segflow {

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw invalid_input("TrainConfig: learning_rate must be > 0");
    if (weight_decay < 0.0) throw invalid_input("TrainConfig: weight_decay must be >= 0");
    if (batch_pairs < 1) throw invalid_input("TrainConfig: batch_pairs must be >= 1");
    if (iterations < 0) throw invalid_input("TrainConfig: iterations must be >= 0");
    if (crop_size < 8 || crop_size % 8 != 0)
        throw invalid_input("TrainConfig: crop_size must be a positive multiple of 8");
    if (hflip_prob < 0.0 || hflip_prob > 1.0)
        throw invalid_input("TrainConfig: hflip_prob must be in [0,1]");
    if (c < 4 && !allow_unstable_c)
        throw invalid_input("TrainConfig: c < 4 makes training unstable; pass the "
                            "allow-unstable-c override to run it anyway");
    if (c < 1) throw invalid_input("TrainConfig: c must be >= 1");
    validate_loss_config(loss);
}

FramePair sample_pair(const VideoDataset& dataset, Rng& rng) {
    if (dataset.videos.empty()) throw invalid_input("sample_pair: empty dataset");
    const auto vi = rng.uniform_index(dataset.videos.size());
    const Video& v = dataset.videos[vi];
    if (v.frames.size() < 2)
        throw invalid_input("sample_pair: video '" + v.id + "' has fewer than 2 frames");
    const auto t = rng.uniform_index(v.frames.size() - 1);
    return {v.frames[t], v.frames[t + 1]};
}

FTensor hflip_image(const FTensor& x) {
    FTensor out(x.shape());
    const int C = x.dim(0), h = x.dim(1), w = x.dim(2);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < h; ++y)
            for (int x0 = 0; x0 < w; ++x0) out(c, y, x0) = x(c, y, w - 1 - x0);
    return out;
}

namespace {

FTensor crop(const FTensor& x, int y0, int x0, int size) {
    FTensor out({x.dim(0), size, size});
    for (int c = 0; c < x.dim(0); ++c)
        for (int y = 0; y < size; ++y)
            for (int xx = 0; xx < size; ++xx) out(c, y, xx) = x(c, y0 + y, x0 + xx);
    return out;
}

}  // namespace

FramePair augment(const FramePair& pair, const TrainConfig& cfg, Rng& rng) {
    if (!pair.a.same_shape(pair.b)) throw invalid_input("augment: frame shape mismatch");
    const int target_short = cfg.crop_size * 9 / 8;
    const int h = pair.a.dim(1), w = pair.a.dim(2);
    const double scale = static_cast<double>(target_short) / std::min(h, w);
    const int nh = std::max(target_short, static_cast<int>(std::lround(h * scale)));
    const int nw = std::max(target_short, static_cast<int>(std::lround(w * scale)));
    if (nh < cfg.crop_size || nw < cfg.crop_size)
        throw invalid_input("augment: frame smaller than crop target after resize");

    FTensor a = bilinear_resize(pair.a, nh, nw);
    FTensor b = bilinear_resize(pair.b, nh, nw);
    const int y0 = static_cast<int>(rng.uniform_index(nh - cfg.crop_size + 1));
    const int x0 = static_cast<int>(rng.uniform_index(nw - cfg.crop_size + 1));
    a = crop(a, y0, x0, cfg.crop_size);
    b = crop(b, y0, x0, cfg.crop_size);
    if (rng.bernoulli(cfg.hflip_prob)) {
        a = hflip_image(a);
        b = hflip_image(b);
    }
    return {std::move(a), std::move(b)};
}

float train_step(ModelState& state, Optimizer& opt, const std::vector<FramePair>& batch,
                 const TrainConfig& cfg, const ModelLayout& layout) {
    if (batch.empty()) throw invalid_input("train_step: empty batch");
    const size_t n_params = layout.total;
    if (state.params.size() != n_params)
        throw invalid_input("train_step: state does not match layout");
    opt.ensure_size(n_params);

    const int B = static_cast<int>(batch.size());
    LossConfig loss_cfg = cfg.loss;
    loss_cfg.symmetric = cfg.symmetric;

    // one gradient buffer per pair; reduction in batch order keeps results
    // identical for any worker count
    std::vector<std::vector<float>> grads(B);
    std::vector<float> losses(B, 0.0f);
    std::vector<std::exception_ptr> errors(B);
    for (auto& g : grads) g.assign(n_params, 0.0f);

    int workers = cfg.threads > 0 ? cfg.threads
                                  : static_cast<int>(std::thread::hardware_concurrency());
    workers = std::max(1, std::min(workers, B));

    auto run_range = [&](int lo, int hi) {
        FWorkspace ws;
        for (int b = lo; b < hi; ++b) {
            try {
                losses[b] = pair_loss_and_grad(layout, state.params.data(), batch[b].a,
                                               batch[b].b, loss_cfg, grads[b].data(), ws);
            } catch (...) {
                errors[b] = std::current_exception();
                return;
            }
        }
    };
    if (workers <= 1) {
        run_range(0, B);
    } else {
        std::vector<std::thread> pool;
        const int chunk = (B + workers - 1) / workers;
        for (int k = 0; k < workers; ++k) {
            const int lo = k * chunk, hi = std::min(B, lo + chunk);
            if (lo < hi) pool.emplace_back(run_range, lo, hi);
        }
        for (auto& t : pool) t.join();
    }

    double loss_sum = 0.0;
    for (int b = 0; b < B; ++b) {
        if (errors[b]) {
            try {
                std::rethrow_exception(errors[b]);
            } catch (const std::exception& e) {
                throw aborted_step("train_step aborted on batch pair " + std::to_string(b) +
                                   " at optimizer step " + std::to_string(opt.t + 1) + ": " +
                                   e.what());
            }
        }
        if (!std::isfinite(losses[b]))
            throw aborted_step("train_step aborted: non-finite loss " +
                               std::to_string(losses[b]) + " on batch pair " +
                               std::to_string(b) + " at optimizer step " +
                               std::to_string(opt.t + 1));
        loss_sum += losses[b];
    }
    const float mean_loss = static_cast<float>(loss_sum / B);

    std::vector<float>& total = grads[0];
    for (int b = 1; b < B; ++b)
        for (size_t i = 0; i < n_params; ++i) total[i] += grads[b][i];
    const float inv_b = 1.0f / static_cast<float>(B);

    opt.t += 1;
    const float lr = static_cast<float>(cfg.learning_rate);
    const float wd = static_cast<float>(cfg.weight_decay);
    const float b1 = static_cast<float>(opt.beta1), b2 = static_cast<float>(opt.beta2);
    const float eps = static_cast<float>(opt.eps);
    const float bc1 = 1.0f - std::pow(b1, static_cast<float>(opt.t));
    const float bc2 = 1.0f - std::pow(b2, static_cast<float>(opt.t));
    float* p = state.params.data();
    for (size_t i = 0; i < n_params; ++i) {
        const float g = total[i] * inv_b + wd * p[i];
        opt.m[i] = b1 * opt.m[i] + (1.0f - b1) * g;
        opt.v[i] = b2 * opt.v[i] + (1.0f - b2) * g * g;
        const float mhat = opt.m[i] / bc1;
        const float vhat = opt.v[i] / bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    return mean_loss;
}

TrainResult train(const VideoDataset& dataset, const TrainConfig& cfg,
                  const std::string& run_dir) {
    cfg.validate();
    if (dataset.videos.empty()) throw invalid_input("train: empty dataset");
    for (const Video& v : dataset.videos)
        if (v.frames.size() < 2)
            throw invalid_input("train: video '" + v.id + "' has fewer than 2 frames");

    const ModelConfig mc = cfg.model_config();
    const ModelLayout layout = build_layout(mc);
    TrainResult result;
    result.state = init_model(mc, cfg.seed);
    Optimizer opt;
    Rng rng(Rng::derive(cfg.seed, 0x7fa11));

    std::ofstream log;
    const bool sink = !run_dir.empty();
    if (sink) {
        std::filesystem::create_directories(run_dir);
        log.open(std::filesystem::path(run_dir) / "loss_log.csv", std::ios::trunc);
        if (!log) throw io_error("cannot open loss log in: " + run_dir);
    }
    const int cadence = cfg.checkpoint_every > 0
                            ? cfg.checkpoint_every
                            : std::max(cfg.iterations / 20, 100);
    auto checkpoint_path = [&](int step) {
        char name[40];
        std::snprintf(name, sizeof(name), "checkpoint_%06d.bin", step);
        return (std::filesystem::path(run_dir) / name).string();
    };

    for (int step = 1; step <= cfg.iterations; ++step) {
        std::vector<FramePair> batch;
        batch.reserve(static_cast<size_t>(cfg.batch_pairs));
        for (int b = 0; b < cfg.batch_pairs; ++b)
            batch.push_back(augment(sample_pair(dataset, rng), cfg, rng));
        float loss;
        try {
            loss = train_step(result.state, opt, batch, cfg, layout);
        } catch (const aborted_step&) {
            if (sink) {
                log << step << ",abort\n";
                log.flush();
            }
            throw;
        }
        result.losses.push_back(loss);
        if (sink) {
            char line[64];
            std::snprintf(line, sizeof(line), "%d,%.9g\n", step, static_cast<double>(loss));
            log << line;
            if (step % 50 == 0) log.flush();
            if (step % cadence == 0) save_checkpoint(checkpoint_path(step), result.state);
        }
    }
    if (sink) {
        log.flush();
        save_checkpoint((std::filesystem::path(run_dir) / "checkpoint_final.bin").string(),
                        result.state);
    }
    return result;
}

}  // namespace segflow
