// Command-line front end: corpus generation, training, test-time adaptation,
// inference, evaluation and visualization, all reproducible from a seed.
// Exit codes: 0 success, 1 runtime failure, 2 usage/validation error.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "config.hpp"
#include "data.hpp"
#include "eval.hpp"
#include "pathways.hpp"
#include "png_io.hpp"
#include "synthetic.hpp"
#include "training.hpp"

namespace fs = std::filesystem;
using namespace segflow;

namespace {

template <typename T>
std::string to_str(const T& v) {
    if constexpr (std::is_same_v<T, bool>) return v ? "true" : "false";
    else if constexpr (std::is_same_v<T, std::string>) return v;
    else {
        std::ostringstream os;
        os.precision(17);
        os << v;
        return os.str();
    }
}

template <typename T>
void from_str(const std::string& s, T& out, const std::string& key) {
    if constexpr (std::is_same_v<T, bool>) {
        if (s == "true" || s == "1") out = true;
        else if (s == "false" || s == "0") out = false;
        else throw invalid_input("config value for '" + key + "' is not a boolean: " + s);
    } else if constexpr (std::is_same_v<T, std::string>) {
        out = s;
    } else {
        std::istringstream is(s);
        is >> out;
        if (is.fail()) throw invalid_input("bad config value for '" + key + "': " + s);
    }
}

// Applies precedence (flag > file > default) for one option and records it.
struct Resolver {
    ConfigResolution res;

    explicit Resolver(const std::string& config_path)
        : res(config_path.empty() ? KvMap{} : load_kv_file(config_path)) {}

    template <typename T>
    void apply(const CLI::Option* opt, const std::string& key, T& var) {
        const bool flag_set = opt && opt->count() > 0;
        const std::string* file_value = res.resolve(key, flag_set, to_str(var));
        if (file_value) from_str(*file_value, var, key);
        res.finalize(key, to_str(var));
    }

    void write_to(const std::string& out_dir) {
        fs::create_directories(out_dir);
        res.write((fs::path(out_dir) / "config_resolved.txt").string());
    }
};

void require_path(const std::string& path, const char* what) {
    if (!fs::exists(path))
        throw invalid_input(std::string(what) + " does not exist: " + path);
}

int resolve_channel(int channel, const std::string& checkpoint_path, const ModelState& state) {
    if (channel >= 0) {
        if (channel >= state.config.c)
            throw invalid_input("--channel out of range for this checkpoint");
        return channel;
    }
    const fs::path side = fs::path(checkpoint_path).parent_path() / "selected_channel.txt";
    if (fs::exists(side)) {
        std::ifstream is(side);
        std::string line;
        while (std::getline(is, line))
            if (line.rfind("channel=", 0) == 0) return std::stoi(line.substr(8));
    }
    throw invalid_input("no object channel: pass --channel or keep selected_channel.txt "
                        "next to the checkpoint");
}

VideoDataset subset_by_name(const VideoDataset& ds, const std::string& split) {
    if (split == "all") return ds;
    return ds.subset(split == "eval" ? Split::eval : Split::train);
}

FTensor to_rgb(FTensor img) {
    if (img.dim(0) == 3) return img;
    FTensor rgb({3, img.dim(1), img.dim(2)});
    for (int c = 0; c < 3; ++c)
        for (size_t i = 0; i < img.numel(); ++i) rgb[c * img.numel() + i] = img[i];
    return rgb;
}

// ---------------------------------------------------------------------------

struct GenArgs {
    std::string out, config;
    int videos = 200, frames = 24, frame_size = 64;
    uint64_t seed = 0;
    std::string split = "parity";
    double scale_min = 0.28, scale_max = 0.45;
    double speed_min = 0.8, speed_max = 2.2;
    double drift_min = 0.4, drift_max = 1.2, drift_fraction = 0.5;
};

int run_gen(GenArgs& a, Resolver& r) {
    if (a.videos < 1) throw invalid_input("gen: --videos must be >= 1");
    if (a.split != "parity" && a.split != "train" && a.split != "eval")
        throw invalid_input("gen: --split must be parity, train or eval");
    r.write_to(a.out);
    CorpusRanges ranges;
    ranges.frame_size = a.frame_size;
    ranges.num_frames = a.frames;
    ranges.sprite_scale = {a.scale_min, a.scale_max};
    ranges.object_speed = {a.speed_min, a.speed_max};
    ranges.camera_drift = {a.drift_min, a.drift_max};
    ranges.drift_fraction = a.drift_fraction;
    const SplitMode mode = a.split == "parity"  ? SplitMode::parity
                           : a.split == "train" ? SplitMode::all_train
                                                : SplitMode::all_eval;
    const VideoDataset ds = build_corpus(a.videos, ranges, a.seed, mode);
    write_dataset(a.out, ds);
    std::cout << "generated " << ds.videos.size() << " videos (" << a.frame_size << "x"
              << a.frame_size << ", " << a.frames << " frames) under " << a.out << "\n";
    return 0;
}

struct TrainArgs {
    std::string data, out, config, split = "train";
    TrainConfig cfg;
    bool deterministic = false;
    bool no_symmetric = false;
};

int run_train(TrainArgs& a, Resolver& r) {
    require_path(a.data, "train: dataset path");
    if (a.deterministic) a.cfg.threads = 1;
    a.cfg.symmetric = !a.no_symmetric;
    a.cfg.validate();
    r.write_to(a.out);
    const VideoDataset full = read_dataset(a.data);
    const VideoDataset ds = subset_by_name(full, a.split);
    if (ds.videos.empty()) throw invalid_input("train: no videos in split '" + a.split + "'");
    std::cout << "training on " << ds.videos.size() << " videos for " << a.cfg.iterations
              << " iterations\n";
    const TrainResult result = train(ds, a.cfg, a.out);

    std::vector<const Video*> ptrs;
    for (const Video& v : ds.videos) ptrs.push_back(&v);
    const auto scores = channel_motion_scores(result.state, ptrs, a.cfg.seed);
    const int channel = argmax_channel(scores);
    std::ofstream ch(fs::path(a.out) / "selected_channel.txt");
    ch << "channel=" << channel << "\n";
    ch << "scores=";
    for (size_t i = 0; i < scores.size(); ++i) ch << (i ? "," : "") << scores[i];
    ch << "\n";
    if (!result.losses.empty())
        std::cout << "final loss " << result.losses.back() << "\n";
    std::cout << "object channel " << channel << "\n";
    std::cout << "checkpoints in " << a.out << "\n";
    return 0;
}

struct AdaptArgs {
    std::string checkpoint, data, out, config, video, split = "eval";
    AdaptConfig cfg;
};

int run_adapt(AdaptArgs& a, Resolver& r) {
    require_path(a.checkpoint, "adapt: checkpoint");
    require_path(a.data, "adapt: dataset path");
    r.write_to(a.out);
    const ModelState state = load_checkpoint(a.checkpoint);
    const VideoDataset ds = subset_by_name(read_dataset(a.data), a.split);
    int done = 0;
    for (const Video& v : ds.videos) {
        if (!a.video.empty() && v.id != a.video) continue;
        AdaptConfig cfg = a.cfg;
        cfg.seed = Rng::derive(a.cfg.seed, std::hash<std::string>{}(v.id));
        const ModelState adapted = test_time_adapt(state, v, cfg);
        save_checkpoint((fs::path(a.out) / ("adapted_" + v.id + ".bin")).string(), adapted);
        ++done;
    }
    if (done == 0) throw invalid_input("adapt: no matching video" +
                                       (a.video.empty() ? "s" : " '" + a.video + "'"));
    std::cout << "adapted " << done << " video(s) into " << a.out << "\n";
    return 0;
}

struct InferArgs {
    std::string checkpoint, input, out, config;
    int channel = -1;
};

int run_infer(InferArgs& a, Resolver& r) {
    require_path(a.checkpoint, "infer: checkpoint");
    require_path(a.input, "infer: input path");
    r.write_to(a.out);
    const ModelState state = load_checkpoint(a.checkpoint);
    const int channel = resolve_channel(a.channel, a.checkpoint, state);
    std::vector<fs::path> inputs;
    if (fs::is_directory(a.input)) {
        for (const auto& e : fs::directory_iterator(a.input))
            if (e.path().extension() == ".png") inputs.push_back(e.path());
        std::sort(inputs.begin(), inputs.end());
    } else {
        inputs.push_back(a.input);
    }
    if (inputs.empty()) throw invalid_input("infer: no .png inputs under " + a.input);
    for (const fs::path& p : inputs) {
        FTensor img = to_rgb(read_png(p.string()));
        const int h = img.dim(1), w = img.dim(2);
        const int h8 = std::max(8, (h + 4) / 8 * 8), w8 = std::max(8, (w + 4) / 8 * 8);
        if (h8 != h || w8 != w) img = bilinear_resize(img, h8, w8);
        Tensor<float> sal = infer_saliency(state, img, channel);
        FTensor sal3({1, sal.dim(0), sal.dim(1)});
        for (size_t i = 0; i < sal.numel(); ++i) sal3[i] = sal[i];
        if (h8 != h || w8 != w) sal3 = bilinear_resize(sal3, h, w);
        const std::string name = p.stem().string() + "_saliency.png";
        write_png((fs::path(a.out) / name).string(), sal3);
    }
    std::cout << "wrote " << inputs.size() << " saliency map(s) to " << a.out << "\n";
    return 0;
}

struct EvalArgs {
    std::string checkpoint, data, out, config, mode = "per-image", split = "eval";
    EvalConfig cfg;
};

int run_eval(EvalArgs& a, Resolver& r) {
    if (a.mode != "per-image" && a.mode != "per-video")
        throw invalid_input("eval: --mode must be per-image or per-video");
    require_path(a.checkpoint, "eval: checkpoint");
    require_path(a.data, "eval: dataset path");
    r.write_to(a.out);
    const ModelState state = load_checkpoint(a.checkpoint);
    a.cfg.channel = resolve_channel(a.cfg.channel, a.checkpoint, state);
    const VideoDataset ds = subset_by_name(read_dataset(a.data), a.split);
    const EvalMode mode = a.mode == "per-video" ? EvalMode::per_video : EvalMode::per_image;
    EvalReport report = evaluate(state, ds, mode, a.cfg);
    std::ostringstream echo;
    echo << "checkpoint: " << a.checkpoint << "\nsplit: " << a.split << "\n";
    report.config_echo = echo.str();
    const std::string stem = a.mode == "per-video" ? "report_per_video" : "report_per_image";
    write_report_csv((fs::path(a.out) / (stem + ".csv")).string(), report);
    write_report_text((fs::path(a.out) / (stem + ".txt")).string(), report);
    std::cout << a.mode << " mean jaccard " << report.mean_jaccard << " f_beta "
              << report.mean_f_beta << " mae " << report.mean_mae << " over "
              << report.items.size() << " videos\n";
    return 0;
}

struct VizArgs {
    std::string checkpoint, data, out, config, video;
    int frame = 0, channel = -1;
};

int run_viz(VizArgs& a, Resolver& r) {
    require_path(a.checkpoint, "viz: checkpoint");
    require_path(a.data, "viz: dataset path");
    r.write_to(a.out);
    const ModelState state = load_checkpoint(a.checkpoint);
    const VideoDataset ds = read_dataset(a.data);
    const Video* video = nullptr;
    for (const Video& v : ds.videos)
        if (a.video.empty() || v.id == a.video) {
            video = &v;
            break;
        }
    if (!video) throw invalid_input("viz: video '" + a.video + "' not found");
    if (a.frame < 0 || a.frame + 1 >= static_cast<int>(video->frames.size()))
        throw invalid_input("viz: --frame must name a frame with a successor");
    const ModelOutputs outs =
        model_forward(state, video->frames[a.frame], video->frames[a.frame + 1]);
    const std::string stem = video->id + "_" + std::to_string(a.frame);
    write_png((fs::path(a.out) / (stem + "_overlay.png")).string(),
              overlay_masks(video->frames[a.frame], outs.masks));
    const int factor = video->frames[a.frame].dim(1) / outs.flow.dim(1);
    write_png((fs::path(a.out) / (stem + "_flow.png")).string(),
              visualize_flow(upsample_flow(outs.flow, factor)));
    int channel = -1;
    try {
        channel = resolve_channel(a.channel, a.checkpoint, state);
    } catch (const invalid_input&) {
        // saliency panel is optional when no channel is known
    }
    if (channel >= 0) {
        Tensor<float> sal = infer_saliency(state, video->frames[a.frame], channel);
        FTensor sal3({1, sal.dim(0), sal.dim(1)});
        for (size_t i = 0; i < sal.numel(); ++i) sal3[i] = sal[i];
        write_png((fs::path(a.out) / (stem + "_saliency.png")).string(), sal3);
    }
    std::cout << "wrote visualization panels for " << video->id << " frame " << a.frame
              << " to " << a.out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"segment-flow view synthesis: self-supervised object segmentation"};
    app.require_subcommand(1);

    GenArgs gen;
    TrainArgs tr;
    AdaptArgs ad;
    InferArgs in;
    EvalArgs ev;
    VizArgs vz;

    auto* cgen = app.add_subcommand("gen", "generate a synthetic moving-sprite corpus");
    auto* o_gen_out = cgen->add_option("--out", gen.out)->required();
    auto* o_gen_cfgf = cgen->add_option("--config", gen.config);
    auto* o_gen_videos = cgen->add_option("--videos", gen.videos);
    auto* o_gen_frames = cgen->add_option("--frames", gen.frames);
    auto* o_gen_fsize = cgen->add_option("--frame-size", gen.frame_size);
    auto* o_gen_seed = cgen->add_option("--seed", gen.seed);
    auto* o_gen_split = cgen->add_option("--split", gen.split);
    auto* o_gen_smin = cgen->add_option("--sprite-scale-min", gen.scale_min);
    auto* o_gen_smax = cgen->add_option("--sprite-scale-max", gen.scale_max);
    auto* o_gen_vmin = cgen->add_option("--speed-min", gen.speed_min);
    auto* o_gen_vmax = cgen->add_option("--speed-max", gen.speed_max);
    auto* o_gen_dmin = cgen->add_option("--drift-min", gen.drift_min);
    auto* o_gen_dmax = cgen->add_option("--drift-max", gen.drift_max);
    auto* o_gen_dfrac = cgen->add_option("--drift-fraction", gen.drift_fraction);

    auto* ctr = app.add_subcommand("train", "train from unlabeled video pairs");
    auto* o_tr_data = ctr->add_option("--data", tr.data)->required();
    auto* o_tr_out = ctr->add_option("--out", tr.out)->required();
    auto* o_tr_cfgf = ctr->add_option("--config", tr.config);
    auto* o_tr_iters = ctr->add_option("--iters", tr.cfg.iterations);
    auto* o_tr_batch = ctr->add_option("--batch", tr.cfg.batch_pairs);
    auto* o_tr_lr = ctr->add_option("--lr", tr.cfg.learning_rate);
    auto* o_tr_wd = ctr->add_option("--wd", tr.cfg.weight_decay);
    auto* o_tr_crop = ctr->add_option("--crop", tr.cfg.crop_size);
    auto* o_tr_hflip = ctr->add_option("--hflip", tr.cfg.hflip_prob);
    auto* o_tr_seed = ctr->add_option("--seed", tr.cfg.seed);
    auto* o_tr_c = ctr->add_option("--c", tr.cfg.c);
    auto* o_tr_threads = ctr->add_option("--threads", tr.cfg.threads);
    auto* o_tr_ckpt = ctr->add_option("--ckpt-every", tr.cfg.checkpoint_every);
    auto* o_tr_split = ctr->add_option("--split", tr.split);
    auto* o_tr_det = ctr->add_flag("--deterministic", tr.deterministic,
                                   "single-threaded numerics");
    auto* o_tr_unstable = ctr->add_flag("--allow-unstable-c", tr.cfg.allow_unstable_c);
    auto* o_tr_nosym = ctr->add_flag("--no-symmetric", tr.no_symmetric);

    auto* cad = app.add_subcommand("adapt", "per-video test-time adaptation");
    auto* o_ad_ckpt = cad->add_option("--checkpoint", ad.checkpoint)->required();
    auto* o_ad_data = cad->add_option("--data", ad.data)->required();
    auto* o_ad_out = cad->add_option("--out", ad.out)->required();
    auto* o_ad_cfgf = cad->add_option("--config", ad.config);
    auto* o_ad_video = cad->add_option("--video", ad.video);
    auto* o_ad_split = cad->add_option("--split", ad.split);
    auto* o_ad_iters = cad->add_option("--iters", ad.cfg.iterations);
    auto* o_ad_batch = cad->add_option("--batch", ad.cfg.batch_pairs);
    auto* o_ad_seed = cad->add_option("--seed", ad.cfg.seed);

    auto* cin = app.add_subcommand("infer", "saliency maps for still images");
    auto* o_in_ckpt = cin->add_option("--checkpoint", in.checkpoint)->required();
    auto* o_in_input = cin->add_option("--input", in.input)->required();
    auto* o_in_out = cin->add_option("--out", in.out)->required();
    auto* o_in_cfgf = cin->add_option("--config", in.config);
    auto* o_in_channel = cin->add_option("--channel", in.channel);

    auto* cev = app.add_subcommand("eval", "metrics against ground-truth masks");
    auto* o_ev_ckpt = cev->add_option("--checkpoint", ev.checkpoint)->required();
    auto* o_ev_data = cev->add_option("--data", ev.data)->required();
    auto* o_ev_out = cev->add_option("--out", ev.out)->required();
    auto* o_ev_cfgf = cev->add_option("--config", ev.config);
    auto* o_ev_mode = cev->add_option("--mode", ev.mode);
    auto* o_ev_split = cev->add_option("--split", ev.split);
    auto* o_ev_channel = cev->add_option("--channel", ev.cfg.channel);
    auto* o_ev_seed = cev->add_option("--seed", ev.cfg.seed);
    auto* o_ev_thr = cev->add_option("--jaccard-threshold", ev.cfg.jaccard_threshold);
    auto* o_ev_ai = cev->add_option("--adapt-iters", ev.cfg.adapt.iterations);
    auto* o_ev_ab = cev->add_option("--adapt-batch", ev.cfg.adapt.batch_pairs);
    auto* o_ev_threads = cev->add_option("--threads", ev.cfg.threads);

    auto* cvz = app.add_subcommand("viz", "mask overlay and flow color wheel");
    auto* o_vz_ckpt = cvz->add_option("--checkpoint", vz.checkpoint)->required();
    auto* o_vz_data = cvz->add_option("--data", vz.data)->required();
    auto* o_vz_out = cvz->add_option("--out", vz.out)->required();
    auto* o_vz_cfgf = cvz->add_option("--config", vz.config);
    auto* o_vz_video = cvz->add_option("--video", vz.video);
    auto* o_vz_frame = cvz->add_option("--frame", vz.frame);
    auto* o_vz_channel = cvz->add_option("--channel", vz.channel);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (cgen->parsed()) {
            Resolver r(o_gen_cfgf->count() ? gen.config : "");
            r.apply(o_gen_out, "out", gen.out);
            r.apply(o_gen_videos, "videos", gen.videos);
            r.apply(o_gen_frames, "frames", gen.frames);
            r.apply(o_gen_fsize, "frame_size", gen.frame_size);
            r.apply(o_gen_seed, "seed", gen.seed);
            r.apply(o_gen_split, "split", gen.split);
            r.apply(o_gen_smin, "sprite_scale_min", gen.scale_min);
            r.apply(o_gen_smax, "sprite_scale_max", gen.scale_max);
            r.apply(o_gen_vmin, "speed_min", gen.speed_min);
            r.apply(o_gen_vmax, "speed_max", gen.speed_max);
            r.apply(o_gen_dmin, "drift_min", gen.drift_min);
            r.apply(o_gen_dmax, "drift_max", gen.drift_max);
            r.apply(o_gen_dfrac, "drift_fraction", gen.drift_fraction);
            return run_gen(gen, r);
        }
        if (ctr->parsed()) {
            Resolver r(o_tr_cfgf->count() ? tr.config : "");
            r.apply(o_tr_data, "data", tr.data);
            r.apply(o_tr_out, "out", tr.out);
            r.apply(o_tr_iters, "iters", tr.cfg.iterations);
            r.apply(o_tr_batch, "batch", tr.cfg.batch_pairs);
            r.apply(o_tr_lr, "lr", tr.cfg.learning_rate);
            r.apply(o_tr_wd, "wd", tr.cfg.weight_decay);
            r.apply(o_tr_crop, "crop", tr.cfg.crop_size);
            r.apply(o_tr_hflip, "hflip", tr.cfg.hflip_prob);
            r.apply(o_tr_seed, "seed", tr.cfg.seed);
            r.apply(o_tr_c, "c", tr.cfg.c);
            r.apply(o_tr_threads, "threads", tr.cfg.threads);
            r.apply(o_tr_ckpt, "ckpt_every", tr.cfg.checkpoint_every);
            r.apply(o_tr_split, "split", tr.split);
            r.apply(o_tr_det, "deterministic", tr.deterministic);
            r.apply(o_tr_unstable, "allow_unstable_c", tr.cfg.allow_unstable_c);
            r.apply(o_tr_nosym, "no_symmetric", tr.no_symmetric);
            return run_train(tr, r);
        }
        if (cad->parsed()) {
            Resolver r(o_ad_cfgf->count() ? ad.config : "");
            r.apply(o_ad_ckpt, "checkpoint", ad.checkpoint);
            r.apply(o_ad_data, "data", ad.data);
            r.apply(o_ad_out, "out", ad.out);
            r.apply(o_ad_video, "video", ad.video);
            r.apply(o_ad_split, "split", ad.split);
            r.apply(o_ad_iters, "iters", ad.cfg.iterations);
            r.apply(o_ad_batch, "batch", ad.cfg.batch_pairs);
            r.apply(o_ad_seed, "seed", ad.cfg.seed);
            return run_adapt(ad, r);
        }
        if (cin->parsed()) {
            Resolver r(o_in_cfgf->count() ? in.config : "");
            r.apply(o_in_ckpt, "checkpoint", in.checkpoint);
            r.apply(o_in_input, "input", in.input);
            r.apply(o_in_out, "out", in.out);
            r.apply(o_in_channel, "channel", in.channel);
            return run_infer(in, r);
        }
        if (cev->parsed()) {
            Resolver r(o_ev_cfgf->count() ? ev.config : "");
            r.apply(o_ev_ckpt, "checkpoint", ev.checkpoint);
            r.apply(o_ev_data, "data", ev.data);
            r.apply(o_ev_out, "out", ev.out);
            r.apply(o_ev_mode, "mode", ev.mode);
            r.apply(o_ev_split, "split", ev.split);
            r.apply(o_ev_channel, "channel", ev.cfg.channel);
            r.apply(o_ev_seed, "seed", ev.cfg.seed);
            r.apply(o_ev_thr, "jaccard_threshold", ev.cfg.jaccard_threshold);
            r.apply(o_ev_ai, "adapt_iters", ev.cfg.adapt.iterations);
            r.apply(o_ev_ab, "adapt_batch", ev.cfg.adapt.batch_pairs);
            r.apply(o_ev_threads, "threads", ev.cfg.threads);
            return run_eval(ev, r);
        }
        if (cvz->parsed()) {
            Resolver r(o_vz_cfgf->count() ? vz.config : "");
            r.apply(o_vz_ckpt, "checkpoint", vz.checkpoint);
            r.apply(o_vz_data, "data", vz.data);
            r.apply(o_vz_out, "out", vz.out);
            r.apply(o_vz_video, "video", vz.video);
            r.apply(o_vz_frame, "frame", vz.frame);
            r.apply(o_vz_channel, "channel", vz.channel);
            return run_viz(vz, r);
        }
    } catch (const invalid_input& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
