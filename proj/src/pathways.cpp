#include "pathways.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "segflow/errors.hpp"
#include "segflow/rng.hpp"

namespace segflow {

namespace {

size_t shape_numel(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return n;
}

struct LayoutBuilder {
    ModelLayout& L;
    size_t offset = 0;

    size_t add(const std::string& name, std::vector<int> shape) {
        const size_t at = offset;
        offset += shape_numel(shape);
        L.params.push_back({name, std::move(shape), at});
        return at;
    }

    ConvRef conv(const std::string& name, int cin, int cout, int stride) {
        ConvRef r{cin, cout, stride, 0, 0};
        r.w = add(name + ".w", {cout, cin, 3, 3});
        r.b = add(name + ".b", {cout});
        return r;
    }

    NormRef norm(const std::string& name, int ch) {
        NormRef r{ch, 0, 0};
        r.gamma = add(name + ".gamma", {ch});
        r.beta = add(name + ".beta", {ch});
        return r;
    }

    LinearRef linear(const std::string& name, int cin, int cout) {
        LinearRef r{cin, cout, 0, 0};
        r.w = add(name + ".w", {cout, cin});
        r.b = add(name + ".b", {cout});
        return r;
    }
};

FTensor concat_channels(const FTensor& a, const FTensor& b, int extra_zero = 0) {
    const int h = a.dim(1), w = a.dim(2);
    FTensor out({a.dim(0) + b.dim(0) + extra_zero, h, w});
    std::memcpy(out.data(), a.data(), a.numel() * sizeof(float));
    std::memcpy(out.data() + a.numel(), b.data(), b.numel() * sizeof(float));
    return out;
}

void add_into(FTensor& dst, const FTensor& src) {
    for (size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

void validate_frame(const FTensor& x, const char* who) {
    if (x.ndim() != 3 || x.dim(0) != 3)
        throw invalid_input(std::string(who) + ": expected a [3,h,w] image");
    if (x.dim(1) % 8 != 0 || x.dim(2) % 8 != 0)
        throw invalid_input(std::string(who) + ": spatial size must be divisible by 8, got " +
                            std::to_string(x.dim(1)) + "x" + std::to_string(x.dim(2)));
}

}  // namespace

ModelLayout build_layout(const ModelConfig& cfg) {
    if (cfg.c < 1) throw invalid_input("ModelConfig: c must be >= 1");
    if (cfg.radius < 1) throw invalid_input("ModelConfig: radius must be >= 1");
    ModelLayout L;
    L.cfg = cfg;
    LayoutBuilder B{L};

    int cin = 3;
    for (int i = 0; i < 4; ++i) {
        const int cout = cfg.app_enc[i];
        const int stride = i < 3 ? 2 : 1;
        L.app_enc[i] = B.conv("app.enc" + std::to_string(i), cin, cout, stride);
        L.app_enc_norm[i] = B.norm("app.enc" + std::to_string(i) + ".norm", cout);
        cin = cout;
    }
    for (int i = 0; i < 2; ++i) {
        L.app_head[i] = B.conv("app.head" + std::to_string(i), cin, cfg.app_head_width, 1);
        L.app_head_norm[i] = B.norm("app.head" + std::to_string(i) + ".norm",
                                    cfg.app_head_width);
        cin = cfg.app_head_width;
    }
    L.app_out = B.conv("app.out", cin, cfg.c, 1);

    cin = 3;
    for (int i = 0; i < 3; ++i) {
        L.mot_enc[i] = B.conv("mot.enc" + std::to_string(i), cin, cfg.mot_enc[i], 2);
        cin = cfg.mot_enc[i];
    }

    const int side = 2 * cfg.radius + 1;
    const int assembly = side * side + cfg.mot_enc[2] + 2;  // correlation + features + padding
    L.mot_stack[0] = B.conv("mot.stack0", assembly, 128, 1);
    L.mot_stack[1] = B.conv("mot.stack1", 128, 128, 1);
    L.mot_stack[2] = B.conv("mot.stack2", 256, 96, 1);
    L.mot_stack[3] = B.conv("mot.stack3", 224, 64, 1);
    L.mot_stack[4] = B.conv("mot.stack4", 160, 32, 1);
    if (cfg.d_v != 64 + 32)
        throw invalid_input("ModelConfig: d_v must equal 96 (dense stack output width)");

    L.read1 = B.linear("head.fc1", cfg.d_v, cfg.readout_hidden);
    L.read2 = B.linear("head.fc2", cfg.readout_hidden, 2);

    L.total = B.offset;
    return L;
}

size_t param_count(const ModelConfig& cfg) { return build_layout(cfg).total; }

ModelState init_model(const ModelConfig& cfg, uint64_t seed) {
    const ModelLayout L = build_layout(cfg);
    ModelState state;
    state.config = cfg;
    state.params.assign(L.total, 0.0f);
    Rng rng(Rng::derive(seed, 0x5eedf10d));
    for (const ParamInfo& p : L.params) {
        float* dst = state.params.data() + p.offset;
        const size_t n = shape_numel(p.shape);
        const bool is_weight = p.name.ends_with(".w");
        if (p.name.ends_with(".gamma")) {
            for (size_t i = 0; i < n; ++i) dst[i] = 1.0f;
        } else if (is_weight && p.name == "head.fc2.w") {
            // zero-initialized readout: training starts from zero flow
        } else if (is_weight) {
            size_t fan_in = 1;
            for (size_t d = 1; d < p.shape.size(); ++d) fan_in *= p.shape[d];
            const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
            for (size_t i = 0; i < n; ++i) dst[i] = static_cast<float>(std * rng.normal());
        }
        // biases and betas stay zero
    }
    return state;
}

// ---------------------------------------------------------------------------
// appearance pathway
// ---------------------------------------------------------------------------

FTensor appearance_forward(const ModelLayout& L, const float* p, const FTensor& image,
                           AppearanceCache* cache, FWorkspace& ws) {
    validate_frame(image, "appearance_forward");
    AppearanceCache local;
    AppearanceCache& c = cache ? *cache : local;

    FTensor x = image;
    for (int i = 0; i < 6; ++i) {
        const ConvRef& conv = i < 4 ? L.app_enc[i] : L.app_head[i - 4];
        const NormRef& norm = i < 4 ? L.app_enc_norm[i] : L.app_head_norm[i - 4];
        BlockCache& bc = c.block[i];
        bc.in = std::move(x);
        nn::conv3x3_forward(bc.in, p + conv.w, p + conv.b, conv.cout, conv.stride, bc.conv, ws);
        nn::channel_norm_forward(bc.conv, p + norm.gamma, p + norm.beta, bc.act, bc.stats);
        nn::relu_forward(bc.act);
        x = bc.act;
    }
    c.out_in = std::move(x);
    nn::conv3x3_forward(c.out_in, p + L.app_out.w, p + L.app_out.b, L.app_out.cout, 1, c.logits,
                        ws);
    return c.logits;
}

namespace {

void appearance_backward(const ModelLayout& L, const float* p, const AppearanceCache& c,
                         const FTensor& dlogits, float* g, FWorkspace& ws) {
    FTensor dx;
    nn::conv3x3_backward(c.out_in, p + L.app_out.w, L.app_out.cout, 1, dlogits, g + L.app_out.w,
                         g + L.app_out.b, &dx, ws);
    for (int i = 5; i >= 0; --i) {
        const ConvRef& conv = i < 4 ? L.app_enc[i] : L.app_head[i - 4];
        const NormRef& norm = i < 4 ? L.app_enc_norm[i] : L.app_head_norm[i - 4];
        const BlockCache& bc = c.block[i];
        nn::relu_backward(bc.act, dx);
        FTensor dconv;
        nn::channel_norm_backward(bc.conv, p + norm.gamma, bc.stats, dx, g + norm.gamma,
                                  g + norm.beta, dconv);
        FTensor din;
        nn::conv3x3_backward(bc.in, p + conv.w, conv.cout, conv.stride, dconv, g + conv.w,
                             g + conv.b, i > 0 ? &din : nullptr, ws);
        dx = std::move(din);
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// motion pathway
// ---------------------------------------------------------------------------

FTensor motion_encode(const ModelLayout& L, const float* p, const FTensor& image,
                      MotionEncCache* cache, FWorkspace& ws) {
    validate_frame(image, "motion_encode");
    MotionEncCache local;
    MotionEncCache& c = cache ? *cache : local;
    FTensor x = image;
    for (int i = 0; i < 3; ++i) {
        const ConvRef& conv = L.mot_enc[i];
        c.in[i] = std::move(x);
        nn::conv3x3_forward(c.in[i], p + conv.w, p + conv.b, conv.cout, conv.stride, c.act[i],
                            ws);
        nn::relu_forward(c.act[i]);
        x = c.act[i];
    }
    return x;
}

namespace {

void motion_encode_backward(const ModelLayout& L, const float* p, const MotionEncCache& c,
                            FTensor dout, float* g, FWorkspace& ws) {
    for (int i = 2; i >= 0; --i) {
        const ConvRef& conv = L.mot_enc[i];
        nn::relu_backward(c.act[i], dout);
        FTensor din;
        nn::conv3x3_backward(c.in[i], p + conv.w, conv.cout, conv.stride, dout, g + conv.w,
                             g + conv.b, i > 0 ? &din : nullptr, ws);
        dout = std::move(din);
    }
}

}  // namespace

FTensor motion_stack_forward(const ModelLayout& L, const float* p, const FTensor& enc_src,
                             const FTensor& enc_dst, MotionStackCache* cache, FWorkspace& ws) {
    MotionStackCache local;
    MotionStackCache& c = cache ? *cache : local;
    c.corr = correlation_volume(enc_src, enc_dst, L.cfg.radius);
    c.assembly = concat_channels(c.corr, enc_src, /*extra_zero=*/2);

    auto conv_relu = [&](const ConvRef& r, const FTensor& in, FTensor& out) {
        nn::conv3x3_forward(in, p + r.w, p + r.b, r.cout, 1, out, ws);
        nn::relu_forward(out);
    };
    conv_relu(L.mot_stack[0], c.assembly, c.l2);
    conv_relu(L.mot_stack[1], c.l2, c.l3);
    c.cat23 = concat_channels(c.l2, c.l3);
    conv_relu(L.mot_stack[2], c.cat23, c.l5);
    c.cat35 = concat_channels(c.l3, c.l5);
    conv_relu(L.mot_stack[3], c.cat35, c.l7);
    c.cat57 = concat_channels(c.l5, c.l7);
    conv_relu(L.mot_stack[4], c.cat57, c.l9);
    c.v = concat_channels(c.l7, c.l9);
    return c.v;
}

namespace {

// Splits a concat gradient back into its two channel ranges, accumulating.
void split_add(const FTensor& dcat, FTensor& da, FTensor& db) {
    const size_t na = da.numel();
    for (size_t i = 0; i < na; ++i) da[i] += dcat[i];
    for (size_t i = 0; i < db.numel(); ++i) db[i] += dcat[na + i];
}

// Returns gradients w.r.t. the two encoded frames.
std::pair<FTensor, FTensor> motion_stack_backward(const ModelLayout& L, const float* p,
                                                  const FTensor& enc_src, const FTensor& enc_dst,
                                                  const MotionStackCache& c, const FTensor& dv,
                                                  float* g, FWorkspace& ws) {
    const auto shape_of = [](const FTensor& t) { return t.shape(); };
    FTensor dl2(shape_of(c.l2)), dl3(shape_of(c.l3)), dl5(shape_of(c.l5)), dl7(shape_of(c.l7)),
        dl9(shape_of(c.l9));
    split_add(dv, dl7, dl9);

    auto conv_back = [&](const ConvRef& r, const FTensor& in, const FTensor& post,
                         FTensor& dpost, FTensor* din) {
        nn::relu_backward(post, dpost);
        nn::conv3x3_backward(in, p + r.w, r.cout, 1, dpost, g + r.w, g + r.b, din, ws);
    };

    FTensor dcat57;
    conv_back(L.mot_stack[4], c.cat57, c.l9, dl9, &dcat57);
    split_add(dcat57, dl5, dl7);

    FTensor dcat35;
    conv_back(L.mot_stack[3], c.cat35, c.l7, dl7, &dcat35);
    split_add(dcat35, dl3, dl5);

    FTensor dcat23;
    conv_back(L.mot_stack[2], c.cat23, c.l5, dl5, &dcat23);
    split_add(dcat23, dl2, dl3);

    FTensor dl2_from_l3;
    conv_back(L.mot_stack[1], c.l2, c.l3, dl3, &dl2_from_l3);
    add_into(dl2, dl2_from_l3);

    FTensor dassembly;
    conv_back(L.mot_stack[0], c.assembly, c.l2, dl2, &dassembly);

    const int side = 2 * L.cfg.radius + 1;
    const int n_corr = side * side;
    const int h = enc_src.dim(1), w = enc_src.dim(2);
    FTensor dcorr({n_corr, h, w});
    FTensor denc_src(enc_src.shape());
    std::memcpy(dcorr.data(), dassembly.data(), dcorr.numel() * sizeof(float));
    std::memcpy(denc_src.data(), dassembly.data() + dcorr.numel(),
                denc_src.numel() * sizeof(float));
    // trailing zero-placeholder channels carry no gradient

    auto [dsrc_corr, ddst_corr] =
        correlation_volume_backward(enc_src, enc_dst, L.cfg.radius, dcorr);
    add_into(denc_src, dsrc_corr);
    return {std::move(denc_src), std::move(ddst_corr)};
}

}  // namespace

FTensor motion_forward(const ModelLayout& L, const float* p, const FTensor& x_i,
                       const FTensor& x_j, FWorkspace& ws) {
    if (!x_i.same_shape(x_j)) throw invalid_input("motion_forward: frame shape mismatch");
    const FTensor enc_i = motion_encode(L, p, x_i, nullptr, ws);
    const FTensor enc_j = motion_encode(L, p, x_j, nullptr, ws);
    return motion_stack_forward(L, p, enc_i, enc_j, nullptr, ws);
}

// ---------------------------------------------------------------------------
// flow readout head
// ---------------------------------------------------------------------------

FTensor readout_flow(const ModelLayout& L, const float* p, const FTensor& pooled,
                     ReadoutCache* cache) {
    if (pooled.ndim() != 2 || pooled.dim(1) != L.cfg.d_v)
        throw invalid_input("readout_flow: pooled features must be [c, d_v]");
    if (!pooled.all_finite()) throw invalid_input("readout_flow: non-finite pooled features");
    ReadoutCache local;
    ReadoutCache& c = cache ? *cache : local;
    const int n = pooled.dim(0);
    c.pooled = pooled;
    c.hidden = FTensor({n, L.cfg.readout_hidden});
    c.vecs = FTensor({n, 2});
    for (int m = 0; m < n; ++m) {
        float* hid = c.hidden.data() + static_cast<size_t>(m) * L.cfg.readout_hidden;
        nn::linear_forward(pooled.data() + static_cast<size_t>(m) * L.cfg.d_v, p + L.read1.w,
                           p + L.read1.b, L.read1.cin, L.read1.cout, hid);
        for (int k = 0; k < L.cfg.readout_hidden; ++k)
            if (hid[k] < 0.0f) hid[k] = 0.0f;
        nn::linear_forward(hid, p + L.read2.w, p + L.read2.b, L.read2.cin, L.read2.cout,
                           c.vecs.data() + static_cast<size_t>(m) * 2);
    }
    return c.vecs;
}

namespace {

FTensor readout_backward(const ModelLayout& L, const float* p, const ReadoutCache& c,
                         const FTensor& dvecs, float* g) {
    const int n = c.pooled.dim(0);
    FTensor dpooled(c.pooled.shape());
    std::vector<float> dhid(static_cast<size_t>(L.cfg.readout_hidden));
    for (int m = 0; m < n; ++m) {
        std::fill(dhid.begin(), dhid.end(), 0.0f);
        const float* hid = c.hidden.data() + static_cast<size_t>(m) * L.cfg.readout_hidden;
        nn::linear_backward(hid, p + L.read2.w, L.read2.cin, L.read2.cout,
                            dvecs.data() + static_cast<size_t>(m) * 2, g + L.read2.w,
                            g + L.read2.b, dhid.data());
        for (int k = 0; k < L.cfg.readout_hidden; ++k)
            if (hid[k] <= 0.0f) dhid[k] = 0.0f;
        nn::linear_backward(c.pooled.data() + static_cast<size_t>(m) * L.cfg.d_v, p + L.read1.w,
                            L.read1.cin, L.read1.cout, dhid.data(), g + L.read1.w, g + L.read1.b,
                            dpooled.data() + static_cast<size_t>(m) * L.cfg.d_v);
    }
    return dpooled;
}

}  // namespace

// ---------------------------------------------------------------------------
// full model
// ---------------------------------------------------------------------------

ModelOutputs model_forward(const ModelState& state, const FTensor& x_i, const FTensor& x_j) {
    const ModelLayout L = build_layout(state.config);
    FWorkspace ws;
    if (!x_i.same_shape(x_j)) throw invalid_input("model_forward: frame shape mismatch");
    const float* p = state.params.data();
    ModelOutputs out;
    out.masks = normalize_masks(appearance_forward(L, p, x_i, nullptr, ws));
    const FTensor v = motion_forward(L, p, x_i, x_j, ws);
    const FTensor pooled = masked_pool_eps(v, out.masks, static_cast<float>(kMaskMassEpsilon));
    out.flow_vecs = readout_flow(L, p, pooled, nullptr);
    out.flow = compose_segment_flow(out.flow_vecs, out.masks);
    return out;
}

// ---------------------------------------------------------------------------
// symmetric training objective for one pair
// ---------------------------------------------------------------------------

namespace {

struct DirectionCache {
    MotionStackCache stack;
    ReadoutCache readout;
    FTensor v;
    FTensor flow;     // composed at mask resolution
    FTensor flow_up;  // at image resolution
    FTensor xhat;
};

float direction_forward(const ModelLayout& L, const float* p, const FTensor& x_src,
                        const FTensor& x_dst, const FTensor& s_src, const FTensor& enc_src,
                        const FTensor& enc_dst, const LossConfig& loss_cfg, DirectionCache& dc,
                        FWorkspace& ws) {
    dc.v = motion_stack_forward(L, p, enc_src, enc_dst, &dc.stack, ws);
    const FTensor pooled = masked_pool_eps(dc.v, s_src, static_cast<float>(kMaskMassEpsilon));
    const FTensor vecs = readout_flow(L, p, pooled, &dc.readout);
    dc.flow = compose_segment_flow(vecs, s_src);
    if (!dc.flow.all_finite())
        throw invalid_input("non-finite segment flow (diverged parameters?)");
    const int factor = x_src.dim(1) / dc.flow.dim(1);
    dc.flow_up = upsample_flow(dc.flow, factor);
    dc.xhat = warp_backward(x_src, dc.flow_up);
    return ssim_loss(dc.xhat, x_dst, loss_cfg);
}

// Accumulates parameter gradients; returns (dS_src, dEnc_src, dEnc_dst).
std::array<FTensor, 3> direction_backward(const ModelLayout& L, const float* p,
                                          const FTensor& x_src, const FTensor& x_dst,
                                          const FTensor& s_src, const FTensor& enc_src,
                                          const FTensor& enc_dst, const LossConfig& loss_cfg,
                                          const DirectionCache& dc, float* g, FWorkspace& ws) {
    auto [dxhat, dtarget] = ssim_loss_grad(dc.xhat, x_dst, loss_cfg);
    (void)dtarget;  // frames are data, not parameters
    auto [dxsrc, dflow_up] = warp_backward_grad(x_src, dc.flow_up, dxhat);
    (void)dxsrc;
    const int factor = x_src.dim(1) / dc.flow.dim(1);
    const FTensor dflow = upsample_flow_backward(dc.flow.shape(), dflow_up, factor);
    auto [dvecs, ds_compose] = compose_segment_flow_backward(dc.readout.vecs, s_src, dflow);
    const FTensor dpooled = readout_backward(L, p, dc.readout, dvecs, g);
    auto [dv, ds_pool] = masked_pool_backward(dc.v, s_src, dpooled,
                                              static_cast<float>(kMaskMassEpsilon));
    add_into(ds_pool, ds_compose);
    auto [denc_src, denc_dst] =
        motion_stack_backward(L, p, enc_src, enc_dst, dc.stack, dv, g, ws);
    return {std::move(ds_pool), std::move(denc_src), std::move(denc_dst)};
}

}  // namespace

float pair_loss_and_grad(const ModelLayout& L, const float* params, const FTensor& x_i,
                         const FTensor& x_j, const LossConfig& loss_cfg, float* grad,
                         FWorkspace& ws) {
    AppearanceCache app_i, app_j;
    MotionEncCache enc_cache_i, enc_cache_j;
    const FTensor s_i = normalize_masks(appearance_forward(L, params, x_i, &app_i, ws));
    const FTensor enc_i = motion_encode(L, params, x_i, &enc_cache_i, ws);
    const FTensor enc_j = motion_encode(L, params, x_j, &enc_cache_j, ws);

    DirectionCache dij;
    float loss = direction_forward(L, params, x_i, x_j, s_i, enc_i, enc_j, loss_cfg, dij, ws);

    FTensor s_j;
    AppearanceCache* app_j_ptr = nullptr;
    DirectionCache dji;
    if (loss_cfg.symmetric) {
        s_j = normalize_masks(appearance_forward(L, params, x_j, &app_j, ws));
        app_j_ptr = &app_j;
        loss += direction_forward(L, params, x_j, x_i, s_j, enc_j, enc_i, loss_cfg, dji, ws);
    }

    if (!grad) return loss;

    auto [ds_i, denc_i, denc_j] =
        direction_backward(L, params, x_i, x_j, s_i, enc_i, enc_j, loss_cfg, dij, grad, ws);
    if (loss_cfg.symmetric) {
        auto [ds_j, denc_j2, denc_i2] =
            direction_backward(L, params, x_j, x_i, s_j, enc_j, enc_i, loss_cfg, dji, grad, ws);
        add_into(denc_i, denc_i2);
        add_into(denc_j, denc_j2);
        const FTensor dlogits_j = normalize_masks_backward(s_j, ds_j);
        appearance_backward(L, params, *app_j_ptr, dlogits_j, grad, ws);
    }
    const FTensor dlogits_i = normalize_masks_backward(s_i, ds_i);
    appearance_backward(L, params, app_i, dlogits_i, grad, ws);
    motion_encode_backward(L, params, enc_cache_i, std::move(denc_i), grad, ws);
    motion_encode_backward(L, params, enc_cache_j, std::move(denc_j), grad, ws);
    return loss;
}

float pair_loss(const ModelLayout& L, const float* params, const FTensor& x_i,
                const FTensor& x_j, const LossConfig& loss_cfg, FWorkspace& ws) {
    return pair_loss_and_grad(L, params, x_i, x_j, loss_cfg, nullptr, ws);
}

// ---------------------------------------------------------------------------
// checkpoint io
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'G', 'F', 'L', 'O', 'W', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw io_error("checkpoint truncated: " + path);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelState& state) {
    const ModelLayout L = build_layout(state.config);
    if (state.params.size() != L.total)
        throw invalid_input("save_checkpoint: parameter vector does not match configuration");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error("cannot open checkpoint for writing: " + path);
    os.write(kMagic, sizeof(kMagic));
    write_pod(os, kVersion);
    const ModelConfig& c = state.config;
    const int32_t cfg_words[12] = {c.c,          c.d_v,        c.radius,     c.app_enc[0],
                                   c.app_enc[1], c.app_enc[2], c.app_enc[3], c.app_head_width,
                                   c.mot_enc[0], c.mot_enc[1], c.mot_enc[2], c.readout_hidden};
    os.write(reinterpret_cast<const char*>(cfg_words), sizeof(cfg_words));
    write_pod(os, static_cast<uint64_t>(L.params.size()));
    for (const ParamInfo& p : L.params) {
        write_pod(os, static_cast<uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_pod(os, static_cast<uint32_t>(p.shape.size()));
        for (int d : p.shape) write_pod(os, static_cast<int32_t>(d));
        const size_t n = shape_numel(p.shape);
        os.write(reinterpret_cast<const char*>(state.params.data() + p.offset),
                 static_cast<std::streamsize>(n * sizeof(float)));
    }
    if (!os) throw io_error("failed writing checkpoint: " + path);
}

ModelState load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open checkpoint: " + path);
    char magic[8];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, 8) != 0)
        throw io_error("not a segflow checkpoint: " + path);
    const auto version = read_pod<uint32_t>(is, path);
    if (version != kVersion)
        throw io_error("unsupported checkpoint version " + std::to_string(version) + ": " + path);
    int32_t w[12];
    if (!is.read(reinterpret_cast<char*>(w), sizeof(w)))
        throw io_error("checkpoint truncated: " + path);
    ModelConfig cfg;
    cfg.c = w[0];
    cfg.d_v = w[1];
    cfg.radius = w[2];
    for (int i = 0; i < 4; ++i) cfg.app_enc[i] = w[3 + i];
    cfg.app_head_width = w[7];
    for (int i = 0; i < 3; ++i) cfg.mot_enc[i] = w[8 + i];
    cfg.readout_hidden = w[11];

    const ModelLayout L = build_layout(cfg);
    const auto n_tensors = read_pod<uint64_t>(is, path);
    if (n_tensors != L.params.size())
        throw io_error("checkpoint tensor count mismatch: " + path);
    ModelState state;
    state.config = cfg;
    state.params.assign(L.total, 0.0f);
    for (const ParamInfo& p : L.params) {
        const auto name_len = read_pod<uint32_t>(is, path);
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw io_error("checkpoint truncated: " + path);
        if (name != p.name)
            throw io_error("checkpoint tensor order mismatch at '" + name + "': " + path);
        const auto ndim = read_pod<uint32_t>(is, path);
        std::vector<int> shape(ndim);
        for (auto& d : shape) d = read_pod<int32_t>(is, path);
        if (shape != p.shape)
            throw io_error("checkpoint shape mismatch for '" + name + "': " + path);
        const size_t n = shape_numel(shape);
        if (!is.read(reinterpret_cast<char*>(state.params.data() + p.offset),
                     static_cast<std::streamsize>(n * sizeof(float))))
            throw io_error("checkpoint truncated: " + path);
    }
    return state;
}

}  // namespace segflow
