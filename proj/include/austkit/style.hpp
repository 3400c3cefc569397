#pragma once

#include <austkit/colorspace.hpp>
#include <austkit/rng.hpp>
#include <austkit/tensor.hpp>

#include <string>
#include <vector>

namespace austkit {

/// Per-pixel style embedding at 1/8 of the input resolution.
struct StyleFeatureMap {
    Tensor features; // [C,h,w]

    int channels() const { return features.dim(0); }
    int h() const { return features.dim(1); }
    int w() const { return features.dim(2); }
};

/// Four 3x3 conv blocks with strides 1,2,2,2; shared by the style branch and
/// the main image branch. All stage outputs (post-ReLU) are exposed so the
/// two feature pyramids can be fused scale by scale.
struct TinyEncoder {
    std::vector<Conv2dParams> layers;

    static constexpr int kStages = 4;

    static std::vector<int> stage_channels(int out_channels) {
        return {16, 32, 64, out_channels};
    }

    static TinyEncoder init(Rng& rng, int in_channels, int out_channels) {
        TinyEncoder e;
        const auto chans = stage_channels(out_channels);
        int prev = in_channels;
        for (int s = 0; s < kStages; ++s) {
            const int c = chans[static_cast<std::size_t>(s)];
            const int fan_in = prev * 9;
            std::vector<double> w(static_cast<std::size_t>(c) * prev * 9);
            const double std = std::sqrt(2.0 / fan_in);
            for (auto& x : w) x = rng.normal(0.0, std);
            e.layers.push_back({Tensor::from_data(std::move(w), {c, prev, 3, 3}, true),
                                Tensor::zeros({c}, true), s == 0 ? 1 : 2, 1});
            prev = c;
        }
        return e;
    }

    /// Stage outputs at scales 1, 1/2, 1/4, 1/8.
    std::vector<Tensor> forward(const Tensor& nchw) const {
        std::vector<Tensor> stages;
        Tensor x = nchw;
        for (const auto& layer : layers) {
            x = relu(conv2d(x, layer));
            stages.push_back(x);
        }
        return stages;
    }
};

/// Style-branch forward pass; returns all pyramid stages, the last of which
/// is the style feature map at 1/8 resolution.
inline std::vector<Tensor> encode_style_stages(const ImagePlane& img, const TinyEncoder& encoder) {
    const int H = img.height(), W = img.width();
    if (H % 8 != 0 || W % 8 != 0)
        throw TensorError("encode_style: input " + std::to_string(H) + "x" + std::to_string(W) +
                          " is not divisible by 8");
    return encoder.forward(reshape(img.pixels, {1, 3, H, W}));
}

inline StyleFeatureMap encode_style(const ImagePlane& img, const TinyEncoder& encoder) {
    auto stages = encode_style_stages(img, encoder);
    const Tensor& last = stages.back();
    return {reshape(last, {last.dim(1), last.dim(2), last.dim(3)})};
}

/// Flatten [C,h,w] features to an [n,C] row matrix of pixel embeddings.
inline Tensor features_as_rows(const StyleFeatureMap& f) {
    const int C = f.channels(), n = f.h() * f.w();
    return transpose(reshape(f.features, {C, n}));
}

/// Average-pool a full-resolution binary mask down by `factor` and
/// re-binarize at 0.5. Nearest-neighbor would drop thin regions.
inline Tensor downsample_mask_binary(const Tensor& mask_hw, int factor) {
    const int H = mask_hw.dim(0), W = mask_hw.dim(1);
    NoGradGuard off;
    Tensor pooled = avg_pool2d(reshape(mask_hw, {1, 1, H, W}), factor, factor);
    std::vector<double> v = pooled.values();
    for (auto& x : v) x = x >= 0.5 ? 1.0 : 0.0;
    return Tensor::from_data(std::move(v), {H / factor, W / factor});
}

struct PairSimilarities {
    Tensor s_inter; // scalar, 0 when degenerate
    Tensor s_intra; // scalar
    bool degenerate = false;
};

/// Mean pairwise cosine similarity across regions (s_inter) and within
/// regions (s_intra), over ordered pairs excluding self-pairs. Uses the
/// normalized-feature sum identity: sums of pairwise cosines reduce to dot
/// products of per-region sums of unit features, so no n^2 loop is needed.
inline PairSimilarities style_pair_similarities(const StyleFeatureMap& f, const Tensor& gt_mask_hw,
                                                double eps = 1e-8) {
    const int n = f.h() * f.w();
    if (gt_mask_hw.numel() != static_cast<std::size_t>(n))
        throw TensorError("style_pair_similarities: mask has " + std::to_string(gt_mask_hw.numel()) +
                          " entries for " + std::to_string(n) + " feature pixels");
    double a = 0.0;
    for (double v : gt_mask_hw.values()) {
        if (v != 0.0 && v != 1.0)
            throw TensorError("style_pair_similarities: ground-truth mask must be binary");
        a += v;
    }
    const double b = static_cast<double>(n) - a;

    Tensor unit = l2_normalize_rows(features_as_rows(f), eps); // [n,C]
    Tensor m = reshape(gt_mask_hw, {1, n});
    Tensor mc = rsub_scalar(m, 1.0);
    Tensor u = matmul(m, unit);  // sum of unit features in the masked region
    Tensor v = matmul(mc, unit); // and in the complement

    PairSimilarities out;
    const double intra_pairs = a * (a - 1.0) + b * (b - 1.0);
    Tensor uu = sum(mul(u, u));
    Tensor vv = sum(mul(v, v));
    // squared norms of each unit row (not exactly 1 under the eps guard)
    Tensor row_sq = sum(mul(matmul(m, mul(unit, unit)), Tensor::full({1, f.channels()}, 1.0)));
    Tensor row_sq_c = sum(mul(matmul(mc, mul(unit, unit)), Tensor::full({1, f.channels()}, 1.0)));
    if (intra_pairs > 0.0) {
        out.s_intra = mul_scalar(add(sub(uu, row_sq), sub(vv, row_sq_c)), 1.0 / intra_pairs);
    } else {
        out.s_intra = Tensor::scalar(1.0);
    }
    if (a == 0.0 || b == 0.0) {
        out.degenerate = true;
        out.s_inter = Tensor::scalar(0.0);
    } else {
        out.s_inter = mul_scalar(sum(mul(u, v)), 1.0 / (a * b));
    }
    return out;
}

/// Triplet-style hinge on the two region similarities.
struct StyleLossReport {
    Tensor s_inter;
    Tensor s_intra;
    Tensor loss; // max(s_inter - s_intra + margin, 0); 0 for degenerate samples
    double margin = 0.0;
    bool degenerate = false;
};

inline StyleLossReport style_loss(const StyleFeatureMap& f, const Tensor& gt_mask_hw, double margin,
                                  double eps = 1e-8) {
    if (margin <= 0.0 || margin > 2.0)
        throw TensorError("style_loss: margin must be in (0,2], got " + std::to_string(margin));
    auto sims = style_pair_similarities(f, gt_mask_hw, eps);
    StyleLossReport rep;
    rep.s_inter = sims.s_inter;
    rep.s_intra = sims.s_intra;
    rep.margin = margin;
    rep.degenerate = sims.degenerate;
    rep.loss = sims.degenerate
                   ? Tensor::scalar(0.0)
                   : relu(add_scalar(sub(sims.s_inter, sims.s_intra), margin));
    return rep;
}

} // namespace austkit
