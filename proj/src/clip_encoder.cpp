#include "vstream/clip_encoder.hpp"

#include <algorithm>

#include "vstream/errors.hpp"

namespace vstream {

namespace {

void require_rank3(const Tensor &t, const char *what) {
    if (t.rank() != 3) {
        throw ShapeError(std::string(what) + " expects [T, N, C], got " + shape_str(t.shape()));
    }
}

// Source token index for member `m` (0..3) of merged token `g`.
std::size_t member_index(std::size_t g, std::size_t m, MergeLayout layout, std::size_t n0, std::size_t width) {
    if (layout == MergeLayout::consecutive) {
        return 4 * g + m;
    }
    const std::size_t half = width / 2;
    const std::size_t gr = g / half, gc = g % half;
    const std::size_t r = 2 * gr + m / 2, c = 2 * gc + m % 2;
    (void)n0;
    return r * width + c;
}

void check_grid(std::size_t n0, MergeLayout layout, std::size_t width) {
    if (layout == MergeLayout::grid_2x2) {
        if (width == 0 || width % 2 != 0 || n0 % width != 0 || (n0 / width) % 2 != 0) {
            throw ShapeError("grid_2x2 merge needs even grid extents, got " + std::to_string(n0) + " tokens, width " +
                             std::to_string(width));
        }
    }
}

} // namespace

Tensor merge_adjacent_tokens(const Tensor &raw, MergeLayout layout, std::size_t grid_width) {
    require_rank3(raw, "merge_adjacent_tokens");
    const auto t = raw.dim(0), n0 = raw.dim(1), c = raw.dim(2);
    if (n0 % 4 != 0) {
        throw ShapeError("merge_adjacent_tokens: token count " + std::to_string(n0) + " is not divisible by 4");
    }
    check_grid(n0, layout, grid_width);
    const auto n = n0 / 4;
    auto src = raw.values();
    std::vector<double> out(src.size());
    for (std::size_t f = 0; f < t; ++f) {
        for (std::size_t g = 0; g < n; ++g) {
            for (std::size_t m = 0; m < 4; ++m) {
                const auto s = member_index(g, m, layout, n0, grid_width);
                std::copy_n(src.begin() + (f * n0 + s) * c, c, out.begin() + (f * n + g) * 4 * c + m * c);
            }
        }
    }
    return Tensor::from({t, n, 4 * c}, std::move(out));
}

Tensor split_merged_tokens(const Tensor &merged, MergeLayout layout, std::size_t grid_width) {
    require_rank3(merged, "split_merged_tokens");
    const auto t = merged.dim(0), n = merged.dim(1), cc = merged.dim(2);
    if (cc % 4 != 0) {
        throw ShapeError("split_merged_tokens: channel count not divisible by 4");
    }
    const auto c = cc / 4, n0 = 4 * n;
    check_grid(n0, layout, grid_width);
    auto src = merged.values();
    std::vector<double> out(src.size());
    for (std::size_t f = 0; f < t; ++f) {
        for (std::size_t g = 0; g < n; ++g) {
            for (std::size_t m = 0; m < 4; ++m) {
                const auto s = member_index(g, m, layout, n0, grid_width);
                std::copy_n(src.begin() + (f * n + g) * cc + m * c, c, out.begin() + (f * n0 + s) * c);
            }
        }
    }
    return Tensor::from({t, n0, c}, std::move(out));
}

SummarizationTokens init_summarization(const Tensor &features, std::size_t tokens_per_frame,
                                       std::span<const std::uint8_t> padded) {
    require_rank3(features, "init_summarization");
    const auto t = features.dim(0), n = features.dim(1), c = features.dim(2);
    if (tokens_per_frame < 1 || tokens_per_frame >= n) {
        throw ShapeError("init_summarization: P=" + std::to_string(tokens_per_frame) + " must lie in [1, " +
                         std::to_string(n) + ")");
    }
    if (!padded.empty() && padded.size() != t) {
        throw ShapeError("init_summarization: padding flags do not match frame count");
    }
    NoGradGuard no_grad;
    auto fv = features.values();
    std::vector<double> pooled;
    pooled.reserve(t * tokens_per_frame * c);
    for (std::size_t f = 0; f < t; ++f) {
        auto frame = Tensor::from({n, c}, std::vector<double>(fv.begin() + f * n * c, fv.begin() + (f + 1) * n * c));
        auto p = adaptive_avg_pool_1d(frame, tokens_per_frame);
        pooled.insert(pooled.end(), p.values().begin(), p.values().end());
    }
    std::vector<double> global(c, 0.0);
    std::size_t used = 0;
    for (std::size_t f = 0; f < t; ++f) {
        if (!padded.empty() && padded[f]) {
            continue;
        }
        ++used;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < c; ++k) {
                global[k] += fv[(f * n + i) * c + k];
            }
        }
    }
    if (used == 0) {
        throw ShapeError("init_summarization: every frame is padding");
    }
    for (auto &g : global) {
        g /= static_cast<double>(used * n);
    }
    return {Tensor::from({t * tokens_per_frame, c}, std::move(pooled)), Tensor::from({1, c}, std::move(global))};
}

AttentionMask build_prefix_mask(const PrefixMaskSpec &spec) {
    auto mask = build_causal_mask(spec.total());
    const auto text_begin = spec.prompt + spec.features + spec.summarization;
    for (std::size_t i = text_begin; i < spec.total(); ++i) {
        for (std::size_t j = 0; j < spec.prompt + spec.features; ++j) {
            mask.set(i, j, false);
        }
    }
    return mask;
}

Tensor flatten_frames(const Tensor &features) {
    require_rank3(features, "flatten_frames");
    return Tensor::from({features.dim(0) * features.dim(1), features.dim(2)}, features.to_vector());
}

Tensor encode_clip(const Tensor &features, const SummarizationTokens &summary, const Projector &projector,
                   const MiniLm &lm) {
    PackedSequence seq;
    seq.add(Segment::of_vectors(SegmentRole::clip_features, projector(flatten_frames(features))));
    seq.add(Segment::of_vectors(SegmentRole::summarization, projector(summary.tokens)));
    const auto len = seq.length();
    const auto tp = summary.tokens.rows();
    auto out = lm.forward(seq, build_causal_mask(len), {.compute_logits = false});
    return slice_rows(out.hidden_at_tap, len - tp, len);
}

Tensor clip_caption_logits(const Tensor &features, const SummarizationTokens &summary, const Projector &projector,
                           const MiniLm &lm, const std::vector<int> &caption, std::size_t *text_offset,
                           const std::vector<int> &prompt) {
    PackedSequence seq;
    seq.add(Segment::of_tokens(SegmentRole::prompt, prompt));
    seq.add(Segment::of_vectors(SegmentRole::clip_features, projector(flatten_frames(features))));
    seq.add(Segment::of_vectors(SegmentRole::summarization, projector(summary.tokens)));
    seq.add(Segment::of_tokens(SegmentRole::text, caption));
    PrefixMaskSpec spec{features.dim(0) * features.dim(1), summary.tokens.rows(), caption.size(), prompt.size()};
    if (text_offset) {
        *text_offset = spec.prompt + spec.features + spec.summarization;
    }
    return lm.forward(seq, build_prefix_mask(spec)).logits;
}

} // namespace vstream
