#pragma once

#include <span>
#include <vector>

#include "vstream/mini_lm.hpp"

namespace vstream {

enum class MergeLayout {
    consecutive, // groups of 4 consecutive tokens
    grid_2x2,    // 2x2 windows over a row-major token grid
};

// [T, N0, c] -> [T, N0/4, 4c]. Channel order inside a merged token follows the
// group order of its source tokens.
Tensor merge_adjacent_tokens(const Tensor &raw, MergeLayout layout = MergeLayout::consecutive,
                             std::size_t grid_width = 0);
// Inverse of merge_adjacent_tokens.
Tensor split_merged_tokens(const Tensor &merged, MergeLayout layout = MergeLayout::consecutive,
                           std::size_t grid_width = 0);

struct SummarizationTokens {
    Tensor tokens; // [T*P, C], frame-major
    Tensor global; // [1, C]
};

// Per-frame adaptive pooling of N tokens into P, plus the global mean token.
// Frames flagged in `padded` are excluded from the global mean.
SummarizationTokens init_summarization(const Tensor &features, std::size_t tokens_per_frame,
                                       std::span<const std::uint8_t> padded = {});

struct PrefixMaskSpec {
    std::size_t features = 0;      // TN
    std::size_t summarization = 0; // TP
    std::size_t text = 0;          // TT
    std::size_t prompt = 0;        // optional time prompt placed before the features
    std::size_t total() const { return prompt + features + summarization + text; }
};

// Causal mask where text rows cannot see the prompt or feature span.
AttentionMask build_prefix_mask(const PrefixMaskSpec &spec);

// [T, N, C] -> [T*N, C] as an input (no history) tensor.
Tensor flatten_frames(const Tensor &features);

// Single-clip condensation: pack [project(F), project(S)] under the causal mask
// and return the tap-layer rows of the last T*P positions.
Tensor encode_clip(const Tensor &features, const SummarizationTokens &summary, const Projector &projector,
                   const MiniLm &lm);

// Prefix-task pass used to train single-clip condensation:
// [prompt, project(F), project(S), caption]. Returns the logits of the whole
// packed sequence; `text_offset` receives the start of the text span.
Tensor clip_caption_logits(const Tensor &features, const SummarizationTokens &summary, const Projector &projector,
                           const MiniLm &lm, const std::vector<int> &caption, std::size_t *text_offset = nullptr,
                           const std::vector<int> &prompt = {});

} // namespace vstream
