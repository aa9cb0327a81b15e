#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vstream/streaming.hpp"

namespace vstream {

enum class SimilarityMode { cosine, dot };
enum class SelectMode { train, inference };

struct SelectionResult {
    std::vector<double> similarities;  // s, length K
    std::vector<std::uint8_t> hard;    // multi-hot I, exactly V ones
    std::vector<int> indices;          // selected clips, ascending
    Tensor soft;                       // softmax of the (perturbed) scores, [K]
    Tensor weights;                    // forward = hard, backward = soft; undefined at inference
    double temperature = 0.5;
    std::uint64_t seed = 0;
};

// Final-position tap state of [H_K, question] through the encoder LM. [1, D]
Tensor instruction_indicator(const StreamingEncoder &encoder, const MemoryBank &bank,
                             const std::vector<int> &question);

// s_k between the instruction indicator [1, D] and clip indicators [K, D]. Returns [K].
Tensor similarity(const Tensor &query, const Tensor &indicators, SimilarityMode mode);

// Gumbel top-V. Train mode perturbs s/tau with seeded standard Gumbel noise
// (unless add_noise is false) and emits straight-through weights; inference
// mode takes the top-V of s directly. Ties go to the earlier clip.
SelectionResult gumbel_topk(const Tensor &scores, int count, double temperature, SelectMode mode,
                            std::uint64_t seed, bool add_noise = true);

// Always the last V clips; used to ablate selection.
SelectionResult select_last(const Tensor &scores, int count);

// Selected memories in ascending clip order, [V*T*P, D]. When the selection
// carries straight-through weights each block is scaled by its weight.
Tensor assemble(const MemoryBank &bank, const SelectionResult &selection);

// KL(uniform over gt || softmax(s / tau)).
Tensor selection_kl_loss(const Tensor &scores, std::span<const int> gt_clips, double temperature);

// One JSON object per question for the grounding evaluator.
std::string selection_record(const SelectionResult &selection, const MemoryBank &bank);

} // namespace vstream
