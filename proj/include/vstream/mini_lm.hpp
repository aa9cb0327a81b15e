#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vstream/nn.hpp"

namespace vstream {

struct LmConfig {
    int vocab_size = 0;
    int dim = 64;
    int num_layers = 4;
    int num_heads = 4;
    int mlp_ratio = 4;
    int max_sequence_length = 512;
    int tap_layer = 2; // 1-based block index whose residual output is exposed

    void validate() const; // throws ConfigError
};

// L x L visibility matrix: allowed(i, j) iff position i may attend to j.
class AttentionMask {
public:
    explicit AttentionMask(std::size_t size);

    std::size_t size() const { return size_; }
    bool allowed(std::size_t i, std::size_t j) const { return bits_[i * size_ + j] != 0; }
    void set(std::size_t i, std::size_t j, bool on) { bits_[i * size_ + j] = on ? 1 : 0; }
    std::span<const std::uint8_t> bits() const { return bits_; }
    std::size_t row_count(std::size_t i) const;

    // Diagonal set and nothing above it.
    bool is_valid() const;

    friend bool operator==(const AttentionMask &, const AttentionMask &) = default;

private:
    std::size_t size_;
    std::vector<std::uint8_t> bits_;
};

AttentionMask build_causal_mask(std::size_t length);

enum class SegmentRole { prompt, memory, clip_features, summarization, global, text };

// A run of positions, either token ids (embedded) or ready D-dim vectors that
// enter right after the embedding stage.
struct Segment {
    SegmentRole role = SegmentRole::text;
    std::vector<int> tokens;
    Tensor vectors;

    static Segment of_tokens(SegmentRole role, std::vector<int> ids);
    static Segment of_vectors(SegmentRole role, Tensor rows);
    std::size_t length() const;
};

struct PackedSequence {
    std::vector<Segment> segments;

    PackedSequence &add(Segment s) {
        segments.push_back(std::move(s));
        return *this;
    }
    std::size_t length() const;
    // Start position of each segment.
    std::vector<std::size_t> offsets() const;
};

struct ForwardOptions {
    // When false, blocks above the tap are skipped and logits stay undefined.
    bool compute_logits = true;
};

struct LmOutput {
    Tensor hidden_at_tap; // [L, D]
    Tensor final_hidden;  // [L, D], residual stream after the last block run
    Tensor logits;        // [L, vocab]
};

struct Decoding {
    enum class Kind { greedy, temperature } kind = Kind::greedy;
    double temperature = 1.0;
    std::uint64_t seed = 0;
    // Non-empty: choose only among these tokens (closed-vocabulary answers).
    std::vector<int> allowed;
};

class MiniLm {
public:
    MiniLm() = default;
    MiniLm(LmConfig config, std::uint64_t seed);

    const LmConfig &config() const { return config_; }

    LmOutput forward(const PackedSequence &seq, const AttentionMask &mask, const ForwardOptions &opts = {}) const;
    std::vector<LmOutput> forward_batch(std::span<const PackedSequence> seqs, std::span<const AttentionMask> masks,
                                        const ForwardOptions &opts = {}) const;

    // Autoregressive continuation under the causal mask. The end token is not
    // included in the result.
    std::vector<int> generate(const PackedSequence &seq, int max_new, const Decoding &decoding, int end_token) const;

    Tensor embed_tokens(std::span<const int> ids) const;

    void collect(ParamList &out, const std::string &prefix) const;

private:
    struct Block {
        LayerNorm ln1;
        Linear qkv;
        Linear out;
        LayerNorm ln2;
        Linear fc1;
        Linear fc2;
    };

    Tensor attention(const Block &b, const Tensor &x, const AttentionMask &mask) const;

    LmConfig config_;
    Tensor token_embedding_;
    Tensor position_embedding_;
    std::vector<Block> blocks_;
    LayerNorm final_norm_;
    Linear head_;
};

} // namespace vstream
