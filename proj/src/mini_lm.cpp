#include "vstream/mini_lm.hpp"

#include <algorithm>
#include <cmath>

#include "vstream/errors.hpp"

namespace vstream {

void LmConfig::validate() const {
    auto fail = [](const std::string &field, const std::string &why) { throw ConfigError(field + ": " + why); };
    if (vocab_size <= 0) fail("vocab_size", "must be positive");
    if (dim <= 0) fail("dim", "must be positive");
    if (num_layers <= 0) fail("num_layers", "must be positive");
    if (num_heads <= 0 || dim % num_heads != 0) fail("num_heads", "must divide dim");
    if (mlp_ratio <= 0) fail("mlp_ratio", "must be positive");
    if (max_sequence_length <= 0) fail("max_sequence_length", "must be positive");
    if (tap_layer < 1 || tap_layer > num_layers) fail("tap_layer", "must lie in [1, num_layers]");
}

AttentionMask::AttentionMask(std::size_t size) : size_(size), bits_(size * size, 0) {
    if (size == 0) {
        throw ShapeError("attention mask needs at least one position");
    }
}

std::size_t AttentionMask::row_count(std::size_t i) const {
    return static_cast<std::size_t>(std::count(bits_.begin() + i * size_, bits_.begin() + (i + 1) * size_, 1));
}

bool AttentionMask::is_valid() const {
    for (std::size_t i = 0; i < size_; ++i) {
        if (!allowed(i, i)) {
            return false;
        }
        for (std::size_t j = i + 1; j < size_; ++j) {
            if (allowed(i, j)) {
                return false;
            }
        }
    }
    return true;
}

AttentionMask build_causal_mask(std::size_t length) {
    AttentionMask m(length);
    for (std::size_t i = 0; i < length; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            m.set(i, j, true);
        }
    }
    return m;
}

Segment Segment::of_tokens(SegmentRole role, std::vector<int> ids) {
    Segment s;
    s.role = role;
    s.tokens = std::move(ids);
    return s;
}

Segment Segment::of_vectors(SegmentRole role, Tensor rows) {
    Segment s;
    s.role = role;
    s.vectors = std::move(rows);
    return s;
}

std::size_t Segment::length() const { return vectors.defined() ? vectors.rows() : tokens.size(); }

std::size_t PackedSequence::length() const {
    std::size_t n = 0;
    for (const auto &s : segments) {
        n += s.length();
    }
    return n;
}

std::vector<std::size_t> PackedSequence::offsets() const {
    std::vector<std::size_t> out;
    std::size_t at = 0;
    for (const auto &s : segments) {
        out.push_back(at);
        at += s.length();
    }
    return out;
}

MiniLm::MiniLm(LmConfig config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    const auto d = static_cast<std::size_t>(config_.dim);
    const auto hidden = d * static_cast<std::size_t>(config_.mlp_ratio);
    const double residual_gain = 1.0 / std::sqrt(2.0 * config_.num_layers);
    token_embedding_ = randn_tensor({static_cast<std::size_t>(config_.vocab_size), d}, 0.5, rng);
    position_embedding_ = randn_tensor({static_cast<std::size_t>(config_.max_sequence_length), d}, 0.1, rng);
    for (int l = 0; l < config_.num_layers; ++l) {
        Block b;
        b.ln1 = LayerNorm(d);
        b.qkv = Linear(d, 3 * d, rng);
        b.out = Linear(d, d, rng, residual_gain);
        b.ln2 = LayerNorm(d);
        b.fc1 = Linear(d, hidden, rng);
        b.fc2 = Linear(hidden, d, rng, residual_gain);
        blocks_.push_back(std::move(b));
    }
    final_norm_ = LayerNorm(d);
    head_ = Linear(d, static_cast<std::size_t>(config_.vocab_size), rng);
}

Tensor MiniLm::embed_tokens(std::span<const int> ids) const { return embedding(token_embedding_, ids); }

Tensor MiniLm::attention(const Block &b, const Tensor &x, const AttentionMask &mask) const {
    const auto d = static_cast<std::size_t>(config_.dim);
    const auto heads = static_cast<std::size_t>(config_.num_heads);
    const auto hd = d / heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    auto qkv = b.qkv(x);
    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        auto q = slice_cols(qkv, h * hd, (h + 1) * hd);
        auto k = slice_cols(qkv, d + h * hd, d + (h + 1) * hd);
        auto v = slice_cols(qkv, 2 * d + h * hd, 2 * d + (h + 1) * hd);
        auto p = softmax(scale(matmul_nt(q, k), inv_scale), mask.bits());
        outs.push_back(matmul(p, v));
    }
    return b.out(heads == 1 ? outs.front() : concat_cols(outs));
}

LmOutput MiniLm::forward(const PackedSequence &seq, const AttentionMask &mask, const ForwardOptions &opts) const {
    const auto len = seq.length();
    const auto d = static_cast<std::size_t>(config_.dim);
    if (len == 0) {
        throw ShapeError("forward: empty sequence");
    }
    if (len > static_cast<std::size_t>(config_.max_sequence_length)) {
        throw ShapeError("forward: sequence of " + std::to_string(len) + " exceeds max length " +
                         std::to_string(config_.max_sequence_length));
    }
    if (mask.size() != len) {
        throw ShapeError("forward: mask size " + std::to_string(mask.size()) + " vs sequence length " +
                         std::to_string(len));
    }
    if (!mask.is_valid()) {
        throw ShapeError("forward: attention mask is anticausal or has a blocked diagonal");
    }

    std::vector<Tensor> parts;
    for (const auto &s : seq.segments) {
        if (s.length() == 0) {
            continue;
        }
        if (s.vectors.defined()) {
            if (s.vectors.rank() != 2 || s.vectors.cols() != d) {
                throw ShapeError("forward: injected segment has shape " + shape_str(s.vectors.shape()) +
                                 ", model dim is " + std::to_string(d));
            }
            parts.push_back(s.vectors);
        } else {
            parts.push_back(embed_tokens(s.tokens));
        }
    }
    auto x = parts.size() == 1 ? parts.front() : concat_rows(parts);
    x = add(x, slice_rows(position_embedding_, 0, len));

    LmOutput out;
    const auto tap = static_cast<std::size_t>(config_.tap_layer);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const auto &b = blocks_[l];
        x = add(x, attention(b, b.ln1(x), mask));
        x = add(x, b.fc2(gelu(b.fc1(b.ln2(x)))));
        if (l + 1 == tap) {
            out.hidden_at_tap = x;
            if (!opts.compute_logits) {
                out.final_hidden = x;
                return out;
            }
        }
    }
    out.final_hidden = x;
    out.logits = head_(final_norm_(x));
    return out;
}

std::vector<LmOutput> MiniLm::forward_batch(std::span<const PackedSequence> seqs,
                                            std::span<const AttentionMask> masks, const ForwardOptions &opts) const {
    if (seqs.size() != masks.size()) {
        throw ShapeError("forward_batch: sequence and mask counts differ");
    }
    std::vector<LmOutput> outs;
    outs.reserve(seqs.size());
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        outs.push_back(forward(seqs[i], masks[i], opts));
    }
    return outs;
}

std::vector<int> MiniLm::generate(const PackedSequence &seq, int max_new, const Decoding &decoding,
                                  int end_token) const {
    NoGradGuard no_grad;
    std::vector<int> produced;
    Rng rng(decoding.seed);
    for (int step = 0; step < max_new; ++step) {
        PackedSequence s = seq;
        if (!produced.empty()) {
            s.add(Segment::of_tokens(SegmentRole::text, produced));
        }
        const auto len = s.length();
        auto out = forward(s, build_causal_mask(len));
        const auto vocab = static_cast<std::size_t>(config_.vocab_size);
        auto row = out.logits.values().subspan((len - 1) * vocab, vocab);
        std::vector<int> candidates = decoding.allowed;
        if (candidates.empty()) {
            for (int t = 0; t < config_.vocab_size; ++t) {
                candidates.push_back(t);
            }
        }
        int next = candidates.front();
        if (decoding.kind == Decoding::Kind::greedy) {
            for (int t : candidates) {
                if (row[static_cast<std::size_t>(t)] > row[static_cast<std::size_t>(next)]) {
                    next = t;
                }
            }
        } else {
            std::vector<double> w;
            double mx = -INFINITY;
            for (int t : candidates) {
                mx = std::max(mx, row[static_cast<std::size_t>(t)] / decoding.temperature);
            }
            for (int t : candidates) {
                w.push_back(std::exp(row[static_cast<std::size_t>(t)] / decoding.temperature - mx));
            }
            std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
            next = candidates[pick(rng)];
        }
        if (next == end_token) {
            break;
        }
        produced.push_back(next);
    }
    return produced;
}

void MiniLm::collect(ParamList &out, const std::string &prefix) const {
    out.push_back({prefix + ".token_embedding", token_embedding_});
    out.push_back({prefix + ".position_embedding", position_embedding_});
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const auto p = prefix + ".blocks." + std::to_string(l);
        blocks_[l].ln1.collect(out, p + ".ln1");
        blocks_[l].qkv.collect(out, p + ".qkv");
        blocks_[l].out.collect(out, p + ".out");
        blocks_[l].ln2.collect(out, p + ".ln2");
        blocks_[l].fc1.collect(out, p + ".fc1");
        blocks_[l].fc2.collect(out, p + ".fc2");
    }
    final_norm_.collect(out, prefix + ".final_norm");
    head_.collect(out, prefix + ".head");
}

} // namespace vstream
