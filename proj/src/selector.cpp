#include "vstream/selector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "vstream/errors.hpp"

namespace vstream {

Tensor instruction_indicator(const StreamingEncoder &encoder, const MemoryBank &bank,
                             const std::vector<int> &question) {
    if (question.empty()) {
        throw DataError("instruction_indicator: empty question");
    }
    PackedSequence seq;
    seq.add(Segment::of_vectors(SegmentRole::memory, bank.last().memory));
    seq.add(Segment::of_tokens(SegmentRole::text, question));
    const auto len = seq.length();
    auto out = encoder.lm().forward(seq, build_causal_mask(len), {.compute_logits = false});
    return slice_rows(out.hidden_at_tap, len - 1, len);
}

Tensor similarity(const Tensor &query, const Tensor &indicators, SimilarityMode mode) {
    if (query.rank() != 2 || query.rows() != 1 || indicators.rank() != 2 || indicators.cols() != query.cols()) {
        throw ShapeError("similarity: query " + shape_str(query.shape()) + " vs indicators " +
                         shape_str(indicators.shape()));
    }
    const auto k = indicators.rows();
    if (mode == SimilarityMode::cosine) {
        return reshape(matmul_nt(l2_normalize_rows(query), l2_normalize_rows(indicators)), {k});
    }
    return reshape(matmul_nt(query, indicators), {k});
}

namespace {

std::vector<int> top_indices(const std::vector<double> &z, int count) {
    std::vector<int> order(z.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return z[a] > z[b]; });
    order.resize(static_cast<std::size_t>(count));
    std::sort(order.begin(), order.end());
    return order;
}

void check_count(std::size_t k, int count) {
    if (count < 1 || static_cast<std::size_t>(count) > k) {
        throw ShapeError("selection count V=" + std::to_string(count) + " outside [1, " + std::to_string(k) + "]");
    }
}

} // namespace

SelectionResult gumbel_topk(const Tensor &scores, int count, double temperature, SelectMode mode,
                            std::uint64_t seed, bool add_noise) {
    const auto k = scores.numel();
    check_count(k, count);
    if (!(temperature > 0.0)) {
        throw ConfigError("selection_temperature: must be positive");
    }
    SelectionResult r;
    r.similarities = scores.to_vector();
    r.temperature = temperature;
    r.seed = seed;

    if (mode == SelectMode::inference) {
        r.indices = top_indices(r.similarities, count);
        r.soft = softmax(scale(reshape(scores, {1, k}), 1.0 / temperature));
        r.soft = reshape(r.soft, {k});
    } else {
        std::vector<double> noise(k, 0.0);
        if (add_noise) {
            std::mt19937_64 rng(seed);
            std::uniform_real_distribution<double> unif(0.0, 1.0);
            for (auto &g : noise) {
                double u = unif(rng);
                while (u <= 0.0) {
                    u = unif(rng);
                }
                g = -std::log(-std::log(u));
            }
        }
        auto z = add(scale(scores, 1.0 / temperature), Tensor::from({k}, noise));
        r.indices = top_indices(z.to_vector(), count);
        r.soft = reshape(softmax(reshape(z, {1, k})), {k});
    }
    r.hard.assign(k, 0);
    for (int i : r.indices) {
        r.hard[static_cast<std::size_t>(i)] = 1;
    }
    if (mode == SelectMode::train) {
        std::vector<double> hard(r.hard.begin(), r.hard.end());
        r.weights = straight_through(hard, r.soft);
    }
    return r;
}

SelectionResult select_last(const Tensor &scores, int count) {
    const auto k = scores.numel();
    check_count(k, count);
    SelectionResult r;
    r.similarities = scores.to_vector();
    r.hard.assign(k, 0);
    for (std::size_t i = k - static_cast<std::size_t>(count); i < k; ++i) {
        r.hard[i] = 1;
        r.indices.push_back(static_cast<int>(i));
    }
    return r;
}

Tensor assemble(const MemoryBank &bank, const SelectionResult &selection) {
    const auto ones = std::count(selection.hard.begin(), selection.hard.end(), std::uint8_t{1});
    if (ones == 0 || static_cast<std::size_t>(ones) != selection.indices.size()) {
        throw ShapeError("assemble: selection is not a consistent multi-hot index");
    }
    std::vector<Tensor> blocks;
    blocks.reserve(selection.indices.size());
    for (int k : selection.indices) {
        if (k < 0 || static_cast<std::size_t>(k) >= bank.size()) {
            throw DataError("assemble: clip index " + std::to_string(k) + " outside bank of " +
                            std::to_string(bank.size()));
        }
        const auto &h = bank.entries[static_cast<std::size_t>(k)].memory;
        if (selection.weights.defined()) {
            blocks.push_back(mul_scalar(h, element(selection.weights, static_cast<std::size_t>(k))));
        } else {
            blocks.push_back(h);
        }
    }
    return blocks.size() == 1 ? blocks.front() : concat_rows(blocks);
}

Tensor selection_kl_loss(const Tensor &scores, std::span<const int> gt_clips, double temperature) {
    if (gt_clips.empty()) {
        throw DataError("selection_kl_loss: empty ground truth");
    }
    const auto k = scores.numel();
    std::vector<double> target(k, 0.0);
    std::vector<int> unique(gt_clips.begin(), gt_clips.end());
    std::sort(unique.begin(), unique.end());
    unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
    for (int c : unique) {
        if (c < 0 || static_cast<std::size_t>(c) >= k) {
            throw DataError("selection_kl_loss: ground-truth clip " + std::to_string(c) + " outside [0, " +
                            std::to_string(k) + ")");
        }
        target[static_cast<std::size_t>(c)] = 1.0 / static_cast<double>(unique.size());
    }
    auto pred = softmax(scale(reshape(scores, {1, k}), 1.0 / temperature));
    return kl_divergence(target, pred);
}

std::string selection_record(const SelectionResult &selection, const MemoryBank &bank) {
    nlohmann::json j;
    j["similarities"] = selection.similarities;
    j["selected"] = selection.indices;
    auto spans = nlohmann::json::array();
    for (int k : selection.indices) {
        const auto &s = bank.entries.at(static_cast<std::size_t>(k)).span;
        spans.push_back({s.start, s.end});
    }
    j["spans"] = spans;
    j["temperature"] = selection.temperature;
    j["seed"] = selection.seed;
    return j.dump();
}

} // namespace vstream
