#include "vstream/streaming.hpp"

#include <bit>
#include <fstream>

#include "vstream/container.hpp"
#include "vstream/errors.hpp"
#include "vstream/tokenizer.hpp"

namespace vstream {

namespace {

constexpr std::array<char, 4> kBankMagic{'V', 'S', 'M', 'B'};
constexpr std::uint8_t kBankVersion = 1;

struct Fnv {
    std::uint64_t h = 1469598103934665603ull;
    void bytes(const void *p, std::size_t n) {
        auto b = static_cast<const unsigned char *>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h = (h ^ b[i]) * 1099511628211ull;
        }
    }
    void u64(std::uint64_t v) { bytes(&v, sizeof v); }
};

void append_words(std::vector<int> &out, std::string_view text) {
    auto ids = tokenize(text);
    out.insert(out.end(), ids.begin(), ids.end());
}

} // namespace

long VideoStream::duration_seconds() const {
    if (fps <= 0) {
        throw DataError("frame rate must be positive");
    }
    return static_cast<long>(frame_count()) / fps;
}

std::vector<RawClip> segment_video(const VideoStream &stream, int frames_per_clip) {
    if (frames_per_clip <= 0) {
        throw ConfigError("frames_per_clip: must be positive");
    }
    if (stream.frame_count() == 0) {
        throw DataError("segment_video: empty stream");
    }
    if (stream.fps <= 0) {
        throw DataError("segment_video: frame rate must be positive");
    }
    const auto total = stream.frame_count();
    const auto t = static_cast<std::size_t>(frames_per_clip);
    const auto n0 = stream.frames.dim(1), c = stream.frames.dim(2);
    const auto frame_size = n0 * c;
    auto fv = stream.frames.values();
    const auto clips = (total + t - 1) / t;
    std::vector<RawClip> out;
    out.reserve(clips);
    for (std::size_t k = 0; k < clips; ++k) {
        RawClip clip;
        clip.index = static_cast<int>(k);
        std::vector<double> values(t * frame_size);
        clip.padded.assign(t, 0);
        for (std::size_t f = 0; f < t; ++f) {
            auto src = k * t + f;
            if (src >= total) {
                src = total - 1;
                clip.padded[f] = 1;
            }
            std::copy_n(fv.begin() + src * frame_size, frame_size, values.begin() + f * frame_size);
        }
        clip.frames = Tensor::from({t, n0, c}, std::move(values));
        const auto first = k * t, last = std::min(total, (k + 1) * t);
        clip.span = {static_cast<long>(first) / stream.fps, static_cast<long>(last + stream.fps - 1) / stream.fps};
        out.push_back(std::move(clip));
    }
    return out;
}

std::vector<int> format_time_prompt(std::optional<Span> history, Span clip) {
    if (clip.start < 0 || clip.end < 0 || (history && (history->start < 0 || history->end < 0))) {
        throw DataError("time prompt spans must be non-negative");
    }
    std::vector<int> out;
    if (history) {
        append_words(out, "This contains a history of");
        append_number(out, history->start);
        append_words(out, "to");
        append_number(out, history->end);
        append_words(out, "seconds, and a clip sampled in");
    } else {
        append_words(out, "This clip is sampled in");
    }
    append_number(out, clip.start);
    append_words(out, "to");
    append_number(out, clip.end);
    append_words(out, "seconds.");
    return out;
}

std::vector<int> time_prompt(TimePromptMode mode, std::optional<Span> history, Span clip) {
    switch (mode) {
    case TimePromptMode::none: return {};
    case TimePromptMode::clip: return format_time_prompt(std::nullopt, clip);
    case TimePromptMode::clip_memory: return format_time_prompt(history, clip);
    case TimePromptMode::memory: {
        if (!history) {
            return {};
        }
        std::vector<int> out;
        append_words(out, "This contains a history of");
        append_number(out, history->start);
        append_words(out, "to");
        append_number(out, history->end);
        append_words(out, "seconds.");
        return out;
    }
    }
    return {};
}

const MemoryEntry &MemoryBank::last() const {
    if (entries.empty()) {
        throw DataError("memory bank is empty");
    }
    return entries.back();
}

Tensor MemoryBank::indicators() const {
    if (entries.empty()) {
        throw DataError("memory bank is empty");
    }
    std::vector<Tensor> rows;
    rows.reserve(entries.size());
    for (const auto &e : entries) {
        rows.push_back(e.indicator);
    }
    return rows.size() == 1 ? rows.front() : concat_rows(rows);
}

void save_bank(const std::filesystem::path &path, const MemoryBank &bank) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw CheckpointError("cannot open " + path.string() + " for writing");
    }
    os.write(kBankMagic.data(), 4);
    binio::put_u8(os, kBankVersion);
    binio::put_u64(os, bank.entries.size());
    binio::put_u64(os, static_cast<std::uint64_t>(bank.frames_per_clip));
    binio::put_u64(os, static_cast<std::uint64_t>(bank.tokens_per_frame));
    binio::put_u64(os, static_cast<std::uint64_t>(bank.dim));
    binio::put_u64(os, bank.fingerprint);
    const auto rows = static_cast<std::size_t>(bank.frames_per_clip * bank.tokens_per_frame);
    for (const auto &e : bank.entries) {
        if (e.memory.numel() != rows * static_cast<std::size_t>(bank.dim) ||
            e.indicator.numel() != static_cast<std::size_t>(bank.dim)) {
            throw ShapeError("save_bank: entry " + std::to_string(e.index) + " has the wrong size");
        }
        binio::put_i64(os, e.index);
        binio::put_i64(os, e.span.start);
        binio::put_i64(os, e.span.end);
        binio::put_f64s(os, e.memory.values().data(), e.memory.numel());
        binio::put_f64s(os, e.indicator.values().data(), e.indicator.numel());
    }
    if (!os) {
        throw CheckpointError("write failed for " + path.string());
    }
}

MemoryBank load_bank(const std::filesystem::path &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw CheckpointError("cannot open " + path.string());
    }
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), 4) || magic != kBankMagic) {
        throw CheckpointError(path.string() + ": bad magic, expected VSMB");
    }
    if (auto v = binio::get_u8(is); v != kBankVersion) {
        throw CheckpointError(path.string() + ": unsupported bank version " + std::to_string(v));
    }
    MemoryBank bank;
    const auto k = binio::get_u64(is);
    bank.frames_per_clip = static_cast<int>(binio::get_u64(is));
    bank.tokens_per_frame = static_cast<int>(binio::get_u64(is));
    bank.dim = static_cast<int>(binio::get_u64(is));
    bank.fingerprint = binio::get_u64(is);
    if (k == 0 || bank.frames_per_clip <= 0 || bank.tokens_per_frame <= 0 || bank.dim <= 0) {
        throw CheckpointError(path.string() + ": corrupt bank header");
    }
    const auto rows = static_cast<std::size_t>(bank.frames_per_clip * bank.tokens_per_frame);
    const auto d = static_cast<std::size_t>(bank.dim);
    for (std::uint64_t i = 0; i < k; ++i) {
        MemoryEntry e;
        e.index = static_cast<int>(binio::get_i64(is));
        e.span.start = binio::get_i64(is);
        e.span.end = binio::get_i64(is);
        std::vector<double> h(rows * d), ind(d);
        binio::get_f64s(is, h.data(), h.size());
        binio::get_f64s(is, ind.data(), ind.size());
        e.memory = Tensor::from({rows, d}, std::move(h));
        e.indicator = Tensor::from({1, d}, std::move(ind));
        bank.entries.push_back(std::move(e));
    }
    return bank;
}

StreamingEncoder::StreamingEncoder(EncoderConfig config, LmConfig lm_config, std::uint64_t seed)
    : config_(config), lm_(lm_config, seed) {
    if (config_.frames_per_clip <= 0) throw ConfigError("frames_per_clip: must be positive");
    if (config_.tokens_per_frame < 1 || config_.tokens_per_frame >= config_.merged_tokens) {
        throw ConfigError("tokens_per_frame: P must satisfy 1 <= P < N");
    }
    Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
    const auto d = static_cast<std::size_t>(lm_config.dim);
    projector_ = Projector(static_cast<std::size_t>(config_.feature_channels), d, d, rng);
}

Tensor StreamingEncoder::merge(const Tensor &raw_clip) const {
    return merge_adjacent_tokens(raw_clip, config_.merge_layout, static_cast<std::size_t>(config_.grid_width));
}

MemoryEntry StreamingEncoder::encode_step(const MemoryEntry *previous, const Tensor &features,
                                          std::span<const std::uint8_t> padded, Span clip_span, int index) const {
    const auto d = static_cast<std::size_t>(lm_.config().dim);
    const auto tp = static_cast<std::size_t>(config_.frames_per_clip * config_.tokens_per_frame);
    if (features.rank() != 3 || features.dim(0) != static_cast<std::size_t>(config_.frames_per_clip) ||
        features.dim(2) != static_cast<std::size_t>(config_.feature_channels)) {
        throw ShapeError("encode_step: clip features have shape " + shape_str(features.shape()));
    }
    const bool inject = previous != nullptr && config_.use_memory;
    if (inject && (previous->memory.rank() != 2 || previous->memory.cols() != d || previous->memory.rows() != tp)) {
        throw ShapeError("encode_step: previous memory has shape " + shape_str(previous->memory.shape()) +
                         ", expected [" + std::to_string(tp) + "," + std::to_string(d) + "]");
    }
    steps_.fetch_add(1);

    std::optional<Span> history;
    if (inject) {
        history = Span{0, clip_span.start};
    }
    auto summary = init_summarization(features, static_cast<std::size_t>(config_.tokens_per_frame), padded);

    PackedSequence seq;
    auto prompt = time_prompt(config_.prompt_mode, history, clip_span);
    if (!prompt.empty()) {
        seq.add(Segment::of_tokens(SegmentRole::prompt, std::move(prompt)));
    }
    if (inject) {
        seq.add(Segment::of_vectors(SegmentRole::memory, previous->memory));
    }
    seq.add(Segment::of_vectors(SegmentRole::clip_features, projector_(flatten_frames(features))));
    seq.add(Segment::of_vectors(SegmentRole::summarization, projector_(summary.tokens)));
    seq.add(Segment::of_vectors(SegmentRole::global, projector_(summary.global)));

    const auto len = seq.length();
    auto out = lm_.forward(seq, build_causal_mask(len), {.compute_logits = false});
    MemoryEntry entry;
    entry.index = index;
    entry.span = clip_span;
    entry.memory = slice_rows(out.hidden_at_tap, len - tp - 1, len - 1);
    entry.indicator = slice_rows(out.hidden_at_tap, len - 1, len);
    return entry;
}

MemoryBank StreamingEncoder::encode_clips(const std::vector<RawClip> &clips) const {
    if (clips.empty()) {
        throw DataError("encode: no clips");
    }
    MemoryBank bank;
    bank.frames_per_clip = config_.frames_per_clip;
    bank.tokens_per_frame = config_.tokens_per_frame;
    bank.dim = lm_.config().dim;
    bank.fingerprint = fingerprint();
    bank.entries.reserve(clips.size());
    for (const auto &clip : clips) {
        const MemoryEntry *prev = bank.entries.empty() ? nullptr : &bank.entries.back();
        auto entry = encode_step(prev, merge(clip.frames), clip.padded, clip.span, clip.index);
        bank.entries.push_back(std::move(entry));
    }
    return bank;
}

MemoryBank StreamingEncoder::encode_video(const VideoStream &stream) const {
    return encode_clips(segment_video(stream, config_.frames_per_clip));
}

std::uint64_t StreamingEncoder::fingerprint() const {
    Fnv f;
    f.u64(static_cast<std::uint64_t>(config_.frames_per_clip));
    f.u64(static_cast<std::uint64_t>(config_.tokens_per_frame));
    f.u64(static_cast<std::uint64_t>(config_.merged_tokens));
    f.u64(static_cast<std::uint64_t>(config_.feature_channels));
    f.u64(static_cast<std::uint64_t>(config_.prompt_mode));
    f.u64(config_.use_memory ? 1 : 0);
    f.u64(static_cast<std::uint64_t>(lm_.config().dim));
    f.u64(static_cast<std::uint64_t>(lm_.config().tap_layer));
    ParamList params;
    collect(params, "encoder");
    for (const auto &p : params) {
        f.bytes(p.tensor.values().data(), p.tensor.numel() * sizeof(double));
    }
    return f.h;
}

void StreamingEncoder::collect(ParamList &out, const std::string &prefix) const {
    projector_.collect(out, prefix + ".projector");
    lm_.collect(out, prefix + ".lm");
}

} // namespace vstream
