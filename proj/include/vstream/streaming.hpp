#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "vstream/clip_encoder.hpp"

namespace vstream {

// Half-open interval in whole seconds.
struct Span {
    long start = 0;
    long end = 0;
    friend bool operator==(const Span &, const Span &) = default;
};

struct VideoStream {
    Tensor frames; // [frames, N0, c]
    int fps = 1;

    std::size_t frame_count() const { return frames.defined() ? frames.dim(0) : 0; }
    long duration_seconds() const;
};

struct RawClip {
    int index = 0;
    Tensor frames; // [T, N0, c]
    Span span;
    std::vector<std::uint8_t> padded; // per frame, 1 = repeated pad frame
};

// Consecutive T-frame clips; a short tail clip repeats its last frame.
std::vector<RawClip> segment_video(const VideoStream &stream, int frames_per_clip);

enum class TimePromptMode { none, clip, memory, clip_memory };

// "This contains a history of {s} to {e} seconds, and a clip sampled in {s} to {e} seconds."
// or, without history, "This clip is sampled in {s} to {e} seconds."
std::vector<int> format_time_prompt(std::optional<Span> history, Span clip);
std::vector<int> time_prompt(TimePromptMode mode, std::optional<Span> history, Span clip);

struct MemoryEntry {
    int index = 0;
    Span span;
    Tensor memory;    // [T*P, D]
    Tensor indicator; // [1, D]
};

struct MemoryBank {
    int frames_per_clip = 0;
    int tokens_per_frame = 0;
    int dim = 0;
    std::uint64_t fingerprint = 0;
    std::vector<MemoryEntry> entries;

    std::size_t size() const { return entries.size(); }
    const MemoryEntry &last() const;
    Tensor indicators() const; // [K, D]
};

// VSMB: magic | version u8 | K T P D fingerprint (u64) | K x (index start end (i64) | H f64[T*P*D] | indicator f64[D])
void save_bank(const std::filesystem::path &path, const MemoryBank &bank);
MemoryBank load_bank(const std::filesystem::path &path);

struct EncoderConfig {
    int frames_per_clip = 8;     // T
    int tokens_per_frame = 2;    // P
    int merged_tokens = 16;      // N, after merging
    int feature_channels = 32;   // C, after merging
    TimePromptMode prompt_mode = TimePromptMode::clip_memory;
    bool use_memory = true;
    MergeLayout merge_layout = MergeLayout::consecutive;
    int grid_width = 0;
};

class StreamingEncoder {
public:
    StreamingEncoder() = default;
    StreamingEncoder(EncoderConfig config, LmConfig lm_config, std::uint64_t seed);

    const EncoderConfig &config() const { return config_; }
    const MiniLm &lm() const { return lm_; }
    const Projector &projector() const { return projector_; }

    // One memory-propagated step over merged clip features [T, N, C].
    MemoryEntry encode_step(const MemoryEntry *previous, const Tensor &features, std::span<const std::uint8_t> padded,
                            Span clip_span, int index) const;

    Tensor merge(const Tensor &raw_clip) const;
    MemoryBank encode_video(const VideoStream &stream) const;
    MemoryBank encode_clips(const std::vector<RawClip> &clips) const;

    std::uint64_t fingerprint() const;
    long steps_encoded() const { return steps_.load(); }

    void collect(ParamList &out, const std::string &prefix) const;

private:
    EncoderConfig config_;
    Projector projector_;
    MiniLm lm_;
    mutable std::atomic<long> steps_{0};

public:
    StreamingEncoder(const StreamingEncoder &other)
        : config_(other.config_), projector_(other.projector_), lm_(other.lm_), steps_(other.steps_.load()) {}
    StreamingEncoder &operator=(const StreamingEncoder &other) {
        config_ = other.config_;
        projector_ = other.projector_;
        lm_ = other.lm_;
        steps_ = other.steps_.load();
        return *this;
    }
};

} // namespace vstream
