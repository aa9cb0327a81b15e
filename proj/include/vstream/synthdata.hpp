#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vstream/streaming.hpp"

namespace vstream {

struct FeatureGeometry {
    int frames_per_clip = 8; // T
    int raw_tokens = 64;     // N0 per frame, before merging
    int raw_channels = 8;    // c, before merging
    int fps = 1;

    int merged_channels() const { return 4 * raw_channels; }
};

struct Event {
    int clip = 0;
    int symbol = 0;
    double intensity = 1.0;
    friend bool operator==(const Event &, const Event &) = default;
};

struct EventPlan {
    int num_clips = 0;
    int alphabet = 10;
    double noise = 0.5;
    std::uint64_t seed = 0;
    std::vector<Event> events;

    void validate() const; // throws DataError
    int symbol_at(int clip) const; // -1 when no event
    std::vector<int> clips_with(int symbol) const;
    std::vector<int> event_clips() const;
    int distinct_symbols() const;
};

// Fixed orthonormal symbol directions in the merged channel space.
class SymbolBasis {
public:
    SymbolBasis(int alphabet, int channels, std::uint64_t seed);
    std::span<const double> direction(int symbol) const;
    int alphabet() const { return alphabet_; }
    int channels() const { return channels_; }

private:
    int alphabet_;
    int channels_;
    std::vector<double> dirs_; // alphabet x channels
};

inline constexpr std::uint64_t kDefaultBasisSeed = 20240607;

// Background Gaussian noise plus intensity * direction on every merged token of
// each planted clip. Deterministic in plan.seed.
VideoStream gen_video(const EventPlan &plan, const FeatureGeometry &geometry, const SymbolBasis &basis);

enum class QuestionKind { what_at_time, when_symbol, global_count };
const char *question_kind_name(QuestionKind kind);
QuestionKind parse_question_kind(const std::string &name);

struct QASample {
    QuestionKind kind = QuestionKind::what_at_time;
    int clip = -1;   // what_at_time subject
    int symbol = -1; // when_symbol subject
    std::vector<int> question;
    std::vector<int> answer;
    std::vector<int> grounding; // 0-based clip indices, ascending
};

QASample make_what_at_time(const EventPlan &plan, const FeatureGeometry &geometry, int clip);
QASample make_when_symbol(const EventPlan &plan, int symbol);
QASample make_global_count(const EventPlan &plan);

// what-at-time per event clip, when-symbol per distinct symbol, one global count.
std::vector<QASample> gen_qa(const EventPlan &plan, const FeatureGeometry &geometry);

// Replays a sample against its plan.
bool validate_qa(const EventPlan &plan, const FeatureGeometry &geometry, const QASample &sample);

struct PlanOptions {
    int num_clips = 16;
    int alphabet = 10;
    int min_events = 3;
    int max_events = 8;
    double intensity = 1.0;
    double noise = 0.5;
};

EventPlan random_plan(const PlanOptions &options, std::uint64_t seed);

struct LongVideo {
    VideoStream stream;
    EventPlan plan;
    std::vector<QASample> qa;
};

// Concatenates streams in order, shifting clip indices and re-basing spans.
LongVideo concat_videos(const std::vector<LongVideo> &parts, const FeatureGeometry &geometry);

struct DatasetItem {
    std::string stream_file; // relative to the dataset directory
    EventPlan plan;
    std::vector<QASample> qa;
    VideoStream stream; // loaded lazily by load_stream
};

struct Dataset {
    FeatureGeometry geometry;
    std::vector<DatasetItem> items;

    std::size_t question_count() const;
};

struct DatasetOptions {
    FeatureGeometry geometry;
    PlanOptions plan;
    int num_videos = 0;        // 0: derive from num_questions
    int num_questions = 2000;  // stop once this many QA samples exist
    int concat_parts = 1;      // >1 builds each video from shorter parts
    std::uint64_t seed = 1;
    std::uint64_t basis_seed = kDefaultBasisSeed;
};

Dataset generate_dataset(const DatasetOptions &options);

// Directory layout: meta.json, videos.jsonl (one plan per line), dataset.jsonl
// (one QA sample per line) and one VSDS stream container per video under streams/.
void save_dataset(const std::filesystem::path &dir, const Dataset &dataset);
Dataset load_dataset(const std::filesystem::path &dir, bool load_streams = true);

void save_stream(const std::filesystem::path &path, const VideoStream &stream);
VideoStream load_stream(const std::filesystem::path &path);

} // namespace vstream
