#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "vstream/selector.hpp"

namespace vstream {

struct ReaderConfig {
    LmConfig lm;              // dim is D_r
    int projector_hidden = 64;
};

struct SelectorConfig {
    int count = 4;            // V
    double temperature = 0.5; // tau_sel
    SimilarityMode similarity = SimilarityMode::cosine;
    bool enabled = true;      // false: always read the last V memories
};

struct ModelConfig {
    EncoderConfig encoder;
    LmConfig encoder_lm;
    ReaderConfig reader;
    SelectorConfig selector;

    void validate() const; // throws ConfigError
};

// Default small configuration; vocab sizes filled from the shared vocabulary.
ModelConfig default_model_config();

// Answering LM fed with projected memories followed by the question.
class Reader {
public:
    Reader() = default;
    Reader(const ReaderConfig &config, std::size_t memory_dim, std::uint64_t seed);

    const MiniLm &lm() const { return lm_; }
    const Projector &projector() const { return projector_; }

    // [project(memories), question, answer_prefix]
    PackedSequence pack(const Tensor &memories, const std::vector<int> &question,
                        const std::vector<int> &answer_prefix = {}) const;

    // Mean next-token cross-entropy over the answer tokens and the closing <eos>.
    Tensor answer_loss(const Tensor &memories, const std::vector<int> &question, const std::vector<int> &answer) const;

    std::vector<int> generate(const Tensor &memories, const std::vector<int> &question, const Decoding &decoding,
                              int max_new = 4) const;

    void collect(ParamList &out, const std::string &prefix) const;

private:
    Projector projector_;
    MiniLm lm_;
};

struct Answer {
    std::vector<int> tokens;
    SelectionResult selection;
    std::size_t reader_memory_tokens = 0;
    std::size_t reader_input_length = 0;
};

// Tokens a multi-choice answer may use: symbols, buckets, digits, "nothing" and <eos>.
std::vector<int> answer_vocabulary(int alphabet = 26);

class VideoStreamingModel {
public:
    VideoStreamingModel() = default;
    VideoStreamingModel(ModelConfig config, std::uint64_t seed);

    const ModelConfig &config() const { return config_; }
    SelectorConfig &selector() { return config_.selector; }
    const StreamingEncoder &encoder() const { return encoder_; }
    const Reader &reader() const { return reader_; }

    MemoryBank encode(const VideoStream &stream) const;

    // Indicator similarities against the bank. [K]
    Tensor scores(const MemoryBank &bank, const std::vector<int> &question) const;
    SelectionResult select(const Tensor &scores, SelectMode mode, std::uint64_t seed) const;

    // Inference path: indicator, similarity, top-V, assemble, read, decode.
    Answer answer(const MemoryBank &bank, const std::vector<int> &question, const Decoding &decoding = {}) const;

    ParamList parameters() const;
    ParamList encoder_parameters() const;
    ParamList reader_parameters() const;
    // Both projectors (stage-1 alignment trains only these).
    ParamList projector_parameters() const;

    // 0 = untrained, 1 = after single-clip training, 2 = after streaming training.
    int stage() const { return stage_; }
    void set_stage(int stage) { stage_ = stage; }

    void save(const std::filesystem::path &path) const;
    // Throws CheckpointError on missing tensors or shape mismatches.
    void load(const std::filesystem::path &path);

private:
    void check_bank(const MemoryBank &bank) const;

    ModelConfig config_;
    StreamingEncoder encoder_;
    Reader reader_;
    int stage_ = 0;
};

// |selected ∩ gt| / |selected|
double intersection_over_prediction(const std::vector<int> &selected, const std::vector<int> &gt);

} // namespace vstream
