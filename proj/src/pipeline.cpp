#include "vstream/pipeline.hpp"

#include <algorithm>
#include <set>

#include "vstream/container.hpp"
#include "vstream/errors.hpp"
#include "vstream/tokenizer.hpp"

namespace vstream {

void ModelConfig::validate() const {
    encoder_lm.validate();
    reader.lm.validate();
    if (encoder.frames_per_clip <= 0) throw ConfigError("frames_per_clip: must be positive");
    if (encoder.tokens_per_frame < 1 || encoder.tokens_per_frame >= encoder.merged_tokens) {
        throw ConfigError("tokens_per_frame: P must satisfy 1 <= P < N (N=" + std::to_string(encoder.merged_tokens) +
                          ")");
    }
    if (encoder.feature_channels <= 0) throw ConfigError("feature_channels: must be positive");
    if (reader.projector_hidden <= 0) throw ConfigError("reader_projector_hidden: must be positive");
    if (selector.count < 1) throw ConfigError("select_count: V must be at least 1");
    if (!(selector.temperature > 0.0)) throw ConfigError("selection_temperature: must be positive");
    const auto tp = static_cast<long>(encoder.frames_per_clip) * encoder.tokens_per_frame;
    const auto enc_len = static_cast<long>(encoder.frames_per_clip) * encoder.merged_tokens + 2 * tp + 1 + 32;
    if (enc_len > encoder_lm.max_sequence_length) {
        throw ConfigError("encoder_max_sequence_length: " + std::to_string(encoder_lm.max_sequence_length) +
                          " is too short for one clip step (needs about " + std::to_string(enc_len) + ")");
    }
    if (tp * selector.count + 24 > reader.lm.max_sequence_length) {
        throw ConfigError("reader_max_sequence_length: too short for V*T*P memory tokens plus a question");
    }
}

ModelConfig default_model_config() {
    ModelConfig c;
    const int vocab = Vocab::get().size();
    c.encoder_lm.vocab_size = vocab;
    c.reader.lm.vocab_size = vocab;
    return c;
}

Reader::Reader(const ReaderConfig &config, std::size_t memory_dim, std::uint64_t seed) : lm_(config.lm, seed) {
    Rng rng(seed ^ 0x5851f42d4c957f2dull);
    projector_ = Projector(memory_dim, static_cast<std::size_t>(config.projector_hidden),
                           static_cast<std::size_t>(config.lm.dim), rng);
}

PackedSequence Reader::pack(const Tensor &memories, const std::vector<int> &question,
                            const std::vector<int> &answer_prefix) const {
    if (memories.rank() != 2 || memories.cols() != projector_.in_dim()) {
        throw ShapeError("reader: memories have shape " + shape_str(memories.shape()));
    }
    if (question.empty()) {
        throw DataError("reader: empty question");
    }
    PackedSequence seq;
    seq.add(Segment::of_vectors(SegmentRole::memory, projector_(memories)));
    seq.add(Segment::of_tokens(SegmentRole::text, question));
    if (!answer_prefix.empty()) {
        seq.add(Segment::of_tokens(SegmentRole::text, answer_prefix));
    }
    return seq;
}

Tensor Reader::answer_loss(const Tensor &memories, const std::vector<int> &question,
                           const std::vector<int> &answer) const {
    if (answer.empty()) {
        throw DataError("reader: empty answer");
    }
    auto seq = pack(memories, question, answer);
    const auto len = seq.length();
    auto out = lm_.forward(seq, build_causal_mask(len));
    std::vector<int> targets(len, -1);
    const auto first = len - answer.size() - 1; // last question position predicts answer[0]
    for (std::size_t i = 0; i < answer.size(); ++i) {
        targets[first + i] = answer[i];
    }
    targets[len - 1] = Vocab::get().eos();
    return cross_entropy(out.logits, targets);
}

std::vector<int> Reader::generate(const Tensor &memories, const std::vector<int> &question, const Decoding &decoding,
                                  int max_new) const {
    NoGradGuard no_grad;
    return lm_.generate(pack(memories, question), max_new, decoding, Vocab::get().eos());
}

void Reader::collect(ParamList &out, const std::string &prefix) const {
    projector_.collect(out, prefix + ".projector");
    lm_.collect(out, prefix + ".lm");
}

std::vector<int> answer_vocabulary(int alphabet) {
    const auto &v = Vocab::get();
    std::vector<int> out;
    for (int s = 0; s < std::min(alphabet, v.max_symbols()); ++s) out.push_back(v.symbol(s));
    for (int q = 0; q < 4; ++q) out.push_back(v.bucket(q));
    for (int d = 0; d < 10; ++d) out.push_back(v.digit(d));
    out.push_back(v.nothing());
    out.push_back(v.eos());
    return out;
}

VideoStreamingModel::VideoStreamingModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    encoder_ = StreamingEncoder(config_.encoder, config_.encoder_lm, seed);
    reader_ = Reader(config_.reader, static_cast<std::size_t>(config_.encoder_lm.dim), seed * 6364136223846793005ull + 1);
}

MemoryBank VideoStreamingModel::encode(const VideoStream &stream) const {
    NoGradGuard no_grad;
    return encoder_.encode_video(stream);
}

void VideoStreamingModel::check_bank(const MemoryBank &bank) const {
    if (bank.size() == 0) {
        throw DataError("memory bank is empty");
    }
    if (bank.dim != config_.encoder_lm.dim || bank.frames_per_clip != config_.encoder.frames_per_clip ||
        bank.tokens_per_frame != config_.encoder.tokens_per_frame) {
        throw CheckpointError("memory bank geometry (T=" + std::to_string(bank.frames_per_clip) +
                              ", P=" + std::to_string(bank.tokens_per_frame) + ", D=" + std::to_string(bank.dim) +
                              ") does not match the model");
    }
}

Tensor VideoStreamingModel::scores(const MemoryBank &bank, const std::vector<int> &question) const {
    check_bank(bank);
    auto query = instruction_indicator(encoder_, bank, question);
    return similarity(query, bank.indicators(), config_.selector.similarity);
}

SelectionResult VideoStreamingModel::select(const Tensor &s, SelectMode mode, std::uint64_t seed) const {
    const int v = std::min<int>(config_.selector.count, static_cast<int>(s.numel()));
    if (!config_.selector.enabled) {
        return select_last(s, v);
    }
    return gumbel_topk(s, v, config_.selector.temperature, mode, seed);
}

Answer VideoStreamingModel::answer(const MemoryBank &bank, const std::vector<int> &question,
                                   const Decoding &decoding) const {
    if (stage_ == 0) {
        throw CheckpointError("model has no trained parameters; load a checkpoint first");
    }
    NoGradGuard no_grad;
    Answer a;
    auto s = scores(bank, question);
    a.selection = select(s, SelectMode::inference, 0);
    auto memories = assemble(bank, a.selection);
    a.reader_memory_tokens = memories.rows();
    a.reader_input_length = memories.rows() + question.size();
    a.tokens = reader_.generate(memories, question, decoding);
    return a;
}

ParamList VideoStreamingModel::encoder_parameters() const {
    ParamList p;
    encoder_.collect(p, "encoder");
    return p;
}

ParamList VideoStreamingModel::reader_parameters() const {
    ParamList p;
    reader_.collect(p, "reader");
    return p;
}

ParamList VideoStreamingModel::parameters() const {
    auto p = encoder_parameters();
    auto r = reader_parameters();
    p.insert(p.end(), r.begin(), r.end());
    return p;
}

ParamList VideoStreamingModel::projector_parameters() const {
    ParamList p;
    encoder_.projector().collect(p, "encoder.projector");
    reader_.projector().collect(p, "reader.projector");
    return p;
}

void VideoStreamingModel::save(const std::filesystem::path &path) const {
    std::vector<NamedArray> entries;
    for (const auto &p : parameters()) {
        entries.push_back({p.name, p.tensor.shape(), p.tensor.to_vector()});
    }
    entries.push_back({"meta.stage", {1}, {static_cast<double>(stage_)}});
    write_container(path, kCheckpointMagic, entries);
}

void VideoStreamingModel::load(const std::filesystem::path &path) {
    load_checkpoint(path, parameters());
    stage_ = 1;
    for (const auto &e : read_container(path, kCheckpointMagic)) {
        if (e.name == "meta.stage" && !e.values.empty()) {
            stage_ = static_cast<int>(e.values.front());
        }
    }
}

double intersection_over_prediction(const std::vector<int> &selected, const std::vector<int> &gt) {
    if (selected.empty()) {
        return 0.0;
    }
    std::set<int> g(gt.begin(), gt.end());
    std::set<int> s(selected.begin(), selected.end());
    std::size_t hit = 0;
    for (int k : s) {
        hit += g.count(k);
    }
    return static_cast<double>(hit) / static_cast<double>(s.size());
}

} // namespace vstream
