#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vstream/pipeline.hpp"
#include "vstream/synthdata.hpp"

namespace vstream {

// ---- stage 1: single-clip captioning under the prefix mask ----

struct CaptionSample {
    Tensor features;             // merged [T, N, C]
    std::vector<int> prompt;     // clip time prompt, empty when prompts are off
    std::vector<int> caption;    // "<bos> The clip shows X [from a to b seconds] ."
    int symbol = -1;             // -1 for an empty clip
};

// A span is given when the clip carries a time prompt.
std::vector<int> clip_caption(int symbol, std::optional<Span> span = std::nullopt, int fps = 1);

// Single-clip captioning data drawn from the same generator as the long videos.
// Each clip sits at a random position of a plan.num_clips video for its time prompt.
std::vector<CaptionSample> make_caption_set(const StreamingEncoder &encoder, const FeatureGeometry &geometry,
                                            const PlanOptions &plan, int count, double empty_fraction,
                                            std::uint64_t seed, std::uint64_t basis_seed = kDefaultBasisSeed);

// Mean next-token cross-entropy over caption positions only.
Tensor caption_loss(const StreamingEncoder &encoder, const CaptionSample &sample);

// Reader pretraining: a few clips at sorted random positions of a longer
// video, encoded in streaming order, read back as a dense time-stamped
// caption or as a single timestamped fact about them.
struct ReaderCaptionSample {
    std::vector<RawClip> clips;  // spans and indices already offset
    std::vector<int> question;   // "What appears ?" or a window question
    std::vector<int> caption;    // "from a to b seconds X , ... ." or the answer
};

std::vector<int> dense_caption(const std::vector<Span> &spans, const std::vector<int> &symbols, int fps);

// Sample i is a pure function of (seed, i), so training can draw fresh
// samples forever without storing them.
class ReaderCaptionSource {
public:
    ReaderCaptionSource(FeatureGeometry geometry, PlanOptions plan, int window, double empty_fraction,
                        std::uint64_t seed, std::uint64_t basis_seed = kDefaultBasisSeed);
    ReaderCaptionSample sample(std::uint64_t index) const;
    int window() const { return window_; }

private:
    FeatureGeometry geometry_;
    PlanOptions plan_;
    int window_;
    double empty_fraction_;
    std::uint64_t seed_;
    SymbolBasis basis_;
};

// The first `count` samples of a source.
std::vector<ReaderCaptionSample> make_reader_caption_set(const FeatureGeometry &geometry, const PlanOptions &plan,
                                                         int window, int count, double empty_fraction,
                                                         std::uint64_t seed,
                                                         std::uint64_t basis_seed = kDefaultBasisSeed);

// Encodes the window without gradients (the encoder is frozen) and scores the reader on the caption.
Tensor reader_caption_loss(const VideoStreamingModel &model, const ReaderCaptionSample &sample);

struct Stage1Options {
    int align_steps = 100;    // projector only
    int instruct_steps = 300; // encoder projector + encoder LM
    int reader_steps = 6000;  // reader only, encoder frozen
    double align_lr = 3e-3;
    double instruct_lr = 1e-3;
    double reader_lr = 1e-3;
    int batch = 4;
    std::uint64_t seed = 11;
};

struct StepLog {
    std::string phase;
    long step = 0;
    double loss = 0.0;
};

struct TrainLog {
    std::vector<StepLog> steps;
    double final_loss() const { return steps.empty() ? 0.0 : steps.back().loss; }
};

// The reader phase either cycles a fixed set or streams fresh samples.
TrainLog train_stage1(VideoStreamingModel &model, const std::vector<CaptionSample> &captions,
                      const std::vector<ReaderCaptionSample> &reader_captions, const Stage1Options &options);
TrainLog train_stage1(VideoStreamingModel &model, const std::vector<CaptionSample> &captions,
                      const ReaderCaptionSource &reader_source, const Stage1Options &options);

// ---- stage 2: streaming long-video QA ----

// weak: no KL anywhere, same data schedule as warmup. warmup: KL on the labeled
// videos first, then answers only. mixed variants keep KL on labeled videos in the joint phase.
enum class Regime { weak, warmup, mixed, warmup_mixed };
const char *regime_name(Regime r);
Regime parse_regime(const std::string &name);

struct Stage2Options {
    Regime regime = Regime::warmup;
    double labeled_fraction = 0.5; // videos carrying grounding labels
    int warmup_epochs = 4;
    int joint_epochs = 2;
    double lr = 3e-4;
    double min_lr = 3e-5;
    double next_token_weight = 1.0;
    double kl_weight = 0.5;
    int questions_per_step = 0;     // 0: every question of the video
    bool reader_grad_to_encoder = true;
    std::uint64_t seed = 23;
    // Called after every epoch with the phase name and 1-based epoch index.
    std::function<void(const std::string &, int)> on_epoch;
};

struct QAItem {
    const VideoStream *stream = nullptr;
    std::vector<QASample> qa;
};

// Loss for one video: encode with gradients, then next-token (+ KL) per question.
Tensor stage2_loss(const VideoStreamingModel &model, const VideoStream &stream, const std::vector<QASample> &qa,
                   bool use_kl, double next_token_weight, double kl_weight, std::uint64_t gumbel_seed,
                   bool reader_grad_to_encoder = true);

TrainLog train_stage2(VideoStreamingModel &model, const std::vector<QAItem> &data, const Stage2Options &options);

// Deterministic train / held-out split by video.
struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> heldout;
};
Split split_dataset(std::size_t videos, double heldout_fraction, std::uint64_t seed);

std::vector<QAItem> qa_items(const Dataset &dataset, const std::vector<std::size_t> &indices);

} // namespace vstream
