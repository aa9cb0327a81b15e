#include "vstream/training.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>

#include "vstream/errors.hpp"
#include "vstream/tokenizer.hpp"

namespace vstream {

std::vector<int> clip_caption(int symbol, std::optional<Span> span, int fps) {
    const auto &v = Vocab::get();
    std::vector<int> c{v.bos()};
    for (int id : tokenize("The clip shows")) {
        c.push_back(id);
    }
    c.push_back(symbol >= 0 ? v.symbol(symbol) : v.nothing());
    if (span) {
        c.push_back(v.id("from"));
        append_number(c, span->start / fps);
        c.push_back(v.id("to"));
        append_number(c, span->end / fps);
        c.push_back(v.id("seconds"));
    }
    c.push_back(v.id("."));
    return c;
}

std::vector<CaptionSample> make_caption_set(const StreamingEncoder &encoder, const FeatureGeometry &geometry,
                                            const PlanOptions &plan, int count, double empty_fraction,
                                            std::uint64_t seed, std::uint64_t basis_seed) {
    if (count <= 0) {
        throw DataError("caption set: count must be positive");
    }
    SymbolBasis basis(plan.alphabet, geometry.merged_channels(), basis_seed);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::uniform_int_distribution<int> sym(0, plan.alphabet - 1);
    std::uniform_int_distribution<int> position(0, plan.num_clips - 1);
    const auto mode = encoder.config().prompt_mode;
    const bool timed = mode == TimePromptMode::clip || mode == TimePromptMode::clip_memory;
    const long T = geometry.frames_per_clip;
    std::vector<CaptionSample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        EventPlan p;
        p.num_clips = 1;
        p.alphabet = plan.alphabet;
        p.noise = plan.noise;
        p.seed = rng();
        int s = -1;
        if (unif(rng) >= empty_fraction) {
            s = sym(rng);
            p.events.push_back({0, s, plan.intensity});
        }
        auto stream = gen_video(p, geometry, basis);
        const long k = position(rng);
        const Span span{k * T, (k + 1) * T};
        CaptionSample c;
        c.features = encoder.merge(stream.frames);
        if (timed) {
            c.prompt = time_prompt(TimePromptMode::clip, std::nullopt, span);
            c.caption = clip_caption(s, span, geometry.fps);
        } else {
            c.caption = clip_caption(s);
        }
        c.symbol = s;
        out.push_back(std::move(c));
    }
    return out;
}

Tensor caption_loss(const StreamingEncoder &encoder, const CaptionSample &sample) {
    auto summary = init_summarization(sample.features, static_cast<std::size_t>(encoder.config().tokens_per_frame));
    std::size_t offset = 0;
    auto logits = clip_caption_logits(sample.features, summary, encoder.projector(), encoder.lm(), sample.caption,
                                      &offset, sample.prompt);
    std::vector<int> targets(logits.rows(), -1);
    for (std::size_t i = 0; i + 1 < sample.caption.size(); ++i) {
        targets[offset + i] = sample.caption[i + 1];
    }
    return cross_entropy(logits, targets);
}

std::vector<int> dense_caption(const std::vector<Span> &spans, const std::vector<int> &symbols, int fps) {
    const auto &v = Vocab::get();
    std::vector<int> c;
    for (std::size_t i = 0; i < spans.size(); ++i) {
        c.push_back(v.id("from"));
        append_number(c, spans[i].start / fps);
        c.push_back(v.id("to"));
        append_number(c, spans[i].end / fps);
        c.push_back(v.id("seconds"));
        c.push_back(symbols[i] >= 0 ? v.symbol(symbols[i]) : v.nothing());
        c.push_back(v.id(i + 1 < spans.size() ? "," : "."));
    }
    return c;
}

ReaderCaptionSource::ReaderCaptionSource(FeatureGeometry geometry, PlanOptions plan, int window,
                                         double empty_fraction, std::uint64_t seed, std::uint64_t basis_seed)
    : geometry_(geometry), plan_(plan), window_(window), empty_fraction_(empty_fraction), seed_(seed),
      basis_(plan.alphabet, geometry.merged_channels(), basis_seed) {
    if (window <= 0 || window > plan.num_clips) {
        throw ConfigError("reader caption window: need 0 < window <= num_clips, got " + std::to_string(window));
    }
}

ReaderCaptionSample ReaderCaptionSource::sample(std::uint64_t index) const {
    std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::uniform_int_distribution<int> sym(0, plan_.alphabet - 1);

    std::vector<int> positions(static_cast<std::size_t>(plan_.num_clips));
    std::iota(positions.begin(), positions.end(), 0);
    std::shuffle(positions.begin(), positions.end(), rng);
    positions.resize(static_cast<std::size_t>(window_));
    std::sort(positions.begin(), positions.end());

    EventPlan p;
    p.num_clips = window_;
    p.alphabet = plan_.alphabet;
    p.noise = plan_.noise;
    p.seed = rng();
    std::vector<int> symbols(static_cast<std::size_t>(window_), -1);
    for (int k = 0; k < window_; ++k) {
        if (unif(rng) >= empty_fraction_) {
            symbols[static_cast<std::size_t>(k)] = sym(rng);
            p.events.push_back({k, symbols[static_cast<std::size_t>(k)], plan_.intensity});
        }
    }
    ReaderCaptionSample r;
    r.clips = segment_video(gen_video(p, geometry_, basis_), geometry_.frames_per_clip);
    std::vector<Span> spans;
    for (std::size_t k = 0; k < r.clips.size(); ++k) {
        auto &c = r.clips[k];
        const long shift = static_cast<long>(positions[k] - c.index) * geometry_.frames_per_clip;
        c.index = positions[k];
        c.span = {c.span.start + shift, c.span.end + shift};
        spans.push_back(c.span);
    }
    // Half of the samples ask about one clip by its time, the rest caption or count.
    switch (index % 4) {
    case 0:
        r.question = tokenize("What appears ?");
        r.caption = dense_caption(spans, symbols, geometry_.fps);
        break;
    case 1:
    case 2: {
        EventPlan placed = p;
        placed.num_clips = plan_.num_clips;
        for (auto &e : placed.events) {
            e.clip = positions[static_cast<std::size_t>(e.clip)];
        }
        const int k = std::uniform_int_distribution<int>(0, window_ - 1)(rng);
        auto q = make_what_at_time(placed, geometry_, positions[static_cast<std::size_t>(k)]);
        r.question = q.question;
        r.caption = q.answer;
        break;
    }
    default:
        if (p.events.empty()) {
            r.question = tokenize("How many distinct symbols appear ?");
            r.caption = {Vocab::get().digit(0)};
        } else {
            auto q = make_global_count(p);
            r.question = q.question;
            r.caption = q.answer;
        }
    }
    return r;
}

std::vector<ReaderCaptionSample> make_reader_caption_set(const FeatureGeometry &geometry, const PlanOptions &plan,
                                                         int window, int count, double empty_fraction,
                                                         std::uint64_t seed, std::uint64_t basis_seed) {
    if (count <= 0) {
        throw ConfigError("reader caption set: need count > 0");
    }
    ReaderCaptionSource source(geometry, plan, window, empty_fraction, seed, basis_seed);
    std::vector<ReaderCaptionSample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        out.push_back(source.sample(static_cast<std::uint64_t>(i)));
    }
    return out;
}

Tensor reader_caption_loss(const VideoStreamingModel &model, const ReaderCaptionSample &sample) {
    // The encoder is frozen in this phase; no graph through it.
    MemoryBank bank;
    {
        NoGradGuard no_grad;
        bank = model.encoder().encode_clips(sample.clips);
    }
    std::vector<Tensor> blocks;
    for (const auto &e : bank.entries) {
        blocks.push_back(e.memory);
    }
    return model.reader().answer_loss(concat_rows(blocks), sample.question, sample.caption);
}

namespace {

// `next()` yields the next training sample.
template <class Next, class LossFn>
void run_phase(VideoStreamingModel &model, Next next, LossFn loss_fn, const ParamList &trainable, int steps,
               double lr, int batch, const std::string &phase, TrainLog &log) {
    if (steps <= 0) {
        return;
    }
    Adam opt(trainable, AdamOptions{.lr = lr});
    const auto all = model.parameters();
    for (int step = 0; step < steps; ++step) {
        zero_grads(all);
        Tensor total;
        for (int b = 0; b < batch; ++b) {
            auto l = loss_fn(next());
            total = total.defined() ? add(total, l) : l;
        }
        total = scale(total, 1.0 / batch);
        backward(total);
        opt.step(cosine_lr(lr, step, steps, 0.1 * lr));
        log.steps.push_back({phase, step, total.item()});
    }
    zero_grads(all);
}

// Shuffled passes over a fixed set.
template <class Sample>
auto cycler(const std::vector<Sample> &data, std::mt19937_64 &rng) {
    auto order = std::make_shared<std::vector<std::size_t>>(data.size());
    std::iota(order->begin(), order->end(), 0);
    auto cursor = std::make_shared<std::size_t>(order->size());
    return [&data, &rng, order, cursor]() -> const Sample & {
        if (*cursor >= order->size()) {
            std::shuffle(order->begin(), order->end(), rng);
            *cursor = 0;
        }
        return data[(*order)[(*cursor)++]];
    };
}

void check_stage1(const std::vector<CaptionSample> &captions, const Stage1Options &o) {
    if (captions.empty()) {
        throw DataError("stage 1: no caption samples");
    }
    if (o.batch <= 0) {
        throw ConfigError("stage1_batch: must be positive");
    }
}

// Align then clip-instruct on captions.
void encoder_phases(VideoStreamingModel &model, const std::vector<CaptionSample> &captions, const Stage1Options &o,
                    std::mt19937_64 &rng, TrainLog &log) {
    auto clip_loss = [&](const CaptionSample &c) { return caption_loss(model.encoder(), c); };
    ParamList align;
    model.encoder().projector().collect(align, "encoder.projector");
    run_phase(model, cycler(captions, rng), clip_loss, align, o.align_steps, o.align_lr, o.batch, "align", log);
    run_phase(model, cycler(captions, rng), clip_loss, model.encoder_parameters(), o.instruct_steps, o.instruct_lr,
              o.batch, "clip_instruct", log);
}

} // namespace

TrainLog train_stage1(VideoStreamingModel &model, const std::vector<CaptionSample> &captions,
                      const std::vector<ReaderCaptionSample> &reader_captions, const Stage1Options &o) {
    check_stage1(captions, o);
    if (o.reader_steps > 0 && reader_captions.empty()) {
        throw DataError("stage 1: reader pretraining needs dense caption samples");
    }
    TrainLog log;
    std::mt19937_64 rng(o.seed);
    encoder_phases(model, captions, o, rng, log);
    auto read_loss = [&](const ReaderCaptionSample &r) { return reader_caption_loss(model, r); };
    run_phase(model, cycler(reader_captions, rng), read_loss, model.reader_parameters(), o.reader_steps, o.reader_lr,
              o.batch, "reader", log);
    model.set_stage(std::max(model.stage(), 1));
    return log;
}

TrainLog train_stage1(VideoStreamingModel &model, const std::vector<CaptionSample> &captions,
                      const ReaderCaptionSource &reader_source, const Stage1Options &o) {
    check_stage1(captions, o);
    TrainLog log;
    std::mt19937_64 rng(o.seed);
    encoder_phases(model, captions, o, rng, log);
    std::uint64_t next_index = 0;
    auto next = [&] { return reader_source.sample(next_index++); };
    auto read_loss = [&](const ReaderCaptionSample &r) { return reader_caption_loss(model, r); };
    run_phase(model, next, read_loss, model.reader_parameters(), o.reader_steps, o.reader_lr, o.batch, "reader", log);
    model.set_stage(std::max(model.stage(), 1));
    return log;
}

const char *regime_name(Regime r) {
    switch (r) {
    case Regime::weak: return "weak";
    case Regime::warmup: return "warmup";
    case Regime::mixed: return "mixed";
    case Regime::warmup_mixed: return "warmup_mixed";
    }
    return "?";
}

Regime parse_regime(const std::string &name) {
    if (name == "weak") return Regime::weak;
    if (name == "warmup") return Regime::warmup;
    if (name == "mixed") return Regime::mixed;
    if (name == "warmup_mixed") return Regime::warmup_mixed;
    throw ConfigError("train.regime: unknown regime '" + name + "' (weak|warmup|mixed|warmup_mixed)");
}

Tensor stage2_loss(const VideoStreamingModel &model, const VideoStream &stream, const std::vector<QASample> &qa,
                   bool use_kl, double next_token_weight, double kl_weight, std::uint64_t gumbel_seed,
                   bool reader_grad_to_encoder) {
    if (qa.empty()) {
        throw DataError("stage 2: video without questions");
    }
    auto bank = model.encoder().encode_video(stream);
    MemoryBank reader_bank = bank;
    if (!reader_grad_to_encoder) {
        for (auto &e : reader_bank.entries) {
            e.memory = e.memory.detach();
        }
    }
    const auto tau = model.config().selector.temperature;
    Tensor total;
    for (std::size_t i = 0; i < qa.size(); ++i) {
        const auto &q = qa[i];
        auto s = model.scores(bank, q.question);
        auto sel = model.select(s, SelectMode::train, gumbel_seed + i);
        auto memories = assemble(reader_bank, sel);
        auto loss = scale(model.reader().answer_loss(memories, q.question, q.answer), next_token_weight);
        if (use_kl && kl_weight != 0.0) {
            loss = add(loss, scale(selection_kl_loss(s, q.grounding, tau), kl_weight));
        }
        total = total.defined() ? add(total, loss) : loss;
    }
    return scale(total, 1.0 / static_cast<double>(qa.size()));
}

namespace {

struct Phase {
    std::string name;
    std::vector<std::size_t> videos;
    int epochs = 0;
    bool kl_on_labeled = false;
};

} // namespace

TrainLog train_stage2(VideoStreamingModel &model, const std::vector<QAItem> &data, const Stage2Options &o) {
    if (model.stage() < 1) {
        throw CheckpointError("stage 2 needs a stage-1 checkpoint");
    }
    if (data.empty()) {
        throw DataError("stage 2: no training videos");
    }
    if (o.labeled_fraction < 0.0 || o.labeled_fraction > 1.0) {
        throw ConfigError("train.labeled_fraction: must lie in [0, 1]");
    }
    std::mt19937_64 rng(o.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_labeled = static_cast<std::size_t>(std::ceil(o.labeled_fraction * static_cast<double>(data.size())));
    std::vector<std::uint8_t> labeled(data.size(), 0);
    std::vector<std::size_t> labeled_set(order.begin(), order.begin() + static_cast<long>(n_labeled));
    std::vector<std::size_t> rest(order.begin() + static_cast<long>(n_labeled), order.end());
    for (auto i : labeled_set) {
        labeled[i] = 1;
    }

    const bool warm = o.regime == Regime::warmup || o.regime == Regime::warmup_mixed;
    if (warm && labeled_set.empty()) {
        throw ConfigError("train.labeled_fraction: warm-up needs labeled videos");
    }
    std::vector<Phase> phases;
    if (warm) {
        phases.push_back({"warmup", labeled_set, o.warmup_epochs, true});
    }
    switch (o.regime) {
    case Regime::weak:
        // Same schedule as warm-up with the KL term off, so the regimes differ only in supervision.
        if (!labeled_set.empty()) {
            phases.push_back({"warmup", labeled_set, o.warmup_epochs, false});
        }
        phases.push_back({"joint", rest.empty() ? order : rest, o.joint_epochs, false});
        break;
    case Regime::warmup: phases.push_back({"joint", rest.empty() ? order : rest, o.joint_epochs, false}); break;
    case Regime::mixed:
    case Regime::warmup_mixed: phases.push_back({"joint", order, o.joint_epochs, true}); break;
    }

    long total_steps = 0;
    for (const auto &p : phases) {
        total_steps += static_cast<long>(p.videos.size()) * p.epochs;
    }
    const auto params = model.parameters();
    Adam opt(params, AdamOptions{.lr = o.lr});
    TrainLog log;
    long step = 0;
    for (const auto &phase : phases) {
        auto videos = phase.videos;
        for (int epoch = 1; epoch <= phase.epochs; ++epoch) {
            std::shuffle(videos.begin(), videos.end(), rng);
            for (auto vi : videos) {
                const auto &item = data[vi];
                std::vector<QASample> qa = item.qa;
                if (o.questions_per_step > 0 && qa.size() > static_cast<std::size_t>(o.questions_per_step)) {
                    std::shuffle(qa.begin(), qa.end(), rng);
                    qa.resize(static_cast<std::size_t>(o.questions_per_step));
                }
                const bool kl = phase.kl_on_labeled && labeled[vi];
                zero_grads(params);
                auto loss = stage2_loss(model, *item.stream, qa, kl, o.next_token_weight, o.kl_weight,
                                        o.seed * 1000003ull + static_cast<std::uint64_t>(step) * 131ull);
                backward(loss);
                opt.step(cosine_lr(o.lr, step, total_steps, o.min_lr));
                log.steps.push_back({phase.name, step, loss.item()});
                ++step;
            }
            if (o.on_epoch) {
                o.on_epoch(phase.name, epoch);
            }
        }
    }
    zero_grads(params);
    model.set_stage(2);
    return log;
}

Split split_dataset(std::size_t videos, double heldout_fraction, std::uint64_t seed) {
    if (heldout_fraction < 0.0 || heldout_fraction >= 1.0) {
        throw ConfigError("data.heldout_fraction: must lie in [0, 1)");
    }
    std::vector<std::size_t> order(videos);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n = static_cast<std::size_t>(std::round(heldout_fraction * static_cast<double>(videos)));
    Split s;
    s.heldout.assign(order.begin(), order.begin() + static_cast<long>(n));
    s.train.assign(order.begin() + static_cast<long>(n), order.end());
    std::sort(s.heldout.begin(), s.heldout.end());
    std::sort(s.train.begin(), s.train.end());
    return s;
}

std::vector<QAItem> qa_items(const Dataset &dataset, const std::vector<std::size_t> &indices) {
    std::vector<QAItem> out;
    for (auto i : indices) {
        const auto &it = dataset.items.at(i);
        if (!it.stream.frames.defined()) {
            throw DataError("video " + std::to_string(i) + " has no loaded stream");
        }
        if (it.qa.empty()) {
            continue;
        }
        out.push_back({&it.stream, it.qa});
    }
    return out;
}

} // namespace vstream
