#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "test_support.hpp"
#include "vstream/errors.hpp"
#include "vstream/evaluation.hpp"
#include "vstream/tokenizer.hpp"
#include "vstream/training.hpp"

using namespace vstream;
using vstream::testing::uniform;

namespace {

// T=2, P=1, N=4, C=32: two frames of 16 raw 8-channel tokens per clip.
FeatureGeometry tiny_geometry() {
    FeatureGeometry g;
    g.frames_per_clip = 2;
    g.raw_tokens = 16;
    g.raw_channels = 8;
    return g;
}

ModelConfig tiny_config(int v = 2) {
    auto c = default_model_config();
    c.encoder.frames_per_clip = 2;
    c.encoder.tokens_per_frame = 1;
    c.encoder.merged_tokens = 4;
    c.encoder.feature_channels = 32;
    c.encoder_lm.dim = 16;
    c.encoder_lm.num_layers = 2;
    c.encoder_lm.num_heads = 2;
    c.encoder_lm.tap_layer = 1;
    c.encoder_lm.max_sequence_length = 128;
    c.reader.lm.dim = 16;
    c.reader.lm.num_layers = 2;
    c.reader.lm.num_heads = 2;
    c.reader.lm.max_sequence_length = 128;
    c.reader.projector_hidden = 16;
    c.selector.count = v;
    return c;
}

VideoStream tiny_stream(int clips, std::uint64_t seed) {
    EventPlan p;
    p.num_clips = clips;
    p.seed = seed;
    p.events = {{0, 1, 1.0}, {clips - 1, 3, 1.0}};
    return gen_video(p, tiny_geometry(), SymbolBasis(10, 32, kDefaultBasisSeed));
}

bool same_params(const ParamList &a, const ParamList &b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].name != b[i].name || a[i].tensor.to_vector() != b[i].tensor.to_vector()) return false;
    return true;
}

std::vector<std::vector<double>> snapshot(const ParamList &params) {
    std::vector<std::vector<double>> out;
    for (const auto &p : params) out.push_back(p.tensor.to_vector());
    return out;
}

} // namespace

TEST_CASE("reader input is V*T*P memory tokens plus the question") {
    VideoStreamingModel model(tiny_config(3), 1);
    model.set_stage(1);
    auto bank = model.encode(tiny_stream(6, 2));
    auto q = tokenize("What symbol appears from 2 to 4 seconds ?");
    auto a = model.answer(bank, q);
    CHECK(a.reader_memory_tokens == 3 * 2 * 1);
    CHECK(a.reader_input_length == 6 + q.size());
    CHECK(a.selection.indices.size() == 3);
    auto b = model.answer(bank, q);
    CHECK(a.tokens == b.tokens);
    CHECK(a.selection.indices == b.selection.indices);

    SUBCASE("V larger than K reads every clip") {
        auto small = model.encode(tiny_stream(2, 3));
        CHECK(model.answer(small, q).reader_memory_tokens == 2 * 2);
    }
}

TEST_CASE("answering without trained parameters is rejected") {
    VideoStreamingModel model(tiny_config(), 4);
    auto bank = model.encode(tiny_stream(3, 5));
    CHECK_THROWS_AS(model.answer(bank, tokenize("How many distinct symbols appear ?")), CheckpointError);
}

TEST_CASE("banks from a different geometry are rejected") {
    VideoStreamingModel model(tiny_config(), 6);
    model.set_stage(1);
    auto bank = model.encode(tiny_stream(3, 7));
    bank.dim = 32;
    CHECK_THROWS_AS(model.answer(bank, tokenize("How many distinct symbols appear ?")), CheckpointError);
}

TEST_CASE("caption loss is scored on caption positions only") {
    VideoStreamingModel model(tiny_config(), 8);
    auto caps = make_caption_set(model.encoder(), tiny_geometry(), PlanOptions{}, 2, 0.0, 9);
    const auto &c = caps[0];
    REQUIRE_FALSE(c.prompt.empty());
    auto summary = init_summarization(c.features, 1);
    std::size_t off = 0;
    auto logits = clip_caption_logits(c.features, summary, model.encoder().projector(), model.encoder().lm(), c.caption,
                                      &off, c.prompt);
    CHECK(off == c.prompt.size() + 2 * 4 + 2);
    double manual = 0.0;
    for (std::size_t i = 0; i + 1 < c.caption.size(); ++i) {
        const std::size_t row = off + i;
        double mx = -INFINITY;
        for (std::size_t v = 0; v < logits.cols(); ++v) mx = std::max(mx, logits.at(row, v));
        double z = 0.0;
        for (std::size_t v = 0; v < logits.cols(); ++v) z += std::exp(logits.at(row, v) - mx);
        manual -= logits.at(row, static_cast<std::size_t>(c.caption[i + 1])) - mx - std::log(z);
    }
    manual /= static_cast<double>(c.caption.size() - 1);
    CHECK(caption_loss(model.encoder(), c).item() == doctest::Approx(manual).epsilon(1e-12));

    SUBCASE("timed captions name the clip span") {
        const auto text = detokenize(c.caption);
        CHECK(text.find("seconds") != std::string::npos);
        CHECK(detokenize(c.prompt).rfind("This clip is sampled in", 0) == 0);
    }
    SUBCASE("without time prompts the caption carries no time") {
        auto cfg = tiny_config();
        cfg.encoder.prompt_mode = TimePromptMode::none;
        VideoStreamingModel plain(cfg, 8);
        auto pc = make_caption_set(plain.encoder(), tiny_geometry(), PlanOptions{}, 1, 0.0, 9);
        CHECK(pc[0].prompt.empty());
        CHECK(detokenize(pc[0].caption).find("seconds") == std::string::npos);
    }
}

TEST_CASE("stage 1 overfits a four-sample batch") {
    auto cfg = tiny_config();
    cfg.encoder_lm.dim = 32;
    cfg.encoder_lm.num_heads = 4;
    VideoStreamingModel model(cfg, 10);
    auto caps = make_caption_set(model.encoder(), tiny_geometry(), PlanOptions{}, 4, 0.0, 11);
    Stage1Options o;
    o.align_steps = 0;
    o.instruct_steps = 500;
    o.reader_steps = 0;
    o.batch = 4;
    auto log = train_stage1(model, caps, {}, o);
    double best = INFINITY;
    long at = -1;
    for (const auto &s : log.steps)
        if (s.loss < best) {
            best = s.loss;
            at = s.step;
        }
    INFO("best loss " << best << " at step " << at);
    CHECK(best < 0.05);
    CHECK(model.stage() == 1);
}

TEST_CASE("alignment phase leaves the encoder LM untouched") {
    VideoStreamingModel model(tiny_config(), 12);
    ParamList lm_params, proj_params;
    model.encoder().lm().collect(lm_params, "lm");
    model.encoder().projector().collect(proj_params, "proj");
    const auto lm_before = snapshot(lm_params);
    const auto proj_before = snapshot(proj_params);
    auto caps = make_caption_set(model.encoder(), tiny_geometry(), PlanOptions{}, 4, 0.0, 13);
    Stage1Options o;
    o.align_steps = 5;
    o.instruct_steps = 0;
    o.reader_steps = 0;
    train_stage1(model, caps, {}, o);
    CHECK(snapshot(lm_params) == lm_before);
    CHECK(snapshot(proj_params) != proj_before);
}

TEST_CASE("reader pretraining touches only the reader") {
    VideoStreamingModel model(tiny_config(), 14);
    PlanOptions po;
    auto rcaps = make_reader_caption_set(tiny_geometry(), po, 2, 6, 0.2, 15);
    for (const auto &r : rcaps) {
        REQUIRE(r.clips.size() == 2);
        CHECK(r.clips[0].index < r.clips[1].index);
        for (const auto &c : r.clips) {
            CHECK(c.span.start == c.index * 2);
            CHECK(c.span.end == c.span.start + 2);
            CHECK((c.index >= 0 && c.index < po.num_clips));
        }
    }
    ReaderCaptionSource source(tiny_geometry(), po, 2, 0.2, 15);
    CHECK(source.sample(4).caption == rcaps[4].caption);
    CHECK(source.sample(4).clips[1].frames.to_vector() == rcaps[4].clips[1].frames.to_vector());
    const auto enc_before = snapshot(model.encoder_parameters());
    const auto reader_before = snapshot(model.reader_parameters());
    Stage1Options o;
    o.align_steps = 0;
    o.instruct_steps = 0;
    o.reader_steps = 3;
    o.batch = 2;
    auto caps = make_caption_set(model.encoder(), tiny_geometry(), po, 2, 0.0, 16);
    train_stage1(model, caps, rcaps, o);
    CHECK(snapshot(model.encoder_parameters()) == enc_before);
    CHECK(snapshot(model.reader_parameters()) != reader_before);
    CHECK_THROWS_AS(train_stage1(model, caps, std::vector<ReaderCaptionSample>{}, o), DataError);

    const auto streamed_before = snapshot(model.reader_parameters());
    train_stage1(model, caps, source, o);
    CHECK(snapshot(model.encoder_parameters()) == enc_before);
    CHECK(snapshot(model.reader_parameters()) != streamed_before);
}

TEST_CASE("dense captions") {
    auto c = dense_caption({{16, 24}, {24, 32}}, {1, -1}, 1);
    CHECK(c == tokenize("from 16 to 24 seconds B , from 24 to 32 seconds nothing ."));
}

TEST_CASE("answering many questions never re-encodes") {
    VideoStreamingModel model(tiny_config(), 17);
    model.set_stage(1);
    auto bank = model.encode(tiny_stream(5, 18));
    const auto before = model.encoder().steps_encoded();
    for (const char *q : {"What symbol appears from 0 to 2 seconds ?", "When does symbol B appear ?",
                          "How many distinct symbols appear ?", "What symbol appears from 8 to 10 seconds ?",
                          "When does symbol D appear ?"}) {
        model.answer(bank, tokenize(q));
    }
    CHECK(model.encoder().steps_encoded() == before);
}

TEST_CASE("unselected memories never reach the reader") {
    VideoStreamingModel model(tiny_config(2), 19);
    model.set_stage(1);
    auto bank = model.encode(tiny_stream(6, 20));
    auto q = tokenize("What symbol appears from 4 to 6 seconds ?");
    auto sel = model.select(model.scores(bank, q), SelectMode::inference, 0);
    auto blanked = bank;
    for (auto &e : blanked.entries)
        if (!sel.hard[static_cast<std::size_t>(e.index)]) e.memory = Tensor::zeros(e.memory.shape());
    auto a = assemble(bank, sel), b = assemble(blanked, sel);
    CHECK(a.to_vector() == b.to_vector());
    const auto &reader = model.reader();
    auto la = reader.lm().forward(reader.pack(a, q), build_causal_mask(a.rows() + q.size()));
    auto lb = reader.lm().forward(reader.pack(b, q), build_causal_mask(b.rows() + q.size()));
    CHECK(la.logits.to_vector() == lb.logits.to_vector());
    CHECK(reader.generate(a, q, {}) == reader.generate(b, q, {}));
}

TEST_CASE("joint loss reaches the encoder") {
    VideoStreamingModel model(tiny_config(2), 21);
    model.set_stage(1);
    auto stream = tiny_stream(4, 22);
    EventPlan p;
    p.num_clips = 4;
    p.events = {{0, 1, 1.0}, {3, 3, 1.0}};
    auto qa = gen_qa(p, tiny_geometry());
    auto grad_norm = [](const ParamList &params) {
        double n = 0.0;
        for (const auto &pr : params)
            if (pr.tensor.has_grad())
                for (double g : pr.tensor.grad()) n += g * g;
        return n;
    };
    for (bool through : {true, false}) {
        zero_grads(model.parameters());
        backward(stage2_loss(model, stream, qa, true, 1.0, 0.5, 7, through));
        CHECK(grad_norm(model.encoder_parameters()) > 0.0);
        CHECK(grad_norm(model.reader_parameters()) > 0.0);
    }
    SUBCASE("answer loss alone reaches the encoder through the memories") {
        zero_grads(model.parameters());
        backward(stage2_loss(model, stream, qa, false, 1.0, 0.0, 7, true));
        ParamList lm;
        model.encoder().lm().collect(lm, "lm");
        CHECK(grad_norm(lm) > 0.0);
    }
    SUBCASE("KL weight zero matches the weak objective") {
        const double a = stage2_loss(model, stream, qa, true, 1.0, 0.0, 7).item();
        const double b = stage2_loss(model, stream, qa, false, 1.0, 0.5, 7).item();
        CHECK(a == b);
    }
    zero_grads(model.parameters());
}

TEST_CASE("stage 2 requires a stage-1 model") {
    VideoStreamingModel model(tiny_config(), 23);
    auto stream = tiny_stream(3, 24);
    EventPlan p;
    p.num_clips = 3;
    p.events = {{0, 1, 1.0}};
    std::vector<QAItem> items{{&stream, gen_qa(p, tiny_geometry())}};
    CHECK_THROWS_AS(train_stage2(model, items, {}), CheckpointError);
}

TEST_CASE("intersection over prediction") {
    CHECK(intersection_over_prediction({1, 2, 3, 4}, {2}) == 0.25);
    CHECK(intersection_over_prediction({2}, {2, 5}) == 1.0);
    CHECK(intersection_over_prediction({0, 1}, {2}) == 0.0);
    CHECK(intersection_over_prediction({}, {2}) == 0.0);
    CHECK(intersection_over_prediction({3, 5, 7, 9}, {5, 9, 11}) == 0.5);
}

TEST_CASE("random selection hits a single grounded clip a quarter of the time") {
    // K=16, V=4: hypergeometric 1 - C(15,4)/C(16,4) = 4/16.
    const int K = 16, V = 4, draws = 4000;
    const double expect = 1.0 - (15.0 * 14 * 13 * 12) / (16.0 * 15 * 14 * 13);
    CHECK(expect == doctest::Approx(0.25).epsilon(1e-15));
    auto s = Tensor::full({static_cast<std::size_t>(K)}, 0.0);
    int hits = 0;
    double iop = 0.0;
    for (int d = 0; d < draws; ++d) {
        auto r = gumbel_topk(s, V, 1.0, SelectMode::train, 77 + static_cast<std::uint64_t>(d));
        const std::vector<int> gt{d % K};
        iop += intersection_over_prediction(r.indices, gt);
        hits += intersection_over_prediction(r.indices, gt) > 0.0;
    }
    const double rate = static_cast<double>(hits) / draws;
    const double sd = std::sqrt(expect * (1 - expect) / draws);
    CHECK(std::abs(rate - expect) <= 4 * sd);
    CHECK(iop / draws == doctest::Approx(rate / V).epsilon(1e-12));
}

TEST_CASE("regime names") {
    for (auto r : {Regime::weak, Regime::warmup, Regime::mixed, Regime::warmup_mixed})
        CHECK(parse_regime(regime_name(r)) == r);
    CHECK_THROWS_AS(parse_regime("supervised"), ConfigError);
}

TEST_CASE("dataset split is deterministic and disjoint") {
    auto a = split_dataset(50, 0.2, 3);
    auto b = split_dataset(50, 0.2, 3);
    CHECK(a.train == b.train);
    CHECK(a.heldout.size() == 10);
    std::vector<int> seen(50, 0);
    for (auto i : a.train) ++seen[i];
    for (auto i : a.heldout) ++seen[i];
    for (int s : seen) CHECK(s == 1);
}

TEST_CASE("checkpoint round trip") {
    VideoStreamingModel model(tiny_config(), 25);
    model.set_stage(2);
    const auto dir = std::filesystem::temp_directory_path() / "vstream_ckpt_test";
    std::filesystem::create_directories(dir);
    model.save(dir / "m.vstt");
    VideoStreamingModel other(tiny_config(), 99);
    CHECK_FALSE(same_params(model.parameters(), other.parameters()));
    other.load(dir / "m.vstt");
    CHECK(same_params(model.parameters(), other.parameters()));
    CHECK(other.stage() == 2);
    CHECK(other.encoder().fingerprint() == model.encoder().fingerprint());

    auto bank = model.encode(tiny_stream(4, 26));
    auto q = tokenize("When does symbol B appear ?");
    CHECK(model.answer(bank, q).tokens == other.answer(bank, q).tokens);

    auto wide = tiny_config();
    wide.encoder_lm.dim = 32;
    VideoStreamingModel mismatched(wide, 1);
    CHECK_THROWS_AS(mismatched.load(dir / "m.vstt"), CheckpointError);
    CHECK_THROWS_AS(other.load(dir / "missing.vstt"), CheckpointError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("evaluation is independent of the worker count") {
    VideoStreamingModel model(tiny_config(), 27);
    model.set_stage(1);
    DatasetOptions o;
    o.geometry = tiny_geometry();
    o.plan.num_clips = 6;
    o.plan.max_events = 4;
    o.num_questions = 30;
    auto ds = generate_dataset(o);
    std::vector<std::size_t> all(ds.items.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    auto one = eval_grounding(model, ds, all, {.multi_choice = true, .workers = 1});
    auto two = eval_grounding(model, ds, all, {.multi_choice = true, .workers = 2});
    CHECK(one.overall.count == ds.question_count());
    REQUIRE(one.records.size() == two.records.size());
    for (std::size_t i = 0; i < one.records.size(); ++i) {
        CHECK(one.records[i].answer == two.records[i].answer);
        CHECK(one.records[i].selected == two.records[i].selected);
    }
    const auto vocab = answer_vocabulary();
    for (const auto &r : one.records) {
        for (int t : r.answer) CHECK(std::find(vocab.begin(), vocab.end(), t) != vocab.end());
        CHECK(r.iop == intersection_over_prediction(r.selected, r.grounding));
    }
}
