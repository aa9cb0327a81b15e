#include <doctest.h>

#include <Eigen/Dense>
#include <filesystem>

#include "vstream/clip_encoder.hpp"
#include "vstream/errors.hpp"
#include "vstream/synthdata.hpp"
#include "vstream/tokenizer.hpp"

using namespace vstream;

namespace {

FeatureGeometry geom() { return {}; }

EventPlan plan_with(std::vector<Event> events, int clips = 16) {
    EventPlan p;
    p.num_clips = clips;
    p.seed = 42;
    p.events = std::move(events);
    return p;
}

} // namespace

TEST_CASE("symbol directions are orthonormal") {
    SymbolBasis b(10, 32, kDefaultBasisSeed);
    for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 10; ++j) {
            double dot = 0.0;
            auto di = b.direction(i), dj = b.direction(j);
            for (int c = 0; c < 32; ++c) dot += di[static_cast<std::size_t>(c)] * dj[static_cast<std::size_t>(c)];
            CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
        }
    CHECK_THROWS_AS(SymbolBasis(40, 32, 1), ConfigError);
}

TEST_CASE("video generation") {
    SymbolBasis basis(10, 32, kDefaultBasisSeed);
    SUBCASE("zero intensity leaves pure noise") {
        auto planted = plan_with({{3, 1, 0.0}, {7, 4, 0.0}});
        auto empty = plan_with({});
        CHECK(gen_video(planted, geom(), basis).frames.to_vector() == gen_video(empty, geom(), basis).frames.to_vector());
    }
    SUBCASE("same seed gives identical streams") {
        auto p = plan_with({{2, 5, 1.0}});
        CHECK(gen_video(p, geom(), basis).frames.to_vector() == gen_video(p, geom(), basis).frames.to_vector());
    }
    SUBCASE("planted clip carries the direction on every merged token") {
        auto p = plan_with({{2, 5, 1.0}});
        p.noise = 0.0;
        auto s = gen_video(p, geom(), basis);
        CHECK(s.frames.shape() == Shape{128, 64, 8});
        auto clip = merge_adjacent_tokens(Tensor::from({8, 64, 8}, std::vector<double>(s.frames.values().begin() + 2 * 8 * 512,
                                                                                     s.frames.values().begin() + 3 * 8 * 512)));
        auto dir = basis.direction(5);
        for (std::size_t t = 0; t < 8 * 16; ++t)
            for (std::size_t c = 0; c < 32; ++c) REQUIRE(clip.values()[t * 32 + c] == dir[c]);
    }
    SUBCASE("invalid plans") {
        CHECK_THROWS_AS(gen_video(plan_with({{16, 0, 1.0}}), geom(), basis), DataError);
        CHECK_THROWS_AS(gen_video(plan_with({{1, 10, 1.0}}), geom(), basis), DataError);
        CHECK_THROWS_AS(gen_video(plan_with({{1, 0, 1.0}, {1, 2, 1.0}}), geom(), basis), DataError);
    }
}

TEST_CASE("linear probe on raw clip features recovers planted symbols") {
    // Least-squares probe: train on one set of plans, score on fresh ones.
    SymbolBasis basis(10, 32, kDefaultBasisSeed);
    auto clip_means = [&](std::uint64_t seed, int videos, std::vector<Eigen::VectorXd> &x, std::vector<int> &y) {
        PlanOptions po;
        for (int v = 0; v < videos; ++v) {
            auto plan = random_plan(po, seed + static_cast<std::uint64_t>(v));
            auto s = gen_video(plan, geom(), basis);
            auto merged = merge_adjacent_tokens(s.frames);
            for (const auto &e : plan.events) {
                Eigen::VectorXd f = Eigen::VectorXd::Zero(33);
                const std::size_t first = static_cast<std::size_t>(e.clip) * 8 * 16;
                for (std::size_t t = first; t < first + 8 * 16; ++t)
                    for (std::size_t c = 0; c < 32; ++c) f[static_cast<long>(c)] += merged.values()[t * 32 + c] / 128.0;
                f[32] = 1.0;
                x.push_back(f);
                y.push_back(e.symbol);
            }
        }
    };
    std::vector<Eigen::VectorXd> xtr, xte;
    std::vector<int> ytr, yte;
    clip_means(100, 200, xtr, ytr);
    clip_means(9000, 100, xte, yte);
    Eigen::MatrixXd X(static_cast<long>(xtr.size()), 33), Y = Eigen::MatrixXd::Zero(static_cast<long>(xtr.size()), 10);
    for (std::size_t i = 0; i < xtr.size(); ++i) {
        X.row(static_cast<long>(i)) = xtr[i].transpose();
        Y(static_cast<long>(i), ytr[i]) = 1.0;
    }
    Eigen::MatrixXd W = X.colPivHouseholderQr().solve(Y);
    int correct = 0;
    for (std::size_t i = 0; i < xte.size(); ++i) {
        Eigen::VectorXd scores = W.transpose() * xte[i];
        Eigen::Index best;
        scores.maxCoeff(&best);
        correct += static_cast<int>(best) == yte[i];
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(xte.size());
    INFO("probe accuracy " << acc << " on " << xte.size() << " events");
    CHECK(acc > 0.99);
}

TEST_CASE("question generation") {
    const auto &v = Vocab::get();
    SUBCASE("single event") {
        auto p = plan_with({{3, 1, 1.0}});
        auto q = make_what_at_time(p, geom(), 3);
        CHECK(q.answer == std::vector<int>{v.symbol(1)});
        CHECK(q.grounding == std::vector<int>{3});
        CHECK(q.question == tokenize("What symbol appears from 24 to 32 seconds ?"));
    }
    SUBCASE("repeated symbol grounds on both clips") {
        auto p = plan_with({{2, 4, 1.0}, {9, 4, 1.0}, {5, 0, 1.0}});
        auto q = make_when_symbol(p, 4);
        CHECK(q.grounding == std::vector<int>{2, 9});
        CHECK(q.answer == std::vector<int>{v.bucket(0)});
        CHECK(q.question == tokenize("When does symbol E appear ?"));
        auto c = make_global_count(p);
        CHECK(c.answer == std::vector<int>{v.digit(2)});
        CHECK(c.grounding == std::vector<int>{2, 5, 9});
    }
    SUBCASE("empty plans have no questions") {
        CHECK_THROWS_AS(gen_qa(plan_with({}), geom()), DataError);
    }
    SUBCASE("every generated sample replays against its plan") {
        PlanOptions po;
        std::size_t n = 0;
        for (std::uint64_t s = 0; s < 200; ++s) {
            auto p = random_plan(po, s);
            for (const auto &q : gen_qa(p, geom())) {
                REQUIRE(validate_qa(p, geom(), q));
                REQUIRE_FALSE(q.grounding.empty());
                ++n;
            }
        }
        CHECK(n > 1000);
    }
    SUBCASE("tampered samples fail replay") {
        auto p = plan_with({{3, 1, 1.0}});
        auto q = make_what_at_time(p, geom(), 3);
        q.answer = {v.symbol(2)};
        CHECK_FALSE(validate_qa(p, geom(), q));
    }
}

TEST_CASE("concatenating videos") {
    SymbolBasis basis(10, 32, kDefaultBasisSeed);
    auto make = [&](EventPlan p) {
        LongVideo v;
        v.plan = p;
        v.stream = gen_video(p, geom(), basis);
        v.qa = gen_qa(p, geom());
        return v;
    };
    SUBCASE("one stream is the identity") {
        auto a = make(plan_with({{1, 2, 1.0}, {3, 0, 1.0}}, 4));
        auto c = concat_videos({a}, geom());
        CHECK(c.stream.frames.to_vector() == a.stream.frames.to_vector());
        REQUIRE(c.qa.size() == a.qa.size());
        for (std::size_t i = 0; i < a.qa.size(); ++i) {
            CHECK(c.qa[i].question == a.qa[i].question);
            CHECK(c.qa[i].grounding == a.qa[i].grounding);
        }
    }
    SUBCASE("second stream's clip 2 becomes clip 6") {
        auto a = make(plan_with({{0, 1, 1.0}}, 4));
        auto b = make(plan_with({{2, 3, 1.0}}, 4));
        auto c = concat_videos({a, b}, geom());
        CHECK(c.plan.num_clips == 8);
        bool found = false;
        for (const auto &q : c.qa) {
            if (q.kind == QuestionKind::what_at_time && q.clip == 6) {
                CHECK(q.grounding == std::vector<int>{6});
                CHECK(q.question == tokenize("What symbol appears from 48 to 56 seconds ?"));
                found = true;
            }
            CHECK(validate_qa(c.plan, geom(), q));
            for (int g : q.grounding) CHECK((g >= 0 && g < 8));
        }
        CHECK(found);
    }
    SUBCASE("frame rate mismatch") {
        auto a = make(plan_with({{0, 1, 1.0}}, 4));
        auto b = make(plan_with({{2, 3, 1.0}}, 4));
        b.stream.fps = 2;
        CHECK_THROWS_AS(concat_videos({a, b}, geom()), DataError);
    }
}

TEST_CASE("dataset generation and persistence") {
    DatasetOptions o;
    o.num_questions = 120;
    o.seed = 3;
    auto ds = generate_dataset(o);
    CHECK(ds.question_count() == 120);
    auto again = generate_dataset(o);
    REQUIRE(again.items.size() == ds.items.size());
    CHECK(again.items.back().stream.frames.to_vector() == ds.items.back().stream.frames.to_vector());

    const auto dir = std::filesystem::temp_directory_path() / "vstream_dataset_test";
    std::filesystem::remove_all(dir);
    save_dataset(dir, ds);
    auto back = load_dataset(dir);
    REQUIRE(back.items.size() == ds.items.size());
    for (std::size_t i = 0; i < ds.items.size(); ++i) {
        CHECK(back.items[i].stream.frames.to_vector() == ds.items[i].stream.frames.to_vector());
        CHECK(back.items[i].plan.events == ds.items[i].plan.events);
        REQUIRE(back.items[i].qa.size() == ds.items[i].qa.size());
        for (std::size_t j = 0; j < ds.items[i].qa.size(); ++j) {
            CHECK(back.items[i].qa[j].question == ds.items[i].qa[j].question);
            CHECK(back.items[i].qa[j].answer == ds.items[i].qa[j].answer);
            CHECK(back.items[i].qa[j].grounding == ds.items[i].qa[j].grounding);
            CHECK(validate_qa(back.items[i].plan, back.geometry, back.items[i].qa[j]));
        }
    }
    CHECK_THROWS_AS(load_dataset(dir / "nope"), DataError);

    DatasetOptions oc = o;
    oc.concat_parts = 2;
    auto cds = generate_dataset(oc);
    for (const auto &it : cds.items)
        for (const auto &q : it.qa) CHECK(validate_qa(it.plan, cds.geometry, q));
    std::filesystem::remove_all(dir);
}
