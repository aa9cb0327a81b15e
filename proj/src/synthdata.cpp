#include "vstream/synthdata.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "vstream/container.hpp"
#include "vstream/errors.hpp"
#include "vstream/tokenizer.hpp"

namespace vstream {

using nlohmann::json;

void EventPlan::validate() const {
    if (num_clips <= 0) {
        throw DataError("event plan: num_clips must be positive");
    }
    if (alphabet <= 0 || alphabet > Vocab::get().max_symbols()) {
        throw DataError("event plan: alphabet size " + std::to_string(alphabet) + " unsupported");
    }
    std::set<int> used;
    for (const auto &e : events) {
        if (e.clip < 0 || e.clip >= num_clips) {
            throw DataError("event plan: clip " + std::to_string(e.clip) + " outside [0, " +
                            std::to_string(num_clips) + ")");
        }
        if (e.symbol < 0 || e.symbol >= alphabet) {
            throw DataError("event plan: symbol " + std::to_string(e.symbol) + " outside alphabet");
        }
        if (!used.insert(e.clip).second) {
            throw DataError("event plan: clip " + std::to_string(e.clip) + " has more than one event");
        }
    }
}

int EventPlan::symbol_at(int clip) const {
    for (const auto &e : events) {
        if (e.clip == clip) {
            return e.symbol;
        }
    }
    return -1;
}

std::vector<int> EventPlan::clips_with(int symbol) const {
    std::vector<int> out;
    for (const auto &e : events) {
        if (e.symbol == symbol) {
            out.push_back(e.clip);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<int> EventPlan::event_clips() const {
    std::vector<int> out;
    for (const auto &e : events) {
        out.push_back(e.clip);
    }
    std::sort(out.begin(), out.end());
    return out;
}

int EventPlan::distinct_symbols() const {
    std::set<int> s;
    for (const auto &e : events) {
        s.insert(e.symbol);
    }
    return static_cast<int>(s.size());
}

SymbolBasis::SymbolBasis(int alphabet, int channels, std::uint64_t seed) : alphabet_(alphabet), channels_(channels) {
    if (alphabet <= 0 || channels < alphabet) {
        throw ConfigError("symbol basis: need channels >= alphabet, got " + std::to_string(channels) + " < " +
                          std::to_string(alphabet));
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    Eigen::MatrixXd m(channels, alphabet);
    for (int j = 0; j < alphabet; ++j) {
        for (int i = 0; i < channels; ++i) {
            m(i, j) = dist(rng);
        }
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(channels, alphabet);
    dirs_.resize(static_cast<std::size_t>(alphabet * channels));
    for (int s = 0; s < alphabet; ++s) {
        for (int i = 0; i < channels; ++i) {
            dirs_[static_cast<std::size_t>(s * channels + i)] = q(i, s);
        }
    }
}

std::span<const double> SymbolBasis::direction(int symbol) const {
    if (symbol < 0 || symbol >= alphabet_) {
        throw DataError("symbol " + std::to_string(symbol) + " outside basis");
    }
    return std::span<const double>(dirs_).subspan(static_cast<std::size_t>(symbol * channels_),
                                                   static_cast<std::size_t>(channels_));
}

VideoStream gen_video(const EventPlan &plan, const FeatureGeometry &g, const SymbolBasis &basis) {
    plan.validate();
    if (g.raw_tokens % 4 != 0) {
        throw ConfigError("raw_tokens: must be divisible by 4");
    }
    if (basis.channels() != g.merged_channels()) {
        throw ConfigError("symbol basis channel count does not match 4 * raw_channels");
    }
    if (plan.alphabet > basis.alphabet()) {
        throw DataError("plan alphabet exceeds symbol basis");
    }
    const auto t = static_cast<std::size_t>(g.frames_per_clip);
    const auto n0 = static_cast<std::size_t>(g.raw_tokens);
    const auto c = static_cast<std::size_t>(g.raw_channels);
    const auto frames = t * static_cast<std::size_t>(plan.num_clips);
    std::vector<double> v(frames * n0 * c);
    std::mt19937_64 rng(plan.seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (auto &x : v) {
        x = plan.noise * noise(rng);
    }
    for (const auto &e : plan.events) {
        auto dir = basis.direction(e.symbol);
        for (std::size_t f = 0; f < t; ++f) {
            const auto frame = static_cast<std::size_t>(e.clip) * t + f;
            for (std::size_t i = 0; i < n0; ++i) {
                const auto member = i % 4;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    v[(frame * n0 + i) * c + ch] += e.intensity * dir[member * c + ch];
                }
            }
        }
    }
    VideoStream s;
    s.frames = Tensor::from({frames, n0, c}, std::move(v));
    s.fps = g.fps;
    return s;
}

const char *question_kind_name(QuestionKind kind) {
    switch (kind) {
    case QuestionKind::what_at_time: return "what-at-time";
    case QuestionKind::when_symbol: return "when-symbol";
    case QuestionKind::global_count: return "global-count";
    }
    return "?";
}

QuestionKind parse_question_kind(const std::string &name) {
    if (name == "what-at-time") return QuestionKind::what_at_time;
    if (name == "when-symbol") return QuestionKind::when_symbol;
    if (name == "global-count") return QuestionKind::global_count;
    throw DataError("unknown question kind '" + name + "'");
}

QASample make_what_at_time(const EventPlan &plan, const FeatureGeometry &g, int clip) {
    if (clip < 0 || clip >= plan.num_clips) {
        throw DataError("what-at-time: clip " + std::to_string(clip) + " outside plan");
    }
    const auto &v = Vocab::get();
    QASample q;
    q.kind = QuestionKind::what_at_time;
    q.clip = clip;
    q.question = tokenize("What symbol appears from");
    append_number(q.question, static_cast<long>(clip) * g.frames_per_clip / g.fps);
    q.question.push_back(v.id("to"));
    append_number(q.question, static_cast<long>(clip + 1) * g.frames_per_clip / g.fps);
    for (int id : tokenize("seconds ?")) {
        q.question.push_back(id);
    }
    const int s = plan.symbol_at(clip);
    q.answer = {s >= 0 ? v.symbol(s) : v.nothing()};
    q.grounding = {clip};
    return q;
}

QASample make_when_symbol(const EventPlan &plan, int symbol) {
    const auto &v = Vocab::get();
    auto clips = plan.clips_with(symbol);
    if (clips.empty()) {
        throw DataError("when-symbol: symbol " + std::to_string(symbol) + " does not occur");
    }
    QASample q;
    q.kind = QuestionKind::when_symbol;
    q.symbol = symbol;
    q.question = tokenize("When does symbol");
    q.question.push_back(v.symbol(symbol));
    for (int id : tokenize("appear ?")) {
        q.question.push_back(id);
    }
    q.answer = {v.bucket(clips.front() * 4 / plan.num_clips)};
    q.grounding = clips;
    return q;
}

QASample make_global_count(const EventPlan &plan) {
    if (plan.events.empty()) {
        throw DataError("global-count: plan has no events");
    }
    QASample q;
    q.kind = QuestionKind::global_count;
    q.question = tokenize("How many distinct symbols appear ?");
    append_number(q.answer, plan.distinct_symbols());
    q.grounding = plan.event_clips();
    return q;
}

std::vector<QASample> gen_qa(const EventPlan &plan, const FeatureGeometry &g) {
    plan.validate();
    if (plan.events.empty()) {
        throw DataError("gen_qa: plan has no events");
    }
    std::vector<QASample> out;
    for (int clip : plan.event_clips()) {
        out.push_back(make_what_at_time(plan, g, clip));
    }
    std::set<int> symbols;
    for (const auto &e : plan.events) {
        symbols.insert(e.symbol);
    }
    for (int s : symbols) {
        out.push_back(make_when_symbol(plan, s));
    }
    out.push_back(make_global_count(plan));
    return out;
}

bool validate_qa(const EventPlan &plan, const FeatureGeometry &g, const QASample &sample) {
    QASample expect;
    try {
        switch (sample.kind) {
        case QuestionKind::what_at_time: expect = make_what_at_time(plan, g, sample.clip); break;
        case QuestionKind::when_symbol: expect = make_when_symbol(plan, sample.symbol); break;
        case QuestionKind::global_count: expect = make_global_count(plan); break;
        }
    } catch (const DataError &) {
        return false;
    }
    for (int c : sample.grounding) {
        if (c < 0 || c >= plan.num_clips) {
            return false;
        }
    }
    return !sample.grounding.empty() && expect.question == sample.question && expect.answer == sample.answer &&
           expect.grounding == sample.grounding;
}

EventPlan random_plan(const PlanOptions &o, std::uint64_t seed) {
    if (o.min_events < 1 || o.max_events < o.min_events || o.max_events > o.num_clips) {
        throw ConfigError("event counts must satisfy 1 <= min_events <= max_events <= num_clips");
    }
    std::mt19937_64 rng(seed);
    EventPlan p;
    p.num_clips = o.num_clips;
    p.alphabet = o.alphabet;
    p.noise = o.noise;
    p.seed = rng();
    std::uniform_int_distribution<int> count(o.min_events, o.max_events);
    const int n = count(rng);
    std::vector<int> clips(static_cast<std::size_t>(o.num_clips));
    std::iota(clips.begin(), clips.end(), 0);
    std::shuffle(clips.begin(), clips.end(), rng);
    clips.resize(static_cast<std::size_t>(n));
    std::sort(clips.begin(), clips.end());
    std::uniform_int_distribution<int> sym(0, o.alphabet - 1);
    for (int c : clips) {
        p.events.push_back({c, sym(rng), o.intensity});
    }
    return p;
}

LongVideo concat_videos(const std::vector<LongVideo> &parts, const FeatureGeometry &g) {
    if (parts.empty()) {
        throw DataError("concat_videos: nothing to concatenate");
    }
    LongVideo out;
    out.plan.alphabet = parts.front().plan.alphabet;
    out.plan.noise = parts.front().plan.noise;
    out.plan.seed = parts.front().plan.seed;
    const int fps = parts.front().stream.fps;
    std::vector<double> frames;
    Shape frame_shape;
    std::vector<int> offsets;
    for (const auto &p : parts) {
        if (p.stream.fps != fps) {
            throw DataError("concat_videos: frame rate mismatch (" + std::to_string(p.stream.fps) + " vs " +
                            std::to_string(fps) + ")");
        }
        if (p.stream.frame_count() != static_cast<std::size_t>(p.plan.num_clips * g.frames_per_clip)) {
            throw DataError("concat_videos: part length is not a whole number of clips");
        }
        Shape fs(p.stream.frames.shape().begin() + 1, p.stream.frames.shape().end());
        if (!frame_shape.empty() && fs != frame_shape) {
            throw DataError("concat_videos: frame geometry mismatch");
        }
        frame_shape = fs;
        offsets.push_back(out.plan.num_clips);
        for (const auto &e : p.plan.events) {
            out.plan.events.push_back({e.clip + out.plan.num_clips, e.symbol, e.intensity});
        }
        out.plan.num_clips += p.plan.num_clips;
        auto fv = p.stream.frames.values();
        frames.insert(frames.end(), fv.begin(), fv.end());
    }
    Shape shape{frames.size() / shape_numel(frame_shape)};
    shape.insert(shape.end(), frame_shape.begin(), frame_shape.end());
    out.stream.frames = Tensor::from(shape, std::move(frames));
    out.stream.fps = fps;

    std::set<int> symbols_done;
    bool count_done = false;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        for (const auto &q : parts[i].qa) {
            switch (q.kind) {
            case QuestionKind::what_at_time:
                out.qa.push_back(make_what_at_time(out.plan, g, q.clip + offsets[i]));
                break;
            case QuestionKind::when_symbol:
                if (symbols_done.insert(q.symbol).second) {
                    out.qa.push_back(make_when_symbol(out.plan, q.symbol));
                }
                break;
            case QuestionKind::global_count:
                if (!count_done) {
                    out.qa.push_back(make_global_count(out.plan));
                    count_done = true;
                }
                break;
            }
        }
    }
    return out;
}

std::size_t Dataset::question_count() const {
    std::size_t n = 0;
    for (const auto &it : items) {
        n += it.qa.size();
    }
    return n;
}

Dataset generate_dataset(const DatasetOptions &o) {
    if (o.concat_parts < 1 || o.plan.num_clips % o.concat_parts != 0) {
        throw ConfigError("concat_parts: must divide num_clips");
    }
    if (o.num_videos <= 0 && o.num_questions <= 0) {
        throw ConfigError("dataset needs num_videos or num_questions");
    }
    SymbolBasis basis(o.plan.alphabet, o.geometry.merged_channels(), o.basis_seed);
    Dataset ds;
    ds.geometry = o.geometry;
    std::size_t questions = 0;
    for (int v = 0;; ++v) {
        if (o.num_videos > 0 && v >= o.num_videos) {
            break;
        }
        if (o.num_videos <= 0 && questions >= static_cast<std::size_t>(o.num_questions)) {
            break;
        }
        const std::uint64_t vseed = o.seed * 1000003ull + static_cast<std::uint64_t>(v);
        LongVideo video;
        if (o.concat_parts == 1) {
            video.plan = random_plan(o.plan, vseed);
            video.stream = gen_video(video.plan, o.geometry, basis);
            video.qa = gen_qa(video.plan, o.geometry);
        } else {
            PlanOptions part = o.plan;
            part.num_clips = o.plan.num_clips / o.concat_parts;
            part.min_events = std::max(1, o.plan.min_events / o.concat_parts);
            part.max_events = std::max(part.min_events, std::min(part.num_clips, o.plan.max_events / o.concat_parts));
            std::vector<LongVideo> pieces;
            for (int p = 0; p < o.concat_parts; ++p) {
                LongVideo piece;
                piece.plan = random_plan(part, vseed * 31ull + static_cast<std::uint64_t>(p));
                piece.stream = gen_video(piece.plan, o.geometry, basis);
                piece.qa = gen_qa(piece.plan, o.geometry);
                pieces.push_back(std::move(piece));
            }
            video = concat_videos(pieces, o.geometry);
        }
        if (o.num_videos <= 0) {
            const auto room = static_cast<std::size_t>(o.num_questions) - questions;
            if (video.qa.size() > room) {
                video.qa.resize(room);
            }
        }
        questions += video.qa.size();
        DatasetItem item;
        char name[64];
        std::snprintf(name, sizeof name, "streams/video_%05d.vsds", v);
        item.stream_file = name;
        item.plan = std::move(video.plan);
        item.qa = std::move(video.qa);
        item.stream = std::move(video.stream);
        ds.items.push_back(std::move(item));
    }
    return ds;
}

void save_stream(const std::filesystem::path &path, const VideoStream &stream) {
    write_container(path, kDatasetMagic,
                    {{"frames", stream.frames.shape(), stream.frames.to_vector()},
                     {"fps", {1}, {static_cast<double>(stream.fps)}}});
}

VideoStream load_stream(const std::filesystem::path &path) {
    auto entries = read_container(path, kDatasetMagic);
    VideoStream s;
    bool have_frames = false;
    for (auto &e : entries) {
        if (e.name == "frames") {
            if (e.shape.size() != 3) {
                throw CheckpointError(path.string() + ": frames must be rank 3");
            }
            s.frames = Tensor::from(e.shape, std::move(e.values));
            have_frames = true;
        } else if (e.name == "fps") {
            s.fps = static_cast<int>(e.values.at(0));
        }
    }
    if (!have_frames) {
        throw CheckpointError(path.string() + ": no frames entry");
    }
    return s;
}

namespace {

json plan_to_json(const EventPlan &p) {
    json events = json::array();
    for (const auto &e : p.events) {
        events.push_back({{"clip", e.clip}, {"symbol", e.symbol}, {"intensity", e.intensity}});
    }
    return {{"num_clips", p.num_clips}, {"alphabet", p.alphabet}, {"noise", p.noise}, {"seed", p.seed},
            {"events", events}};
}

EventPlan plan_from_json(const json &j) {
    EventPlan p;
    p.num_clips = j.at("num_clips").get<int>();
    p.alphabet = j.at("alphabet").get<int>();
    p.noise = j.at("noise").get<double>();
    p.seed = j.at("seed").get<std::uint64_t>();
    for (const auto &e : j.at("events")) {
        p.events.push_back({e.at("clip").get<int>(), e.at("symbol").get<int>(), e.at("intensity").get<double>()});
    }
    return p;
}

} // namespace

void save_dataset(const std::filesystem::path &dir, const Dataset &ds) {
    std::filesystem::create_directories(dir / "streams");
    {
        std::ofstream meta(dir / "meta.json");
        meta << json{{"frames_per_clip", ds.geometry.frames_per_clip},
                     {"raw_tokens", ds.geometry.raw_tokens},
                     {"raw_channels", ds.geometry.raw_channels},
                     {"fps", ds.geometry.fps},
                     {"videos", ds.items.size()},
                     {"questions", ds.question_count()}}
                    .dump(2)
             << "\n";
    }
    std::ofstream videos(dir / "videos.jsonl");
    std::ofstream samples(dir / "dataset.jsonl");
    if (!videos || !samples) {
        throw DataError("cannot write dataset files under " + dir.string());
    }
    for (std::size_t i = 0; i < ds.items.size(); ++i) {
        const auto &it = ds.items[i];
        videos << json{{"video", i}, {"stream", it.stream_file}, {"plan", plan_to_json(it.plan)}}.dump() << "\n";
        for (const auto &q : it.qa) {
            samples << json{{"video", i},
                            {"stream", it.stream_file},
                            {"kind", question_kind_name(q.kind)},
                            {"clip", q.clip},
                            {"symbol", q.symbol},
                            {"question", detokenize(q.question)},
                            {"question_tokens", q.question},
                            {"answer_tokens", q.answer},
                            {"grounding", q.grounding}}
                           .dump()
                    << "\n";
        }
        if (it.stream.frames.defined()) {
            save_stream(dir / it.stream_file, it.stream);
        }
    }
}

Dataset load_dataset(const std::filesystem::path &dir, bool load_streams) {
    std::ifstream meta_in(dir / "meta.json");
    if (!meta_in) {
        throw DataError("dataset not found: " + (dir / "meta.json").string());
    }
    Dataset ds;
    try {
        json meta = json::parse(meta_in);
        ds.geometry.frames_per_clip = meta.at("frames_per_clip").get<int>();
        ds.geometry.raw_tokens = meta.at("raw_tokens").get<int>();
        ds.geometry.raw_channels = meta.at("raw_channels").get<int>();
        ds.geometry.fps = meta.at("fps").get<int>();

        std::ifstream videos(dir / "videos.jsonl");
        std::string line;
        while (std::getline(videos, line)) {
            if (line.empty()) continue;
            auto j = json::parse(line);
            DatasetItem it;
            it.stream_file = j.at("stream").get<std::string>();
            it.plan = plan_from_json(j.at("plan"));
            ds.items.push_back(std::move(it));
        }
        std::ifstream samples(dir / "dataset.jsonl");
        while (std::getline(samples, line)) {
            if (line.empty()) continue;
            auto j = json::parse(line);
            const auto v = j.at("video").get<std::size_t>();
            if (v >= ds.items.size()) {
                throw DataError("dataset sample refers to unknown video " + std::to_string(v));
            }
            QASample q;
            q.kind = parse_question_kind(j.at("kind").get<std::string>());
            q.clip = j.at("clip").get<int>();
            q.symbol = j.at("symbol").get<int>();
            q.question = j.at("question_tokens").get<std::vector<int>>();
            q.answer = j.at("answer_tokens").get<std::vector<int>>();
            q.grounding = j.at("grounding").get<std::vector<int>>();
            ds.items[v].qa.push_back(std::move(q));
        }
    } catch (const json::exception &e) {
        throw DataError(std::string("malformed dataset record: ") + e.what());
    }
    if (load_streams) {
        for (auto &it : ds.items) {
            it.stream = load_stream(dir / it.stream_file);
        }
    }
    return ds;
}

} // namespace vstream
