#include "vstream/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

#include <json.hpp>

#include "vstream/tokenizer.hpp"

namespace vstream {

std::string QuestionRecord::to_json() const {
    nlohmann::json j;
    j["video"] = video;
    j["kind"] = question_kind_name(kind);
    j["question"] = detokenize(question);
    j["expected"] = detokenize(expected);
    j["answer"] = detokenize(answer);
    j["grounding"] = grounding;
    j["selected"] = selected;
    j["similarities"] = similarities;
    j["iop"] = iop;
    j["hit"] = hit;
    j["correct"] = correct;
    j["joint"] = joint;
    return j.dump();
}

Metrics aggregate(const std::vector<QuestionRecord> &records) {
    Metrics m;
    m.count = records.size();
    if (records.empty()) {
        return m;
    }
    for (const auto &r : records) {
        m.hit_rate += r.hit ? 1.0 : 0.0;
        m.miop += r.iop;
        m.iop_half_rate += r.iop >= 0.5 ? 1.0 : 0.0;
        m.answer_accuracy += r.correct ? 1.0 : 0.0;
        m.joint_accuracy += r.joint ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(records.size());
    m.hit_rate /= n;
    m.miop /= n;
    m.iop_half_rate /= n;
    m.answer_accuracy /= n;
    m.joint_accuracy /= n;
    return m;
}

namespace {

nlohmann::json metrics_json(const Metrics &m) {
    return {{"count", m.count},           {"selection_hit_rate", m.hit_rate},
            {"miop", m.miop},             {"iop_ge_half", m.iop_half_rate},
            {"answer_accuracy", m.answer_accuracy}, {"joint_accuracy", m.joint_accuracy}};
}

std::vector<QuestionRecord> eval_video(const VideoStreamingModel &model, const Dataset &ds, std::size_t v,
                                       const Decoding &decoding) {
    const auto &item = ds.items.at(v);
    auto bank = model.encode(item.stream);
    std::vector<QuestionRecord> out;
    for (const auto &q : item.qa) {
        auto a = model.answer(bank, q.question, decoding);
        QuestionRecord r;
        r.video = v;
        r.kind = q.kind;
        r.clip = q.clip;
        r.question = q.question;
        r.expected = q.answer;
        r.answer = a.tokens;
        r.grounding = q.grounding;
        r.selected = a.selection.indices;
        r.similarities = a.selection.similarities;
        r.iop = intersection_over_prediction(r.selected, r.grounding);
        std::set<int> g(q.grounding.begin(), q.grounding.end());
        r.hit = std::any_of(r.selected.begin(), r.selected.end(), [&](int k) { return g.count(k) > 0; });
        r.correct = r.answer == r.expected;
        r.joint = r.correct && r.iop >= 0.5;
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace

std::string EvalReport::summary_json() const {
    nlohmann::json j;
    j["overall"] = metrics_json(overall);
    for (const auto &[k, m] : by_kind) {
        j["by_kind"][k] = metrics_json(m);
    }
    return j.dump(2);
}

EvalReport eval_grounding(const VideoStreamingModel &model, const Dataset &dataset,
                          const std::vector<std::size_t> &videos, const EvalOptions &options) {
    Decoding decoding;
    if (options.multi_choice) {
        decoding.allowed = answer_vocabulary(26);
    }
    std::vector<std::vector<QuestionRecord>> per_video(videos.size());
    const int workers = std::max(1, std::min<int>(options.workers, static_cast<int>(videos.size())));
    if (workers == 1) {
        for (std::size_t i = 0; i < videos.size(); ++i) {
            per_video[i] = eval_video(model, dataset, videos[i], decoding);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < videos.size(); i = next++) {
                    try {
                        per_video[i] = eval_video(model, dataset, videos[i], decoding);
                    } catch (...) {
                        std::lock_guard lock(failure_mutex);
                        if (!failure) failure = std::current_exception();
                    }
                }
            });
        }
        for (auto &t : pool) t.join();
        if (failure) std::rethrow_exception(failure);
    }
    EvalReport rep;
    std::map<std::string, std::vector<QuestionRecord>> kinds;
    for (auto &recs : per_video) {
        for (auto &r : recs) {
            kinds[question_kind_name(r.kind)].push_back(r);
            rep.records.push_back(std::move(r));
        }
    }
    rep.overall = aggregate(rep.records);
    for (const auto &[k, recs] : kinds) {
        rep.by_kind[k] = aggregate(recs);
    }
    return rep;
}

} // namespace vstream
