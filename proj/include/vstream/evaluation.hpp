#pragma once

#include <map>
#include <string>
#include <vector>

#include "vstream/pipeline.hpp"
#include "vstream/synthdata.hpp"

namespace vstream {

struct QuestionRecord {
    std::size_t video = 0;
    QuestionKind kind = QuestionKind::what_at_time;
    int clip = -1;
    std::vector<int> question;
    std::vector<int> expected;
    std::vector<int> answer;
    std::vector<int> grounding;
    std::vector<int> selected;
    std::vector<double> similarities;
    double iop = 0.0;
    bool hit = false;
    bool correct = false;
    bool joint = false; // correct and IoP >= 0.5

    std::string to_json() const;
};

struct Metrics {
    std::size_t count = 0;
    double hit_rate = 0.0;
    double miop = 0.0;
    double iop_half_rate = 0.0; // fraction with IoP >= 0.5
    double answer_accuracy = 0.0;
    double joint_accuracy = 0.0;
};

Metrics aggregate(const std::vector<QuestionRecord> &records);

struct EvalReport {
    Metrics overall;
    std::map<std::string, Metrics> by_kind;
    std::vector<QuestionRecord> records;

    std::string summary_json() const;
};

struct EvalOptions {
    bool multi_choice = true; // restrict decoding to the answer vocabulary
    int workers = 1;
};

// Encodes each video once and answers all of its questions against the bank.
EvalReport eval_grounding(const VideoStreamingModel &model, const Dataset &dataset,
                          const std::vector<std::size_t> &videos, const EvalOptions &options = {});

} // namespace vstream
