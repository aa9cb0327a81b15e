#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "vstream/evaluation.hpp"
#include "vstream/run_config.hpp"

namespace vstream {

// Each command writes human-readable progress to `log` and structured JSON
// results to `out`.

// Stage 1 with the configured caption data: align, clip-instruct, reader pretraining.
TrainLog run_stage1(VideoStreamingModel &model, const RunConfig &config);

void cmd_gen_data(const RunConfig &config, const std::filesystem::path &out_dir, std::ostream &log);

// Stage 1 writes paths.stage1_checkpoint; stage 2 reads it and writes paths.checkpoint.
void cmd_train(const RunConfig &config, int stage, std::ostream &log);

void cmd_encode(const RunConfig &config, const std::filesystem::path &video, const std::filesystem::path &bank_out,
                std::ostream &log);

// Prints one JSON object with the answer and the selection record.
void cmd_ask(const RunConfig &config, const std::filesystem::path &bank, const std::string &question, std::ostream &out);

// Writes records.jsonl and summary.json under paths.out; prints the summary.
EvalReport cmd_eval(const RunConfig &config, const std::filesystem::path &data_dir, bool heldout_only,
                    std::ostream &out, std::ostream &log);

// Trains and evaluates one model per value of the axis and prints a comparison table.
void cmd_ablate(const RunConfig &config, const std::string &axis, const std::vector<std::string> &values,
                std::ostream &out, std::ostream &log);

// Reader input tokens and encode / answer wall times versus K.
void cmd_report_budget(const RunConfig &config, const std::vector<int> &clip_counts, int repeats, std::ostream &out);

// Values swept by default for an ablation axis.
std::vector<std::string> default_ablation_values(const RunConfig &config, const std::string &axis);

// Full command-line entry point. Returns the process exit code:
// 0 success, 2 config error, 3 data error, 4 checkpoint error, 1 anything else.
int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

} // namespace vstream
