#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vstream/training.hpp"

namespace vstream {

// Every knob of a run, stored as a flat key = value file.
struct RunConfig {
    // seeds
    std::uint64_t seed_data = 1;
    std::uint64_t seed_init = 7;
    std::uint64_t seed_gumbel = 23;
    std::uint64_t seed_split = 5;

    // synthetic data
    int num_clips = 16;          // K per video
    int max_clips = 64;          // upper limit on K accepted by encode/ask
    int alphabet = 10;
    int min_events = 3;
    int max_events = 8;
    double intensity = 1.0;
    double noise = 0.5;
    int num_questions = 2000;
    int concat_parts = 1;
    int raw_tokens = 64;         // N0
    int raw_channels = 8;        // c
    int fps = 1;
    double heldout_fraction = 0.1;

    // encoder
    int frames_per_clip = 8;     // T
    int tokens_per_frame = 2;    // P
    int encoder_dim = 64;
    int encoder_layers = 4;
    int encoder_heads = 4;
    int tap_layer = 2;
    int encoder_max_len = 512;
    TimePromptMode prompt_mode = TimePromptMode::clip_memory;
    bool use_memory = true;
    MergeLayout merge_layout = MergeLayout::consecutive;

    // reader
    int reader_dim = 64;
    int reader_layers = 4;
    int reader_heads = 4;
    int reader_projector_hidden = 64;
    int reader_max_len = 512;

    // selection
    int select_count = 4;        // V
    double selection_temperature = 0.5;
    SimilarityMode similarity = SimilarityMode::cosine;
    bool selection_enabled = true;

    // training
    Regime regime = Regime::warmup;
    int stage1_captions = 512;
    int stage1_align_steps = 100;
    int stage1_instruct_steps = 300;
    double stage1_align_lr = 3e-3;
    double stage1_instruct_lr = 1e-3;
    int stage1_batch = 4;
    int stage1_reader_window = 4;
    int stage1_reader_steps = 6000;
    double stage1_reader_lr = 1e-3;
    double labeled_fraction = 0.5;
    int warmup_epochs = 4;
    int joint_epochs = 2;
    double lr = 3e-4;
    double min_lr = 3e-5;
    double next_token_weight = 1.0;
    double kl_weight = 0.5;
    int questions_per_step = 0;
    bool reader_grad_to_encoder = true;

    // evaluation
    int workers = 1;
    bool multi_choice = true;

    // paths
    std::string data_dir = "data";
    std::string stage1_checkpoint = "stage1.vstt";
    std::string checkpoint = "model.vstt";
    std::string out_dir = "out";

    void validate() const; // throws ConfigError naming the offending field

    ModelConfig model_config() const;
    FeatureGeometry geometry() const;
    PlanOptions plan_options() const;
    DatasetOptions dataset_options() const;
    Stage1Options stage1_options() const;
    Stage2Options stage2_options() const;
};

// Sets one field from its textual value; unknown keys and bad values raise ConfigError.
void set_field(RunConfig &config, const std::string &key, const std::string &value);
std::string get_field(const RunConfig &config, const std::string &key);
std::vector<std::string> field_names();

// "key = value" lines; '#' starts a comment. Validates the result.
RunConfig parse_run_config(const std::string &text);
RunConfig load_run_config(const std::filesystem::path &path);
std::string serialize_run_config(const RunConfig &config);

// Applies "key=value" overrides on top of a config, then validates.
void apply_overrides(RunConfig &config, const std::vector<std::string> &overrides);

const char *prompt_mode_name(TimePromptMode mode);
const char *similarity_name(SimilarityMode mode);

} // namespace vstream
