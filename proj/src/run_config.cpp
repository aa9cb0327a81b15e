#include "vstream/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "vstream/errors.hpp"
#include "vstream/tokenizer.hpp"

namespace vstream {

const char *prompt_mode_name(TimePromptMode mode) {
    switch (mode) {
    case TimePromptMode::none: return "none";
    case TimePromptMode::clip: return "clip";
    case TimePromptMode::memory: return "memory";
    case TimePromptMode::clip_memory: return "clip_memory";
    }
    return "?";
}

const char *similarity_name(SimilarityMode mode) { return mode == SimilarityMode::cosine ? "cosine" : "dot"; }

namespace {

struct Field {
    std::string key;
    std::function<std::string(const RunConfig &)> get;
    std::function<void(RunConfig &, const std::string &)> set;
};

[[noreturn]] void bad(const std::string &key, const std::string &value, const std::string &expect) {
    throw ConfigError(key + ": cannot parse '" + value + "' as " + expect);
}

template <typename T> T parse_number(const std::string &key, const std::string &value, const char *what) {
    T out{};
    const auto *end = value.data() + value.size();
    auto [p, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || p != end) {
        bad(key, value, what);
    }
    return out;
}

std::string fmt_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

Field int_field(std::string key, int RunConfig::*m) {
    return {key, [m](const RunConfig &c) { return std::to_string(c.*m); },
            [m, key](RunConfig &c, const std::string &v) { c.*m = parse_number<int>(key, v, "an integer"); }};
}

Field u64_field(std::string key, std::uint64_t RunConfig::*m) {
    return {key, [m](const RunConfig &c) { return std::to_string(c.*m); },
            [m, key](RunConfig &c, const std::string &v) {
                c.*m = parse_number<std::uint64_t>(key, v, "an unsigned integer");
            }};
}

Field double_field(std::string key, double RunConfig::*m) {
    return {key, [m](const RunConfig &c) { return fmt_double(c.*m); },
            [m, key](RunConfig &c, const std::string &v) { c.*m = parse_number<double>(key, v, "a number"); }};
}

Field bool_field(std::string key, bool RunConfig::*m) {
    return {key, [m](const RunConfig &c) { return std::string(c.*m ? "true" : "false"); },
            [m, key](RunConfig &c, const std::string &v) {
                if (v == "true" || v == "1") c.*m = true;
                else if (v == "false" || v == "0") c.*m = false;
                else bad(key, v, "true|false");
            }};
}

Field string_field(std::string key, std::string RunConfig::*m) {
    return {key, [m](const RunConfig &c) { return c.*m; }, [m](RunConfig &c, const std::string &v) { c.*m = v; }};
}

const std::vector<Field> &fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back(u64_field("seed.data", &RunConfig::seed_data));
        f.push_back(u64_field("seed.init", &RunConfig::seed_init));
        f.push_back(u64_field("seed.gumbel", &RunConfig::seed_gumbel));
        f.push_back(u64_field("seed.split", &RunConfig::seed_split));

        f.push_back(int_field("data.num_clips", &RunConfig::num_clips));
        f.push_back(int_field("data.max_clips", &RunConfig::max_clips));
        f.push_back(int_field("data.alphabet", &RunConfig::alphabet));
        f.push_back(int_field("data.min_events", &RunConfig::min_events));
        f.push_back(int_field("data.max_events", &RunConfig::max_events));
        f.push_back(double_field("data.intensity", &RunConfig::intensity));
        f.push_back(double_field("data.noise", &RunConfig::noise));
        f.push_back(int_field("data.num_questions", &RunConfig::num_questions));
        f.push_back(int_field("data.concat_parts", &RunConfig::concat_parts));
        f.push_back(int_field("data.raw_tokens", &RunConfig::raw_tokens));
        f.push_back(int_field("data.raw_channels", &RunConfig::raw_channels));
        f.push_back(int_field("data.fps", &RunConfig::fps));
        f.push_back(double_field("data.heldout_fraction", &RunConfig::heldout_fraction));

        f.push_back(int_field("encoder.frames_per_clip", &RunConfig::frames_per_clip));
        f.push_back(int_field("encoder.tokens_per_frame", &RunConfig::tokens_per_frame));
        f.push_back(int_field("encoder.dim", &RunConfig::encoder_dim));
        f.push_back(int_field("encoder.layers", &RunConfig::encoder_layers));
        f.push_back(int_field("encoder.heads", &RunConfig::encoder_heads));
        f.push_back(int_field("encoder.tap_layer", &RunConfig::tap_layer));
        f.push_back(int_field("encoder.max_len", &RunConfig::encoder_max_len));
        f.push_back({"encoder.prompt_mode", [](const RunConfig &c) { return std::string(prompt_mode_name(c.prompt_mode)); },
                     [](RunConfig &c, const std::string &v) {
                         if (v == "none") c.prompt_mode = TimePromptMode::none;
                         else if (v == "clip") c.prompt_mode = TimePromptMode::clip;
                         else if (v == "memory") c.prompt_mode = TimePromptMode::memory;
                         else if (v == "clip_memory") c.prompt_mode = TimePromptMode::clip_memory;
                         else bad("encoder.prompt_mode", v, "none|clip|memory|clip_memory");
                     }});
        f.push_back(bool_field("encoder.use_memory", &RunConfig::use_memory));
        f.push_back({"encoder.merge_layout",
                     [](const RunConfig &c) {
                         return std::string(c.merge_layout == MergeLayout::consecutive ? "consecutive" : "grid_2x2");
                     },
                     [](RunConfig &c, const std::string &v) {
                         if (v == "consecutive") c.merge_layout = MergeLayout::consecutive;
                         else if (v == "grid_2x2") c.merge_layout = MergeLayout::grid_2x2;
                         else bad("encoder.merge_layout", v, "consecutive|grid_2x2");
                     }});

        f.push_back(int_field("reader.dim", &RunConfig::reader_dim));
        f.push_back(int_field("reader.layers", &RunConfig::reader_layers));
        f.push_back(int_field("reader.heads", &RunConfig::reader_heads));
        f.push_back(int_field("reader.projector_hidden", &RunConfig::reader_projector_hidden));
        f.push_back(int_field("reader.max_len", &RunConfig::reader_max_len));

        f.push_back(int_field("select.count", &RunConfig::select_count));
        f.push_back(double_field("select.temperature", &RunConfig::selection_temperature));
        f.push_back({"select.similarity", [](const RunConfig &c) { return std::string(similarity_name(c.similarity)); },
                     [](RunConfig &c, const std::string &v) {
                         if (v == "cosine") c.similarity = SimilarityMode::cosine;
                         else if (v == "dot") c.similarity = SimilarityMode::dot;
                         else bad("select.similarity", v, "cosine|dot");
                     }});
        f.push_back(bool_field("select.enabled", &RunConfig::selection_enabled));

        f.push_back({"train.regime", [](const RunConfig &c) { return std::string(regime_name(c.regime)); },
                     [](RunConfig &c, const std::string &v) { c.regime = parse_regime(v); }});
        f.push_back(int_field("train.stage1_captions", &RunConfig::stage1_captions));
        f.push_back(int_field("train.stage1_align_steps", &RunConfig::stage1_align_steps));
        f.push_back(int_field("train.stage1_instruct_steps", &RunConfig::stage1_instruct_steps));
        f.push_back(double_field("train.stage1_align_lr", &RunConfig::stage1_align_lr));
        f.push_back(double_field("train.stage1_instruct_lr", &RunConfig::stage1_instruct_lr));
        f.push_back(int_field("train.stage1_batch", &RunConfig::stage1_batch));
        f.push_back(int_field("train.stage1_reader_window", &RunConfig::stage1_reader_window));
        f.push_back(int_field("train.stage1_reader_steps", &RunConfig::stage1_reader_steps));
        f.push_back(double_field("train.stage1_reader_lr", &RunConfig::stage1_reader_lr));
        f.push_back(double_field("train.labeled_fraction", &RunConfig::labeled_fraction));
        f.push_back(int_field("train.warmup_epochs", &RunConfig::warmup_epochs));
        f.push_back(int_field("train.joint_epochs", &RunConfig::joint_epochs));
        f.push_back(double_field("train.lr", &RunConfig::lr));
        f.push_back(double_field("train.min_lr", &RunConfig::min_lr));
        f.push_back(double_field("train.next_token_weight", &RunConfig::next_token_weight));
        f.push_back(double_field("train.kl_weight", &RunConfig::kl_weight));
        f.push_back(int_field("train.questions_per_step", &RunConfig::questions_per_step));
        f.push_back(bool_field("train.reader_grad_to_encoder", &RunConfig::reader_grad_to_encoder));

        f.push_back(int_field("eval.workers", &RunConfig::workers));
        f.push_back(bool_field("eval.multi_choice", &RunConfig::multi_choice));

        f.push_back(string_field("paths.data", &RunConfig::data_dir));
        f.push_back(string_field("paths.stage1_checkpoint", &RunConfig::stage1_checkpoint));
        f.push_back(string_field("paths.checkpoint", &RunConfig::checkpoint));
        f.push_back(string_field("paths.out", &RunConfig::out_dir));
        return f;
    }();
    return table;
}

const Field &find_field(const std::string &key) {
    for (const auto &f : fields()) {
        if (f.key == key) {
            return f;
        }
    }
    throw ConfigError(key + ": unknown configuration key");
}

std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

void require(bool ok, const std::string &key, const std::string &why) {
    if (!ok) {
        throw ConfigError(key + ": " + why);
    }
}

} // namespace

void set_field(RunConfig &config, const std::string &key, const std::string &value) {
    find_field(key).set(config, value);
}

std::string get_field(const RunConfig &config, const std::string &key) { return find_field(key).get(config); }

std::vector<std::string> field_names() {
    std::vector<std::string> out;
    for (const auto &f : fields()) {
        out.push_back(f.key);
    }
    return out;
}

void RunConfig::validate() const {
    const int n = raw_tokens / 4;
    require(num_clips >= 1, "data.num_clips", "must be at least 1");
    require(max_clips >= num_clips, "data.max_clips", "must be >= data.num_clips (" + std::to_string(num_clips) + ")");
    require(alphabet >= 1 && alphabet <= Vocab::get().max_symbols(), "data.alphabet", "must lie in [1, 26]");
    require(alphabet <= 4 * raw_channels, "data.alphabet",
            "must not exceed the merged channel count 4*data.raw_channels (" + std::to_string(4 * raw_channels) + ")");
    require(min_events >= 1, "data.min_events", "must be at least 1");
    require(max_events >= min_events, "data.max_events", "must be >= data.min_events");
    require(max_events <= num_clips, "data.max_events", "must be <= data.num_clips");
    require(intensity >= 0.0, "data.intensity", "must be non-negative");
    require(noise >= 0.0, "data.noise", "must be non-negative");
    require(num_questions >= 1, "data.num_questions", "must be positive");
    require(concat_parts >= 1 && num_clips % concat_parts == 0, "data.concat_parts", "must divide data.num_clips");
    require(raw_tokens >= 4 && raw_tokens % 4 == 0, "data.raw_tokens", "must be a positive multiple of 4");
    require(raw_channels >= 1, "data.raw_channels", "must be positive");
    require(fps >= 1, "data.fps", "must be positive");
    require(heldout_fraction >= 0.0 && heldout_fraction < 1.0, "data.heldout_fraction", "must lie in [0, 1)");

    require(frames_per_clip >= 1, "encoder.frames_per_clip", "must be positive");
    require(tokens_per_frame >= 1 && tokens_per_frame < n, "encoder.tokens_per_frame",
            "P=" + std::to_string(tokens_per_frame) + " must satisfy 1 <= P < N=" + std::to_string(n));
    require(encoder_layers >= 1, "encoder.layers", "must be positive");
    require(tap_layer >= 1 && tap_layer <= encoder_layers, "encoder.tap_layer",
            "tap " + std::to_string(tap_layer) + " exceeds encoder.layers=" + std::to_string(encoder_layers));
    require(encoder_heads >= 1 && encoder_dim % encoder_heads == 0, "encoder.heads", "must divide encoder.dim");
    require(reader_heads >= 1 && reader_dim % reader_heads == 0, "reader.heads", "must divide reader.dim");
    require(reader_layers >= 1, "reader.layers", "must be positive");
    require(select_count >= 1, "select.count", "V must be at least 1");
    require(select_count <= num_clips, "select.count",
            "V=" + std::to_string(select_count) + " exceeds K=" + std::to_string(num_clips));
    require(selection_temperature > 0.0, "select.temperature", "must be positive");
    require(labeled_fraction >= 0.0 && labeled_fraction <= 1.0, "train.labeled_fraction", "must lie in [0, 1]");
    require(!(regime == Regime::warmup || regime == Regime::warmup_mixed) || labeled_fraction > 0.0,
            "train.labeled_fraction", "warm-up regimes need labeled data");
    require(stage1_batch >= 1, "train.stage1_batch", "must be positive");
    require(stage1_reader_window >= 1 && stage1_reader_window <= num_clips, "train.stage1_reader_window",
            "must lie in [1, data.num_clips]");
    require(stage1_reader_steps >= 0, "train.stage1_reader_steps", "must be non-negative");
    require(lr > 0.0, "train.lr", "must be positive");
    require(kl_weight >= 0.0, "train.kl_weight", "must be non-negative");
    require(workers >= 1, "eval.workers", "must be positive");
    model_config().validate();
}

ModelConfig RunConfig::model_config() const {
    auto m = default_model_config();
    m.encoder.frames_per_clip = frames_per_clip;
    m.encoder.tokens_per_frame = tokens_per_frame;
    m.encoder.merged_tokens = raw_tokens / 4;
    m.encoder.feature_channels = 4 * raw_channels;
    m.encoder.prompt_mode = prompt_mode;
    m.encoder.use_memory = use_memory;
    m.encoder.merge_layout = merge_layout;
    m.encoder_lm.dim = encoder_dim;
    m.encoder_lm.num_layers = encoder_layers;
    m.encoder_lm.num_heads = encoder_heads;
    m.encoder_lm.tap_layer = tap_layer;
    m.encoder_lm.max_sequence_length = encoder_max_len;
    m.reader.lm.dim = reader_dim;
    m.reader.lm.num_layers = reader_layers;
    m.reader.lm.num_heads = reader_heads;
    m.reader.lm.tap_layer = reader_layers;
    m.reader.lm.max_sequence_length = reader_max_len;
    m.reader.projector_hidden = reader_projector_hidden;
    m.selector.count = select_count;
    m.selector.temperature = selection_temperature;
    m.selector.similarity = similarity;
    m.selector.enabled = selection_enabled;
    return m;
}

FeatureGeometry RunConfig::geometry() const {
    return {.frames_per_clip = frames_per_clip, .raw_tokens = raw_tokens, .raw_channels = raw_channels, .fps = fps};
}

PlanOptions RunConfig::plan_options() const {
    return {.num_clips = num_clips,
            .alphabet = alphabet,
            .min_events = min_events,
            .max_events = max_events,
            .intensity = intensity,
            .noise = noise};
}

DatasetOptions RunConfig::dataset_options() const {
    DatasetOptions d;
    d.geometry = geometry();
    d.plan = plan_options();
    d.num_questions = num_questions;
    d.concat_parts = concat_parts;
    d.seed = seed_data;
    return d;
}

Stage1Options RunConfig::stage1_options() const {
    return {.align_steps = stage1_align_steps,
            .instruct_steps = stage1_instruct_steps,
            .reader_steps = stage1_reader_steps,
            .align_lr = stage1_align_lr,
            .instruct_lr = stage1_instruct_lr,
            .reader_lr = stage1_reader_lr,
            .batch = stage1_batch,
            .seed = seed_init + 4};
}

Stage2Options RunConfig::stage2_options() const {
    Stage2Options s;
    s.regime = regime;
    s.labeled_fraction = labeled_fraction;
    s.warmup_epochs = warmup_epochs;
    s.joint_epochs = joint_epochs;
    s.lr = lr;
    s.min_lr = min_lr;
    s.next_token_weight = next_token_weight;
    s.kl_weight = kl_weight;
    s.questions_per_step = questions_per_step;
    s.reader_grad_to_encoder = reader_grad_to_encoder;
    s.seed = seed_gumbel;
    return s;
}

RunConfig parse_run_config(const std::string &text) {
    RunConfig c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        set_field(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("config file not found: " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string serialize_run_config(const RunConfig &config) {
    std::string out;
    std::string section;
    for (const auto &f : fields()) {
        const auto s = f.key.substr(0, f.key.find('.'));
        if (s != section) {
            if (!section.empty()) out += "\n";
            out += "# " + s + "\n";
            section = s;
        }
        out += f.key + " = " + f.get(config) + "\n";
    }
    return out;
}

void apply_overrides(RunConfig &config, const std::vector<std::string> &overrides) {
    for (const auto &o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("override '" + o + "': expected key=value");
        }
        set_field(config, trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
    }
    config.validate();
}

} // namespace vstream
