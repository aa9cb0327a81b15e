#include "vstream/commands.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "vstream/errors.hpp"
#include "vstream/tokenizer.hpp"

namespace vstream {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json config_json(const RunConfig &c) {
    json j;
    for (const auto &k : field_names()) {
        j[k] = get_field(c, k);
    }
    return j;
}

void write_effective_config(const RunConfig &c, const fs::path &path) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream os(path);
    os << serialize_run_config(c);
}

VideoStreamingModel load_model(const RunConfig &c, const fs::path &checkpoint) {
    if (!fs::exists(checkpoint)) {
        throw CheckpointError("checkpoint not found: " + checkpoint.string());
    }
    VideoStreamingModel m(c.model_config(), c.seed_init);
    m.load(checkpoint);
    return m;
}


VideoStreamingModel train_model(const RunConfig &c, const Dataset &ds, const Split &split, std::ostream &log,
                                const VideoStreamingModel *stage1) {
    VideoStreamingModel model(c.model_config(), c.seed_init);
    if (stage1) {
        copy_values(model.parameters(), stage1->parameters());
        model.set_stage(1);
    } else {
        auto l1 = run_stage1(model, c);
        log << "  stage 1 loss " << l1.final_loss() << "\n";
    }
    auto items = qa_items(ds, split.train);
    auto l2 = train_stage2(model, items, c.stage2_options());
    log << "  stage 2 loss " << l2.final_loss() << "\n";
    return model;
}

const std::vector<std::string> &stage1_axes() {
    // Axes that change what stage 1 trains; the others reuse one stage-1 model.
    static const std::vector<std::string> axes{
        "encoder.tokens_per_frame", "encoder.layers", "encoder.dim",  "encoder.heads",    "encoder.tap_layer",
        "encoder.prompt_mode",      "encoder.use_memory", "data.raw_tokens", "data.raw_channels",
        "encoder.frames_per_clip",  "reader.dim",     "reader.layers", "reader.heads"};
    return axes;
}

} // namespace

TrainLog run_stage1(VideoStreamingModel &model, const RunConfig &c) {
    auto caps = make_caption_set(model.encoder(), c.geometry(), c.plan_options(), c.stage1_captions, 0.2,
                                 c.seed_data + 101);
    ReaderCaptionSource reader(c.geometry(), c.plan_options(), c.stage1_reader_window, 0.2, c.seed_data + 202);
    return train_stage1(model, caps, reader, c.stage1_options());
}

void cmd_gen_data(const RunConfig &c, const fs::path &out_dir, std::ostream &log) {
    auto t0 = std::chrono::steady_clock::now();
    auto ds = generate_dataset(c.dataset_options());
    save_dataset(out_dir, ds);
    write_effective_config(c, out_dir / "config.effective");
    log << "wrote " << ds.items.size() << " videos, " << ds.question_count() << " questions to " << out_dir.string()
        << " in " << std::fixed << std::setprecision(1) << seconds_since(t0) << "s\n";
}

void cmd_train(const RunConfig &c, int stage, std::ostream &log) {
    auto t0 = std::chrono::steady_clock::now();
    if (stage == 1) {
        VideoStreamingModel model(c.model_config(), c.seed_init);
        auto l = run_stage1(model, c);
        model.save(c.stage1_checkpoint);
        write_effective_config(c, c.stage1_checkpoint + ".config");
        log << "stage 1: loss " << l.final_loss() << ", " << seconds_since(t0) << "s, saved "
            << c.stage1_checkpoint << "\n";
        return;
    }
    if (stage != 2) {
        throw ConfigError("--stage: must be 1 or 2");
    }
    auto model = load_model(c, c.stage1_checkpoint);
    if (model.stage() < 1) {
        throw CheckpointError(c.stage1_checkpoint + ": not a stage-1 checkpoint");
    }
    auto ds = load_dataset(c.data_dir);
    auto split = split_dataset(ds.items.size(), c.heldout_fraction, c.seed_split);
    auto items = qa_items(ds, split.train);
    auto opts = c.stage2_options();
    opts.on_epoch = [&](const std::string &phase, int epoch) {
        log << "  " << phase << " epoch " << epoch << " done at " << seconds_since(t0) << "s\n";
    };
    auto l = train_stage2(model, items, opts);
    model.save(c.checkpoint);
    write_effective_config(c, c.checkpoint + ".config");
    log << "stage 2 (" << regime_name(c.regime) << "): loss " << l.final_loss() << ", " << seconds_since(t0)
        << "s, saved " << c.checkpoint << "\n";
}

void cmd_encode(const RunConfig &c, const fs::path &video, const fs::path &bank_out, std::ostream &log) {
    auto model = load_model(c, c.checkpoint);
    if (!fs::exists(video)) {
        throw DataError("video not found: " + video.string());
    }
    auto stream = load_stream(video);
    const auto clips = (stream.frame_count() + static_cast<std::size_t>(c.frames_per_clip) - 1) /
                       static_cast<std::size_t>(c.frames_per_clip);
    if (clips > static_cast<std::size_t>(c.max_clips)) {
        throw DataError("video has " + std::to_string(clips) + " clips, above data.max_clips=" +
                        std::to_string(c.max_clips));
    }
    auto t0 = std::chrono::steady_clock::now();
    auto bank = model.encode(stream);
    save_bank(bank_out, bank);
    log << "encoded " << bank.size() << " clips in " << seconds_since(t0) << "s -> " << bank_out.string() << "\n";
}

void cmd_ask(const RunConfig &c, const fs::path &bank_path, const std::string &question, std::ostream &out) {
    auto model = load_model(c, c.checkpoint);
    auto bank = load_bank(bank_path);
    if (bank.fingerprint != model.encoder().fingerprint()) {
        throw CheckpointError(bank_path.string() + ": bank was encoded by a different model or configuration");
    }
    std::vector<int> q;
    try {
        q = tokenize(question);
    } catch (const DataError &e) {
        throw DataError(std::string("question: ") + e.what());
    }
    Decoding d;
    if (c.multi_choice) {
        d.allowed = answer_vocabulary(26);
    }
    auto a = model.answer(bank, q, d);
    json j;
    j["question"] = detokenize(q);
    j["answer"] = detokenize(a.tokens);
    j["answer_tokens"] = a.tokens;
    j["selection"] = json::parse(selection_record(a.selection, bank));
    j["reader_memory_tokens"] = a.reader_memory_tokens;
    out << j.dump() << "\n";
}

EvalReport cmd_eval(const RunConfig &c, const fs::path &data_dir, bool heldout_only, std::ostream &out,
                    std::ostream &log) {
    auto model = load_model(c, c.checkpoint);
    auto ds = load_dataset(data_dir);
    std::vector<std::size_t> videos;
    if (heldout_only) {
        videos = split_dataset(ds.items.size(), c.heldout_fraction, c.seed_split).heldout;
    } else {
        videos.resize(ds.items.size());
        std::iota(videos.begin(), videos.end(), 0);
    }
    auto t0 = std::chrono::steady_clock::now();
    auto rep = eval_grounding(model, ds, videos, {.multi_choice = c.multi_choice, .workers = c.workers});
    fs::create_directories(c.out_dir);
    {
        std::ofstream rec(fs::path(c.out_dir) / "records.jsonl");
        for (const auto &r : rep.records) {
            rec << r.to_json() << "\n";
        }
    }
    auto summary = json::parse(rep.summary_json());
    summary["config"] = config_json(c);
    std::ofstream(fs::path(c.out_dir) / "summary.json") << summary.dump(2) << "\n";
    out << rep.summary_json() << "\n";
    log << "evaluated " << rep.records.size() << " questions in " << seconds_since(t0) << "s\n";
    return rep;
}

std::vector<std::string> default_ablation_values(const RunConfig &c, const std::string &axis) {
    if (axis == "encoder.tap_layer") {
        std::vector<std::string> v;
        for (int pct : {25, 50, 100}) {
            v.push_back(std::to_string(std::max(1, c.encoder_layers * pct / 100)));
        }
        return v;
    }
    if (axis == "train.regime") return {"weak", "warmup", "mixed", "warmup_mixed"};
    if (axis == "encoder.prompt_mode") return {"none", "clip", "memory", "clip_memory"};
    if (axis == "select.similarity") return {"cosine", "dot"};
    if (axis == "encoder.use_memory") return {"true", "false"};
    if (axis == "select.enabled") return {"true", "false"};
    if (axis == "select.count") return {"1", "2", "4", "8"};
    if (axis == "encoder.tokens_per_frame") return {"1", "2", "4"};
    throw ConfigError("ablate: no default values for axis '" + axis + "'; pass --values");
}

void cmd_ablate(const RunConfig &c, const std::string &axis, const std::vector<std::string> &values_in,
                std::ostream &out, std::ostream &log) {
    (void)get_field(c, axis); // rejects unknown axes early
    auto values = values_in.empty() ? default_ablation_values(c, axis) : values_in;
    std::vector<RunConfig> configs;
    for (const auto &v : values) {
        RunConfig rc = c;
        set_field(rc, axis, v);
        rc.validate();
        configs.push_back(rc);
    }
    auto ds = generate_dataset(c.dataset_options());
    auto split = split_dataset(ds.items.size(), c.heldout_fraction, c.seed_split);

    const bool shared_stage1 = std::find(stage1_axes().begin(), stage1_axes().end(), axis) == stage1_axes().end();
    std::optional<VideoStreamingModel> base;
    if (shared_stage1) {
        base.emplace(c.model_config(), c.seed_init);
        run_stage1(*base, c);
        log << "shared stage 1 trained\n";
    }

    json rows = json::array();
    std::ostringstream table;
    table << std::left << std::setw(26) << axis << std::right << std::setw(8) << "hit" << std::setw(8) << "mIoP"
          << std::setw(8) << "acc" << std::setw(8) << "joint" << std::setw(8) << "what" << std::setw(8) << "when"
          << std::setw(8) << "count" << "\n";
    for (std::size_t i = 0; i < configs.size(); ++i) {
        log << axis << " = " << values[i] << "\n";
        std::optional<VideoStreamingModel> stage1;
        if (base) {
            // A shared stage-1 model only transfers when the parameter shapes agree.
            VideoStreamingModel probe(configs[i].model_config(), configs[i].seed_init);
            const auto a = probe.parameters();
            const auto b = base->parameters();
            bool same = a.size() == b.size();
            for (std::size_t k = 0; same && k < a.size(); ++k) {
                same = a[k].name == b[k].name && a[k].tensor.shape() == b[k].tensor.shape();
            }
            if (same) stage1 = *base;
        }
        auto model = train_model(configs[i], ds, split, log, stage1 ? &*stage1 : nullptr);
        auto rep = eval_grounding(model, ds, split.heldout,
                                  {.multi_choice = configs[i].multi_choice, .workers = configs[i].workers});
        auto acc = [&](const char *k) {
            auto it = rep.by_kind.find(k);
            return it == rep.by_kind.end() ? 0.0 : it->second.answer_accuracy;
        };
        table << std::left << std::setw(26) << values[i] << std::right << std::fixed << std::setprecision(3)
              << std::setw(8) << rep.overall.hit_rate << std::setw(8) << rep.overall.miop << std::setw(8)
              << rep.overall.answer_accuracy << std::setw(8) << rep.overall.joint_accuracy << std::setw(8)
              << acc("what-at-time") << std::setw(8) << acc("when-symbol") << std::setw(8) << acc("global-count")
              << "\n";
        auto row = json::parse(rep.summary_json());
        row["value"] = values[i];
        rows.push_back(row);
    }
    out << table.str();
    fs::create_directories(c.out_dir);
    std::string stem = axis;
    std::replace(stem.begin(), stem.end(), '.', '_');
    json doc{{"axis", axis}, {"rows", rows}, {"config", config_json(c)}};
    std::ofstream(fs::path(c.out_dir) / ("ablate_" + stem + ".json")) << doc.dump(2) << "\n";
}

void cmd_report_budget(const RunConfig &c, const std::vector<int> &clip_counts, int repeats, std::ostream &out) {
    if (clip_counts.empty()) {
        throw ConfigError("report-budget: no clip counts");
    }
    if (repeats < 1) {
        throw ConfigError("report-budget: --repeats must be positive");
    }
    VideoStreamingModel model(c.model_config(), c.seed_init);
    bool trained = false;
    if (fs::exists(c.checkpoint)) {
        try {
            model.load(c.checkpoint);
            trained = true;
        } catch (const CheckpointError &) {
        }
    }
    if (!trained) {
        model.set_stage(1); // timing only; weights are the seeded initialization
    }
    const auto g = c.geometry();
    SymbolBasis basis(c.alphabet, g.merged_channels(), kDefaultBasisSeed);
    auto question = tokenize("What symbol appears from 0 to " + std::to_string(c.frames_per_clip / c.fps) +
                             " seconds ?");
    Decoding d;
    d.allowed = answer_vocabulary(26);

    json rows = json::array();
    out << std::setw(6) << "K" << std::setw(14) << "reader_tok" << std::setw(12) << "input_len" << std::setw(14)
        << "encode_s" << std::setw(16) << "encode_s/clip" << std::setw(14) << "answer_ms" << "\n";
    for (int k : clip_counts) {
        if (k < c.select_count || k > c.max_clips) {
            throw ConfigError("report-budget: K=" + std::to_string(k) + " outside [select.count, data.max_clips]");
        }
        PlanOptions po = c.plan_options();
        po.num_clips = k;
        po.max_events = std::min(po.max_events, k);
        po.min_events = std::min(po.min_events, po.max_events);
        auto plan = random_plan(po, c.seed_data + static_cast<std::uint64_t>(k));
        auto stream = gen_video(plan, g, basis);

        double encode_best = 1e300, answer_best = 1e300;
        Answer a;
        MemoryBank bank;
        for (int r = 0; r < repeats; ++r) {
            auto t0 = std::chrono::steady_clock::now();
            bank = model.encode(stream);
            encode_best = std::min(encode_best, seconds_since(t0));
        }
        for (int r = 0; r < repeats; ++r) {
            auto t0 = std::chrono::steady_clock::now();
            a = model.answer(bank, question, d);
            answer_best = std::min(answer_best, seconds_since(t0));
        }
        out << std::setw(6) << k << std::setw(14) << a.reader_memory_tokens << std::setw(12) << a.reader_input_length
            << std::setw(14) << std::fixed << std::setprecision(4) << encode_best << std::setw(16)
            << encode_best / k << std::setw(14) << std::setprecision(2) << answer_best * 1e3 << "\n";
        rows.push_back({{"K", k},
                        {"reader_memory_tokens", a.reader_memory_tokens},
                        {"reader_input_length", a.reader_input_length},
                        {"encode_seconds", encode_best},
                        {"answer_seconds", answer_best}});
    }
    json doc{{"trained_weights", trained}, {"rows", rows}, {"config", config_json(c)}};
    out << doc.dump() << "\n";
}

namespace {

int exit_code_for(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::config: return 2;
    case ErrorKind::data: return 3;
    case ErrorKind::checkpoint: return 4;
    default: return 1;
    }
}

void error_line(std::ostream &err, const std::string &kind, int code, const std::string &message) {
    err << "error kind=" << kind << " code=" << code << " message=" << json(message).dump() << "\n";
}

} // namespace

int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
    CLI::App app{"Streaming long-video QA toolkit"};
    app.require_subcommand(1);
    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("-c,--config", config_path, "key = value configuration file");
    app.add_option("-s,--set", overrides, "override a configuration key (key=value)");

    auto *gen = app.add_subcommand("gen-data", "generate the synthetic QA dataset");
    std::string gen_out;
    gen->add_option("--out", gen_out, "output directory (default: paths.data)");

    auto *train = app.add_subcommand("train", "run a training stage");
    int stage = 2;
    train->add_option("--stage", stage, "1 or 2")->required();

    auto *enc = app.add_subcommand("encode", "encode a video stream into a memory bank");
    std::string video, bank_out;
    enc->add_option("--video", video, "VSDS stream file")->required();
    enc->add_option("--out", bank_out, "VSMB bank file")->required();

    auto *ask = app.add_subcommand("ask", "answer a question against a persisted bank");
    std::string bank_in, question;
    ask->add_option("--bank", bank_in, "VSMB bank file")->required();
    ask->add_option("--question", question, "question text")->required();

    auto *eval = app.add_subcommand("eval", "grounding evaluation");
    std::string eval_data;
    bool eval_all = false;
    eval->add_option("--data", eval_data, "dataset directory (default: paths.data)");
    eval->add_flag("--all", eval_all, "evaluate every video instead of the held-out split");

    auto *ablate = app.add_subcommand("ablate", "train and compare models along one axis");
    std::string axis;
    std::vector<std::string> values;
    ablate->add_option("--axis", axis, "configuration key to sweep")->required();
    ablate->add_option("--values", values, "values to sweep (default depends on the axis)");

    auto *budget = app.add_subcommand("report-budget", "reader token count and latency versus K");
    std::vector<int> ks{16, 32, 64};
    int repeats = 3;
    budget->add_option("--clips", ks, "clip counts K");
    budget->add_option("--repeats", repeats, "timing repeats (best is reported)");

    auto *show = app.add_subcommand("show-config", "print the effective configuration");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return 0;
        }
        error_line(err, "usage", 2, e.what());
        return 2;
    }

    try {
        RunConfig c = config_path.empty() ? RunConfig{} : load_run_config(config_path);
        apply_overrides(c, overrides);
        if (*gen) {
            cmd_gen_data(c, gen_out.empty() ? c.data_dir : gen_out, err);
        } else if (*train) {
            cmd_train(c, stage, err);
        } else if (*enc) {
            cmd_encode(c, video, bank_out, err);
        } else if (*ask) {
            cmd_ask(c, bank_in, question, out);
        } else if (*eval) {
            cmd_eval(c, eval_data.empty() ? c.data_dir : eval_data, !eval_all, out, err);
        } else if (*ablate) {
            cmd_ablate(c, axis, values, out, err);
        } else if (*budget) {
            cmd_report_budget(c, ks, repeats, out);
        } else if (*show) {
            out << serialize_run_config(c);
        }
    } catch (const Error &e) {
        const int code = exit_code_for(e.kind());
        error_line(err, error_kind_name(e.kind()), code, e.what());
        return code;
    } catch (const std::exception &e) {
        error_line(err, "internal", 1, e.what());
        return 1;
    }
    return 0;
}

} // namespace vstream
