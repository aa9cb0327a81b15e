#include <doctest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <regex>
#include <sstream>

#include "vstream/commands.hpp"
#include "vstream/errors.hpp"
#include "vstream/tokenizer.hpp"

using namespace vstream;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct CliResult {
    int code = 0;
    std::string out;
    std::string err;
};

CliResult cli(std::vector<std::string> args) {
    args.insert(args.begin(), "vstream");
    std::vector<const char *> argv;
    for (const auto &a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    CliResult r;
    r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

// Runs the installed binary when the test harness provides it.
std::optional<CliResult> cli_process(const std::string &args) {
    const char *bin = std::getenv("VSTREAM_CLI");
    if (!bin || !fs::exists(bin)) return std::nullopt;
    const auto err_file = fs::temp_directory_path() / "vstream_cli_err.txt";
    const std::string cmd = std::string(bin) + " " + args + " 2>" + err_file.string();
    CliResult r;
    FILE *pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe);
    std::array<char, 4096> buf{};
    while (std::fgets(buf.data(), buf.size(), pipe)) r.out += buf.data();
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream is(err_file);
    r.err.assign(std::istreambuf_iterator<char>(is), {});
    return r;
}

const std::regex kErrorLine(R"(error kind=(\w+) code=(\d+) message="(?:[^"\\]|\\.)*"\n?)");

std::string last_line(const std::string &s) {
    auto t = s;
    while (!t.empty() && t.back() == '\n') t.pop_back();
    const auto p = t.rfind('\n');
    return p == std::string::npos ? t : t.substr(p + 1);
}

std::string config_error(const std::string &key, const std::string &value) {
    RunConfig c;
    try {
        apply_overrides(c, {key + "=" + value});
    } catch (const ConfigError &e) {
        return e.what();
    }
    return "";
}

// Small but complete configuration used for the end-to-end CLI checks.
std::vector<std::string> tiny_overrides(const fs::path &dir) {
    return {"data.num_clips=4",
            "data.max_events=3",
            "data.min_events=1",
            "data.num_questions=12",
            "data.raw_tokens=16",
            "encoder.frames_per_clip=2",
            "encoder.tokens_per_frame=1",
            "encoder.dim=16",
            "encoder.layers=2",
            "encoder.heads=2",
            "encoder.tap_layer=1",
            "reader.dim=16",
            "reader.layers=2",
            "reader.heads=2",
            "reader.projector_hidden=16",
            "select.count=2",
            "train.stage1_captions=8",
            "train.stage1_align_steps=2",
            "train.stage1_instruct_steps=2",
            "train.stage1_reader_window=2",
            "train.stage1_reader_steps=2",
            "train.stage1_batch=2",
            "paths.data=" + (dir / "data").string(),
            "paths.stage1_checkpoint=" + (dir / "stage1.vstt").string(),
            "paths.checkpoint=" + (dir / "stage1.vstt").string(),
            "paths.out=" + (dir / "out").string()};
}

std::vector<std::string> with_sets(const std::vector<std::string> &overrides, std::vector<std::string> tail) {
    std::vector<std::string> args;
    for (const auto &o : overrides) {
        args.push_back("-s");
        args.push_back(o);
    }
    args.insert(args.end(), tail.begin(), tail.end());
    return args;
}

std::string shell_join(const std::vector<std::string> &args) {
    std::string s;
    for (const auto &a : args) s += "'" + a + "' ";
    return s;
}

} // namespace

TEST_CASE("configuration round trip") {
    RunConfig c;
    CHECK_NOTHROW(c.validate());
    auto back = parse_run_config(serialize_run_config(c));
    for (const auto &k : field_names()) CHECK(get_field(back, k) == get_field(c, k));

    apply_overrides(c, {"select.temperature=0.123456789012345", "train.regime=mixed", "encoder.prompt_mode=none",
                        "select.similarity=dot", "encoder.use_memory=false", "seed.data=18446744073709551615"});
    back = parse_run_config(serialize_run_config(c));
    for (const auto &k : field_names()) CHECK(get_field(back, k) == get_field(c, k));
    CHECK(back.selection_temperature == 0.123456789012345);
    CHECK(back.seed_data == 18446744073709551615ull);
    CHECK(back.regime == Regime::mixed);
}

TEST_CASE("configuration errors name the offending field") {
    CHECK(config_error("encoder.tokens_per_frame", "16").rfind("encoder.tokens_per_frame:", 0) == 0);
    CHECK(config_error("encoder.tokens_per_frame", "16").find("P=16") != std::string::npos);
    CHECK(config_error("select.count", "20").rfind("select.count: V=20 exceeds K=16", 0) == 0);
    CHECK(config_error("encoder.tap_layer", "5").rfind("encoder.tap_layer:", 0) == 0);
    CHECK(config_error("encoder.heads", "3").rfind("encoder.heads:", 0) == 0);
    CHECK(config_error("train.regime", "supervised").find("train.regime") != std::string::npos);
    CHECK(config_error("select.temperature", "abc").rfind("select.temperature:", 0) == 0);
    CHECK(config_error("no.such_key", "1").rfind("no.such_key:", 0) == 0);
    CHECK(config_error("encoder.use_memory", "maybe").rfind("encoder.use_memory:", 0) == 0);

    RunConfig c;
    CHECK_THROWS_AS(apply_overrides(c, {"select.count"}), ConfigError);

    try {
        parse_run_config("# header\nselect.count = 4\nencoder.layers 3\n");
        FAIL("expected a parse error");
    } catch (const ConfigError &e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    CHECK_THROWS_AS(load_run_config("/nonexistent/run.conf"), ConfigError);
}

TEST_CASE("command line errors are machine parsable") {
    SUBCASE("bad override") {
        auto r = cli({"-s", "select.count=99", "show-config"});
        CHECK(r.code == 2);
        std::smatch m;
        const auto line = last_line(r.err) + "\n";
        REQUIRE(std::regex_match(line, m, kErrorLine));
        CHECK(m[1] == "config");
        CHECK(m[2] == "2");
        CHECK(line.find("select.count") != std::string::npos);
    }
    SUBCASE("usage") {
        auto r = cli({"frobnicate"});
        CHECK(r.code == 2);
        CHECK(std::regex_match(last_line(r.err) + "\n", kErrorLine));
    }
    SUBCASE("missing checkpoint") {
        auto r = cli({"-s", "paths.checkpoint=/nonexistent/model.vstt", "ask", "--bank", "/nonexistent/b.vsmb",
                      "--question", "How many distinct symbols appear ?"});
        CHECK(r.code == 4);
        std::smatch m;
        const auto line = last_line(r.err) + "\n";
        REQUIRE(std::regex_match(line, m, kErrorLine));
        CHECK(m[1] == "checkpoint");
    }
    SUBCASE("missing dataset") {
        auto r = cli({"-s", "paths.stage1_checkpoint=/nonexistent/s1.vstt", "eval", "--data", "/nonexistent/data"});
        CHECK((r.code == 3 || r.code == 4));
        CHECK(std::regex_match(last_line(r.err) + "\n", kErrorLine));
    }
    SUBCASE("show-config output parses back") {
        auto r = cli({"-s", "select.count=2", "show-config"});
        CHECK(r.code == 0);
        CHECK(parse_run_config(r.out).select_count == 2);
    }
}

TEST_CASE("budget report at T=16, P=4, V=4 feeds 256 memory tokens") {
    auto r = cli({"-s", "encoder.frames_per_clip=16", "-s", "encoder.tokens_per_frame=4", "-s", "select.count=4", "-s",
                  "paths.checkpoint=/nonexistent/model.vstt", "report-budget", "--clips", "4", "6", "--repeats", "1"});
    REQUIRE(r.code == 0);
    auto doc = json::parse(last_line(r.out));
    REQUIRE(doc["rows"].size() == 2);
    for (const auto &row : doc["rows"]) CHECK(row["reader_memory_tokens"] == 256);
    CHECK(doc["trained_weights"] == false);
    CHECK(r.out.find("256") != std::string::npos);
}

TEST_CASE("end to end: generate, train, encode, ask") {
    const auto dir = fs::temp_directory_path() / "vstream_cli_e2e";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto ov = tiny_overrides(dir);

    REQUIRE(cli(with_sets(ov, {"gen-data"})).code == 0);
    REQUIRE(fs::exists(dir / "data" / "dataset.jsonl"));
    auto tr = cli(with_sets(ov, {"train", "--stage", "1"}));
    INFO(tr.err);
    REQUIRE(tr.code == 0);
    REQUIRE(fs::exists(dir / "stage1.vstt"));

    const auto video = dir / "data" / "streams" / "video_00000.vsds";
    const auto bank_path = dir / "bank.vsmb";
    const std::string question = "What symbol appears from 2 to 4 seconds ?";
    REQUIRE(cli(with_sets(ov, {"encode", "--video", video.string(), "--out", bank_path.string()})).code == 0);
    auto a1 = cli(with_sets(ov, {"ask", "--bank", bank_path.string(), "--question", question}));
    auto a2 = cli(with_sets(ov, {"ask", "--bank", bank_path.string(), "--question", question}));
    REQUIRE(a1.code == 0);
    CHECK(a1.out == a2.out);
    auto doc = json::parse(a1.out);
    CHECK(doc["reader_memory_tokens"] == 2 * 2 * 1);

    // Same pipeline in-process.
    RunConfig c;
    apply_overrides(c, ov);
    VideoStreamingModel model(c.model_config(), c.seed_init);
    model.load(c.checkpoint);
    auto bank = model.encode(load_stream(video));
    auto persisted = load_bank(bank_path);
    REQUIRE(persisted.size() == bank.size());
    for (std::size_t k = 0; k < bank.size(); ++k) {
        CHECK(persisted.entries[k].memory.to_vector() == bank.entries[k].memory.to_vector());
        CHECK(persisted.entries[k].indicator.to_vector() == bank.entries[k].indicator.to_vector());
    }
    Decoding d;
    d.allowed = answer_vocabulary(26);
    auto a = model.answer(bank, tokenize(question), d);
    CHECK(doc["answer_tokens"].get<std::vector<int>>() == a.tokens);
    CHECK(doc["selection"]["selected"].get<std::vector<int>>() == a.selection.indices);

    SUBCASE("separate process gives the same bytes") {
        auto p = cli_process(shell_join(with_sets(ov, {"ask", "--bank", bank_path.string(), "--question", question})));
        if (p) {
            CHECK(p->code == 0);
            CHECK(p->out == a1.out);
            const auto bank2 = dir / "bank2.vsmb";
            auto e = cli_process(shell_join(with_sets(ov, {"encode", "--video", video.string(), "--out", bank2.string()})));
            REQUIRE(e);
            CHECK(e->code == 0);
            std::ifstream f1(bank_path, std::ios::binary), f2(bank2, std::ios::binary);
            std::string b1((std::istreambuf_iterator<char>(f1)), {}), b2((std::istreambuf_iterator<char>(f2)), {});
            CHECK(b1 == b2);
            auto bad = cli_process("-s select.count=0 show-config");
            REQUIRE(bad);
            CHECK(bad->code == 2);
            CHECK(std::regex_match(last_line(bad->err) + "\n", kErrorLine));
        }
    }
    SUBCASE("a bank from another model is refused") {
        VideoStreamingModel m2(c.model_config(), 99);
        m2.set_stage(1);
        const auto other_ckpt = dir / "other.vstt";
        m2.save(other_ckpt);
        auto o2 = ov;
        o2.push_back("paths.checkpoint=" + other_ckpt.string());
        auto res = cli(with_sets(o2, {"ask", "--bank", bank_path.string(), "--question", question}));
        CHECK(res.code == 4);
    }
    SUBCASE("unknown words in a question are a data error") {
        auto r = cli(with_sets(ov, {"ask", "--bank", bank_path.string(), "--question", "Who is there ?"}));
        CHECK(r.code == 3);
    }
    SUBCASE("eval writes records and a summary") {
        auto r = cli(with_sets(ov, {"eval", "--all"}));
        INFO(r.err);
        REQUIRE(r.code == 0);
        CHECK(fs::exists(dir / "out" / "records.jsonl"));
        auto summary = json::parse(std::ifstream(dir / "out" / "summary.json"));
        CHECK(summary.contains("overall"));
    }
    fs::remove_all(dir);
}
