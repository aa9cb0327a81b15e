#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "vstream/commands.hpp"
#include "vstream/errors.hpp"
#include "vstream/tokenizer.hpp"

namespace py = pybind11;
using namespace vstream;

namespace {

py::array_t<double> to_numpy(const Tensor &t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> a(shape);
    auto v = t.values();
    std::copy(v.begin(), v.end(), a.mutable_data());
    return a;
}

Tensor from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast> &a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor::from(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

RunConfig make_config(const std::map<std::string, std::string> &overrides) {
    RunConfig c;
    std::vector<std::string> kv;
    for (const auto &[k, v] : overrides) kv.push_back(k + "=" + v);
    apply_overrides(c, kv);
    return c;
}

py::dict record(const Answer &a) {
    py::dict d;
    d["tokens"] = a.tokens;
    d["text"] = detokenize(a.tokens);
    d["selected"] = a.selection.indices;
    d["similarities"] = a.selection.similarities;
    d["reader_memory_tokens"] = a.reader_memory_tokens;
    d["reader_input_length"] = a.reader_input_length;
    return d;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Streaming video memory encoder and reader";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<DataError>(m, "DataError", base.ptr());
    py::register_exception<CheckpointError>(m, "CheckpointError", base.ptr());
    py::register_exception<NumericError>(m, "NumericError", base.ptr());
    py::register_exception<StateError>(m, "StateError", base.ptr());

    m.def("tokenize", [](const std::string &s) { return tokenize(s); });
    m.def("detokenize", &detokenize);

    m.def(
        "config",
        [](const std::map<std::string, std::string> &overrides) {
            auto c = make_config(overrides);
            std::map<std::string, std::string> out;
            for (const auto &k : field_names()) out[k] = get_field(c, k);
            return out;
        },
        py::arg("overrides") = std::map<std::string, std::string>{},
        "All configuration fields as strings after applying and validating overrides.");

    m.def(
        "run_cli",
        [](const std::vector<std::string> &args) {
            std::vector<std::string> full{"vstream"};
            full.insert(full.end(), args.begin(), args.end());
            std::vector<const char *> argv;
            for (const auto &a : full) argv.push_back(a.c_str());
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs the command-line tool in-process; returns (exit code, stdout, stderr).");

    py::class_<VideoStream>(m, "VideoStream")
        .def(py::init([](const py::array_t<double, py::array::c_style | py::array::forcecast> &frames, int fps) {
                 if (frames.ndim() != 3) throw ShapeError("frames must be [frames, tokens, channels]");
                 return VideoStream{from_numpy(frames), fps};
             }),
             py::arg("frames"), py::arg("fps") = 1)
        .def_property_readonly("frames", [](const VideoStream &s) { return to_numpy(s.frames); })
        .def_readonly("fps", &VideoStream::fps)
        .def("save", [](const VideoStream &s, const std::filesystem::path &p) { save_stream(p, s); })
        .def_static("load", &load_stream);

    py::class_<MemoryBank>(m, "MemoryBank")
        .def("__len__", &MemoryBank::size)
        .def_readonly("fingerprint", &MemoryBank::fingerprint)
        .def("memory", [](const MemoryBank &b, std::size_t k) { return to_numpy(b.entries.at(k).memory); })
        .def("indicator", [](const MemoryBank &b, std::size_t k) { return to_numpy(b.entries.at(k).indicator); })
        .def("span", [](const MemoryBank &b, std::size_t k) {
            const auto &s = b.entries.at(k).span;
            return py::make_tuple(s.start, s.end);
        })
        .def("save", [](const MemoryBank &b, const std::filesystem::path &p) { save_bank(p, b); })
        .def_static("load", &load_bank);

    py::class_<VideoStreamingModel>(m, "Model")
        .def(py::init([](const std::map<std::string, std::string> &overrides, std::uint64_t seed) {
                 auto c = make_config(overrides);
                 return VideoStreamingModel(c.model_config(), seed);
             }),
             py::arg("overrides") = std::map<std::string, std::string>{}, py::arg("seed") = 7,
             "Untrained model built from configuration overrides.")
        .def_property("stage", &VideoStreamingModel::stage, &VideoStreamingModel::set_stage)
        .def("load", &VideoStreamingModel::load, py::call_guard<py::gil_scoped_release>())
        .def("save", &VideoStreamingModel::save)
        .def("encode", &VideoStreamingModel::encode, py::call_guard<py::gil_scoped_release>())
        .def("scores",
             [](const VideoStreamingModel &m, const MemoryBank &b, const std::string &q) {
                 return m.scores(b, tokenize(q)).to_vector();
             })
        .def(
            "answer",
            [](const VideoStreamingModel &m, const MemoryBank &b, const std::string &q, bool multi_choice) {
                Decoding d;
                if (multi_choice) d.allowed = answer_vocabulary();
                Answer a;
                {
                    py::gil_scoped_release release;
                    a = m.answer(b, tokenize(q), d);
                }
                return record(a);
            },
            py::arg("bank"), py::arg("question"), py::arg("multi_choice") = true);

    m.def(
        "generate_video",
        [](const std::vector<std::tuple<int, int, double>> &events, int num_clips, double noise, std::uint64_t seed,
           const std::map<std::string, std::string> &overrides) {
            auto c = make_config(overrides);
            EventPlan plan;
            plan.num_clips = num_clips;
            plan.alphabet = c.alphabet;
            plan.noise = noise;
            plan.seed = seed;
            for (auto [clip, symbol, intensity] : events) plan.events.push_back({clip, symbol, intensity});
            const auto g = c.geometry();
            SymbolBasis basis(c.alphabet, g.merged_channels(), kDefaultBasisSeed);
            return gen_video(plan, g, basis);
        },
        py::arg("events"), py::arg("num_clips"), py::arg("noise") = 0.5, py::arg("seed") = 0,
        py::arg("overrides") = std::map<std::string, std::string>{},
        "Synthetic stream with (clip, symbol, intensity) events planted on a noise floor.");
}
