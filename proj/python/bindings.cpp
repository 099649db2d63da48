// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <string>
#include <vector>

#include "evkit/error.hpp"
#include "evkit/eval.hpp"
#include "evkit/losses.hpp"
#include "evkit/model.hpp"
#include "evkit/pipeline.hpp"
#include "evkit/preprocess.hpp"
#include "evkit/synthgen.hpp"
#include "evkit/trainer.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace evkit;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<float> to_numpy(const std::vector<float>& v, std::vector<py::ssize_t> shape) {
  py::array_t<float> out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

std::vector<float> to_vector(const FloatArray& a) { return {a.data(), a.data() + a.size()}; }

py::dict metrics_dict(const MetricsReport& m) {
  py::dict d;
  d["eer"] = m.eer;
  d["eer_threshold"] = m.eer_threshold;
  d["min_dcf"] = m.min_dcf;
  d["min_dcf_threshold"] = m.min_dcf_threshold;
  d["tmr_fmr_1"] = m.tmr_fmr_1;
  d["tmr_fmr_10"] = m.tmr_fmr_10;
  d["d_prime"] = m.d_prime;
  d["auc"] = m.auc;
  d["n_genuine"] = m.n_genuine;
  d["n_impostor"] = m.n_impostor;
  return d;
}

SpeechFrame frame_from_numpy(const FloatArray& a) {
  if (a.ndim() != 2 || a.shape(0) != static_cast<py::ssize_t>(SpeechFrame::kRows) ||
      a.shape(1) != static_cast<py::ssize_t>(SpeechFrame::kCols)) {
    throw InvalidArgument("frame must be a 320 x 200 array");
  }
  SpeechFrame f;
  for (std::size_t r = 0; r < SpeechFrame::kRows; ++r)
    for (std::size_t c = 0; c < SpeechFrame::kCols; ++c) f.data[c * SpeechFrame::kRows + r] = a.at(r, c);
  return f;
}

py::array_t<float> frame_to_numpy(const SpeechFrame& f) {
  py::array_t<float> out({SpeechFrame::kRows, SpeechFrame::kCols});
  auto m = out.mutable_unchecked<2>();
  for (std::size_t r = 0; r < SpeechFrame::kRows; ++r)
    for (std::size_t c = 0; c < SpeechFrame::kCols; ++c) m(r, c) = f.at(r, c);
  return out;
}

diff::Tensor<double> matrix(const DoubleArray& x, const char* what) {
  if (x.ndim() != 2) throw InvalidArgument(std::string(what) + " must be a 2-D array");
  diff::Tensor<double> t({static_cast<std::size_t>(x.shape(0)), static_cast<std::size_t>(x.shape(1))});
  std::copy(x.data(), x.data() + x.size(), t.data.begin());
  return t;
}

// GE2E variant on rows of `x`; references default to leave-one-out centroids.
double ge2e(const DoubleArray& x, const std::optional<DoubleArray>& refs,
            const std::vector<std::size_t>& labels, double alpha, double margin, bool literal) {
  diff::Tape<double> tape;
  const auto v = tape.constant(matrix(x, "embeddings"));
  const auto y = refs ? tape.constant(matrix(*refs, "references")) : loo_centroids(v, labels);
  const std::vector<double> a(labels.size(), alpha);
  const auto loss = literal ? ge2e_literal(v, y, labels, a) : ge2e_contrastive(v, y, labels, a, margin);
  return loss.value()[0];
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings for the evkit speaker-embedding library";

  static py::exception<NumericError> numeric_error(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const NumericError& e) {
      PyErr_SetString(numeric_error.ptr(), e.what());
    } catch (const IoError& e) {
      PyErr_SetString(PyExc_OSError, e.what());
    } catch (const InvalidArgument& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  m.attr("EVECTOR_DIM") = kEVectorDim;

  // Synthetic corpus
  m.def("emotion_labels", [] {
    std::vector<std::string> out;
    for (const auto& e : emotion_presets()) out.push_back(e.label);
    return out;
  });
  m.def("make_speaker", [](std::uint64_t seed) {
    const auto sp = make_speaker(seed);
    py::dict d;
    d["f0_base"] = sp.f0_base;
    d["formants"] = std::vector<double>(sp.formants.begin(), sp.formants.end());
    d["bandwidths"] = std::vector<double>(sp.bandwidths.begin(), sp.bandwidths.end());
    d["spectral_tilt"] = sp.spectral_tilt;
    d["gender"] = sp.gender();
    return d;
  }, py::arg("seed"));
  m.def("synthesize", [](std::uint64_t speaker_seed, const std::string& emotion, double duration_s,
                         std::uint64_t seed) {
    const auto a = synthesize(make_speaker(speaker_seed), emotion_preset(emotion), duration_s, seed);
    return to_numpy(a.waveform, {static_cast<py::ssize_t>(a.waveform.size())});
  }, py::arg("speaker_seed"), py::arg("emotion"), py::arg("duration_s"), py::arg("seed") = 0);
  m.def("generate_corpus", [](const fs::path& out_dir, std::size_t n_speakers,
                              std::size_t utterances_per_cell, double duration_s, std::uint64_t seed) {
    CorpusConfig cfg;
    cfg.n_speakers = n_speakers;
    cfg.utterances_per_cell = utterances_per_cell;
    cfg.duration_s = duration_s;
    cfg.seed = seed;
    py::gil_scoped_release release;
    const auto r = generate_corpus(cfg, out_dir);
    py::gil_scoped_acquire acquire;
    py::dict d;
    d["manifest"] = r.manifest_path;
    d["files_written"] = r.files_written;
    d["files_unchanged"] = r.files_unchanged;
    return d;
  }, py::arg("out_dir"), py::arg("n_speakers") = 20, py::arg("utterances_per_cell") = 3,
     py::arg("duration_s") = 4.0, py::arg("seed") = 0);

  // Preprocessing
  m.def("frame", [](const FloatArray& clip) { return frame_to_numpy(frame(to_vector(clip))); },
        py::arg("clip"), "320 x 200 Hamming-windowed unit stack of a 2 s clip");
  m.def("read_frame", [](const fs::path& p) { return frame_to_numpy(read_frame(p)); });
  m.def("preprocess_corpus", [](const fs::path& manifest, const fs::path& out_dir) {
    const auto man = Manifest::read(manifest);
    py::gil_scoped_release release;
    const auto s = preprocess_corpus(man, out_dir);
    py::gil_scoped_acquire acquire;
    py::dict d;
    d["index"] = s.index_path;
    d["files"] = s.files;
    d["frames"] = s.frames;
    d["dropped_clips"] = s.dropped_clips;
    return d;
  }, py::arg("manifest"), py::arg("out_dir"));

  // Model
  py::class_<ModelWeights>(m, "ModelWeights")
      .def_property_readonly("n_vsf", [](const ModelWeights& w) { return w.config.n_vsf; })
      .def_property_readonly("param_count", [](const ModelWeights& w) { return param_count(w); })
      .def("group_names", [](const ModelWeights& w) {
        std::vector<std::string> out;
        for (const auto& g : w.groups) out.push_back(g.name);
        return out;
      })
      .def("get", [](const ModelWeights& w, const std::string& name) {
        const auto& t = w.get(name);
        std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
        return to_numpy(t.data, shape);
      });
  m.def("init_weights", [](std::size_t n_vsf, std::uint64_t seed) {
    return init_weights(ModelConfig{n_vsf}, seed);
  }, py::arg("n_vsf") = 10, py::arg("seed") = 0);
  m.def("param_count", [](std::size_t n_vsf) { return param_count(ModelConfig{n_vsf}); },
        py::arg("n_vsf") = 10);
  m.def("load_checkpoint", [](const fs::path& p) { return load_checkpoint(p).weights; });
  m.def("evector", [](const FloatArray& frame, const ModelWeights& w) {
    const auto f = frame_from_numpy(frame);
    EVectorResult r;
    {
      py::gil_scoped_release release;
      r = evector(f, w);
    }
    py::dict d;
    d["evector"] = to_numpy(r.values.data, {static_cast<py::ssize_t>(kEVectorDim)});
    d["reference"] = to_numpy(r.reference.data, {static_cast<py::ssize_t>(r.reference.size())});
    d["attention"] = to_numpy(r.style.weights.data, {static_cast<py::ssize_t>(r.style.weights.shape[0]),
                                                     static_cast<py::ssize_t>(r.style.weights.shape[1])});
    return d;
  }, py::arg("frame"), py::arg("weights"));

  // Losses
  m.def("ge2e_contrastive",
        [](const DoubleArray& x, const std::vector<std::size_t>& labels, std::optional<DoubleArray> refs,
           double alpha, double margin) { return ge2e(x, refs, labels, alpha, margin, false); },
        py::arg("embeddings"), py::arg("labels"), py::arg("references") = py::none(),
        py::arg("alpha") = 0.5, py::arg("margin") = 1.0);
  m.def("ge2e_literal",
        [](const DoubleArray& x, const std::vector<std::size_t>& labels, std::optional<DoubleArray> refs,
           double alpha) { return ge2e(x, refs, labels, alpha, 0.0, true); },
        py::arg("embeddings"), py::arg("labels"), py::arg("references") = py::none(),
        py::arg("alpha") = 0.5);

  // Training
  m.def("parse_train_config", [](const std::string& text) { return parse_train_config(text).to_text(); },
        "Validates key=value config text and returns its canonical form");
  m.def("train", [](const std::string& config_text, const fs::path& frames, const fs::path& checkpoint) {
    const auto cfg = parse_train_config(config_text);
    const auto index = FrameIndex::read(frames);
    TrainOptions opts;
    opts.checkpoint_path = checkpoint;
    TrainResult r;
    {
      py::gil_scoped_release release;
      r = train(cfg, index, opts);
    }
    py::dict d;
    d["losses"] = r.history.losses;
    d["stop_reason"] = r.history.stop_reason;
    return d;
  }, py::arg("config_text"), py::arg("frames"), py::arg("checkpoint"));
  m.def("embed_frames", [](const fs::path& checkpoint, const fs::path& frames, const fs::path& out_dir) {
    const auto w = load_checkpoint(checkpoint).weights;
    const auto index = FrameIndex::read(frames);
    py::gil_scoped_release release;
    return embed_frames(w, index, out_dir).index_path;
  }, py::arg("checkpoint"), py::arg("frames"), py::arg("out_dir"));

  // Evaluation
  m.def("score_pair", [](const FloatArray& a, const FloatArray& b) {
    return score_pair(to_vector(a), to_vector(b));
  });
  m.def("compute_metrics", [](const DoubleArray& genuine, const DoubleArray& impostor, double c_miss,
                              double c_fm, double p_target) {
    return metrics_dict(compute_metrics(std::span<const double>(genuine.data(), genuine.size()),
                                        std::span<const double>(impostor.data(), impostor.size()),
                                        c_miss, c_fm, p_target));
  }, py::arg("genuine"), py::arg("impostor"), py::arg("c_miss") = 10.0, py::arg("c_fm") = 1.0,
     py::arg("p_target") = 0.01);
  m.def("evaluate", [](const fs::path& embeddings, const fs::path& out_dir, double fraction,
                       std::uint64_t seed, const std::vector<std::string>& splits) {
    const auto store = EmbeddingStore::read(embeddings);
    EvalConfig cfg;
    cfg.fraction = fraction;
    cfg.seed = seed;
    cfg.splits = splits;
    EvalOutputs out;
    {
      py::gil_scoped_release release;
      out = evaluate(store, cfg);
      write_eval_outputs(out, out_dir);
    }
    auto d = metrics_dict(out.metrics);
    d["grid_cells"] = out.grid.size();
    return d;
  }, py::arg("embeddings"), py::arg("out_dir"), py::arg("fraction") = 1.0, py::arg("seed") = 0,
     py::arg("splits") = std::vector<std::string>{"val", "test1", "test2"});
}
