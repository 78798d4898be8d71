// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "looplab/attack.hpp"
#include "looplab/defense.hpp"
#include "looplab/harness.hpp"
#include "looplab/metrics.hpp"
#include "looplab/synth.hpp"

namespace py = pybind11;
using namespace looplab;

namespace {

ad::Tensor tensor_from_rows(const std::vector<std::vector<double>> &rows) {
    check(!rows.empty(), "tensor: empty row list");
    const std::size_t cols = rows[0].size();
    ad::Tensor t({rows.size(), cols});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        check(rows[i].size() == cols, "tensor: ragged rows");
        for (std::size_t j = 0; j < cols; ++j) t(i, j) = rows[i][j];
    }
    return t;
}

std::vector<std::vector<double>> tensor_rows(const ad::Tensor &t) {
    std::vector<std::vector<double>> rows(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) rows[i][j] = t(i, j);
    return rows;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "looplab core: loop-generation red teaming against a toy vision-language model";

    m.attr("PAD") = vlm::kPadToken;
    m.attr("BOS") = vlm::kBosToken;
    m.attr("EOS") = vlm::kEosToken;
    m.attr("SEP") = vlm::kSepToken;
    m.attr("VOCAB") = vlm::kVocabSize;

    m.def("tokenize", [](const std::string &s) { return vlm::tokenize(s); });
    m.def("detokenize", &vlm::detokenize);
    m.def("render_text", &vlm::render_text);

    py::class_<ad::Tensor>(m, "Tensor")
        .def(py::init(&tensor_from_rows))
        .def_property_readonly("shape", [](const ad::Tensor &t) { return t.shape(); })
        .def("rows", &tensor_rows)
        .def("__len__", [](const ad::Tensor &t) { return t.size(); });

    py::class_<vlm::Image>(m, "Image")
        .def_readonly("height", &vlm::Image::height)
        .def_readonly("width", &vlm::Image::width)
        .def_readonly("channels", &vlm::Image::channels)
        .def_readonly("pixels", &vlm::Image::pixels);

    m.def("read_ppm", &vlm::read_ppm);
    m.def("write_ppm", &vlm::write_ppm);
    m.def("quantized", &vlm::quantized);

    py::class_<vlm::ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("image_h", &vlm::ModelConfig::image_h)
        .def_readwrite("image_w", &vlm::ModelConfig::image_w)
        .def_readwrite("channels", &vlm::ModelConfig::channels)
        .def_readwrite("patch", &vlm::ModelConfig::patch)
        .def_readwrite("embed_dim", &vlm::ModelConfig::embed_dim)
        .def_readwrite("layers", &vlm::ModelConfig::layers)
        .def_readwrite("heads", &vlm::ModelConfig::heads)
        .def_readwrite("ff_dim", &vlm::ModelConfig::ff_dim)
        .def_readwrite("max_context", &vlm::ModelConfig::max_context)
        .def("patches", &vlm::ModelConfig::patches)
        .def("patch_dim", &vlm::ModelConfig::patch_dim);

    py::class_<vlm::ModelWeights>(m, "ModelWeights")
        .def_static("random", &vlm::ModelWeights::random, py::arg("config"), py::arg("seed"))
        .def_readonly("config", &vlm::ModelWeights::config);
    m.def("save_weights", &vlm::save_weights);
    m.def("load_weights", &vlm::load_weights);

    m.def("processor", &vlm::processor);
    m.def("reprocessor", &vlm::reprocessor);
    m.def("forward_teacher_forced", &vlm::forward_teacher_forced);

    py::class_<vlm::DecodeConfig>(m, "DecodeConfig")
        .def(py::init<>())
        .def_readwrite("max_new_tokens", &vlm::DecodeConfig::max_new_tokens)
        .def_readwrite("greedy", &vlm::DecodeConfig::greedy)
        .def_readwrite("temperature", &vlm::DecodeConfig::temperature)
        .def_readwrite("repetition_penalty", &vlm::DecodeConfig::repetition_penalty)
        .def_readwrite("top_k", &vlm::DecodeConfig::top_k)
        .def_readwrite("seed", &vlm::DecodeConfig::seed)
        .def_readwrite("eos_token", &vlm::DecodeConfig::eos_token);

    py::class_<vlm::TopEntry>(m, "TopEntry")
        .def_readonly("token", &vlm::TopEntry::token)
        .def_readonly("logit", &vlm::TopEntry::logit);

    py::class_<vlm::DecodeTrace>(m, "DecodeTrace")
        .def_readonly("tokens", &vlm::DecodeTrace::tokens)
        .def_readonly("ended_with_eos", &vlm::DecodeTrace::ended_with_eos)
        .def_readonly("window", &vlm::DecodeTrace::window)
        .def_readonly("topk", &vlm::DecodeTrace::topk)
        .def_readonly("wall_seconds", &vlm::DecodeTrace::wall_seconds);

    m.def("generate", &vlm::generate);
    m.def("generate_features",
          [](const vlm::ModelWeights &w, const vlm::PixelFeatures &f, const vlm::TokenSeq &q,
             const vlm::DecodeConfig &cfg) { return vlm::generate_features(w, f, q, cfg); });

    py::class_<recall::RecallTarget>(m, "RecallTarget")
        .def_readonly("rho", &recall::RecallTarget::rho)
        .def_readonly("base", &recall::RecallTarget::base)
        .def_readonly("group", &recall::RecallTarget::group)
        .def_readonly("sequence", &recall::RecallTarget::sequence)
        .def_property_readonly("level",
                               [](const recall::RecallTarget &t) { return recall::level_name(t.level); });

    m.def("initial_recall", [](const vlm::TokenSeq &answer) { return recall::initial_recall(answer); });
    m.def("last_word_group", &recall::last_word_group);
    m.def("token_level_recall", &recall::token_level_recall, py::arg("base"), py::arg("rho"),
          py::arg("allow_rho_zero") = false);
    m.def("sentence_level_recall", &recall::sentence_level_recall);

    py::class_<attack::AttackConfig>(m, "AttackConfig")
        .def(py::init<>())
        .def_readwrite("epsilon", &attack::AttackConfig::epsilon)
        .def_readwrite("step_size", &attack::AttackConfig::step_size)
        .def_readwrite("max_iters", &attack::AttackConfig::max_iters)
        .def_readwrite("seed", &attack::AttackConfig::seed)
        .def_readwrite("early_stop_loss", &attack::AttackConfig::early_stop_loss)
        .def_readwrite("raw_gradient", &attack::AttackConfig::raw_gradient)
        .def_readwrite("threads", &attack::AttackConfig::threads);

    py::class_<attack::AttackReport>(m, "AttackReport")
        .def_readonly("loss_trace", &attack::AttackReport::loss_trace)
        .def_readonly("final_loss", &attack::AttackReport::final_loss)
        .def_readonly("iterations_run", &attack::AttackReport::iterations_run)
        .def_readonly("feasibility_violations", &attack::AttackReport::feasibility_violations)
        .def_readonly("aborted", &attack::AttackReport::aborted);

    py::class_<attack::SingleAttackResult>(m, "SingleAttackResult")
        .def_readonly("report", &attack::SingleAttackResult::report)
        .def_readonly("delta", &attack::SingleAttackResult::delta)
        .def_readonly("adversarial", &attack::SingleAttackResult::adversarial);

    m.def("recall_loss", &attack::recall_loss);
    m.def("project", &attack::project);
    m.def("pgd_attack", &attack::pgd_attack, py::call_guard<py::gil_scoped_release>());

    py::class_<metrics::LoopVerdict>(m, "LoopVerdict")
        .def_readonly("looping", &metrics::LoopVerdict::looping)
        .def_readonly("period", &metrics::LoopVerdict::period)
        .def_readonly("repeats", &metrics::LoopVerdict::repeats)
        .def_readonly("hit_max_window", &metrics::LoopVerdict::hit_max_window)
        .def_readonly("output_length", &metrics::LoopVerdict::output_length);

    m.def("detect_loop", &metrics::detect_loop, py::arg("tokens"), py::arg("max_period") = 64,
          py::arg("min_repeats") = 3);
    m.def("asr", &metrics::asr);
    m.def("spearman", &metrics::spearman);

    py::class_<defense::DefenseConfig>(m, "DefenseConfig")
        .def(py::init<>())
        .def_readwrite("window", &defense::DefenseConfig::window)
        .def_readwrite("segment_len", &defense::DefenseConfig::segment_len)
        .def_readwrite("scale", &defense::DefenseConfig::scale)
        .def_readwrite("enabled", &defense::DefenseConfig::enabled)
        .def_readwrite("literal_scaling", &defense::DefenseConfig::literal_scaling);

    py::class_<defense::SegmentFrequency>(m, "SegmentFrequency")
        .def_readonly("f_max", &defense::SegmentFrequency::f_max)
        .def_readonly("segment", &defense::SegmentFrequency::segment);

    m.def("max_segment_frequency", &defense::max_segment_frequency);
    m.def("defended_logits", &defense::defended_logits);
    m.def("defended_generate", &defense::defended_generate);

    py::class_<synth::Sample>(m, "Sample")
        .def_readonly("image", &synth::Sample::image)
        .def_readonly("caption", &synth::Sample::caption)
        .def_readonly("color", &synth::Sample::color)
        .def_readonly("shape", &synth::Sample::shape)
        .def_readonly("category", &synth::Sample::category);

    m.def("make_corpus", &synth::make_corpus);
    m.def("eval_sample", &harness::eval_sample);
}
