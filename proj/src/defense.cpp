// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#include "looplab/defense.hpp"

#include <fstream>
#include <future>
#include <map>
#include <unordered_set>

namespace looplab::defense {

void DefenseConfig::validate() const {
    check(window >= 1, "defense: window must be >= 1");
    check(segment_len >= 1, "defense: segment_len must be >= 1");
    check(segment_len <= window, "defense: segment_len must not exceed window");
    check(scale >= 0.0, "defense: scale must be >= 0");
}

nlohmann::json DefenseConfig::to_json() const {
    return {{"window", window}, {"segment_len", segment_len}, {"scale", scale},
            {"enabled", enabled}, {"literal_scaling", literal_scaling}};
}

DefenseConfig DefenseConfig::from_json(const nlohmann::json &j) {
    DefenseConfig c;
    c.window = j.value("window", c.window);
    c.segment_len = j.value("segment_len", c.segment_len);
    c.scale = j.value("scale", c.scale);
    c.enabled = j.value("enabled", c.enabled);
    c.literal_scaling = j.value("literal_scaling", c.literal_scaling);
    c.validate();
    return c;
}

SegmentFrequency max_segment_frequency(const TokenSeq &history, std::size_t window, std::size_t segment_len) {
    check(window >= 1 && segment_len >= 1, "max_segment_frequency: bad parameters");
    SegmentFrequency out;
    const std::size_t start = history.size() > window ? history.size() - window : 0;
    const std::size_t n = history.size() - start;
    if (n < segment_len) return out;

    struct Entry {
        std::size_t count = 0;
        std::size_t last_start = 0;
    };
    std::map<TokenSeq, Entry> counts;
    for (std::size_t i = start; i + segment_len <= history.size(); ++i) {
        TokenSeq seg(history.begin() + static_cast<std::ptrdiff_t>(i),
                     history.begin() + static_cast<std::ptrdiff_t>(i + segment_len));
        Entry &e = counts[std::move(seg)];
        ++e.count;
        e.last_start = i;
    }
    std::size_t best_last = 0;
    for (const auto &[seg, e] : counts) {
        if (e.count > out.f_max || (e.count == out.f_max && e.last_start > best_last)) {
            out.f_max = e.count;
            out.segment = seg;
            best_last = e.last_start;
        }
    }
    return out;
}

std::vector<double> defended_logits(const std::vector<double> &logits, const TokenSeq &history,
                                    const DefenseConfig &cfg) {
    cfg.validate();
    std::vector<double> out = logits;
    if (!cfg.enabled || cfg.scale == 0.0) return out;
    const SegmentFrequency sf = max_segment_frequency(history, cfg.window, cfg.segment_len);
    if (sf.f_max <= 1) return out;

    const double factor = 1.0 + cfg.scale * static_cast<double>(sf.f_max);
    std::unordered_set<Token> ids(sf.segment.begin(), sf.segment.end());
    for (Token t : ids) {
        const auto i = static_cast<std::size_t>(t);
        if (i >= out.size()) continue;
        if (cfg.literal_scaling) {
            out[i] *= factor;
        } else if (out[i] > 0.0) {
            out[i] /= factor;
        } else {
            out[i] *= factor;
        }
    }
    return out;
}

vlm::DecodeTrace defended_generate(const vlm::ModelWeights &weights, const vlm::PixelFeatures &features,
                                   const TokenSeq &question, const vlm::DecodeConfig &decode_cfg,
                                   const DefenseConfig &defense_cfg) {
    defense_cfg.validate();
    if (!defense_cfg.enabled) {
        return vlm::generate_features(weights, features, question, decode_cfg);
    }
    vlm::LogitsHook hook = [&defense_cfg](const TokenSeq &generated, std::vector<double> &logits) {
        logits = defended_logits(logits, generated, defense_cfg);
    };
    return vlm::generate_features(weights, features, question, decode_cfg, &hook);
}

namespace {

double mean_defended_length(const vlm::ModelWeights &weights, const std::vector<AttackedInput> &inputs,
                            const vlm::DecodeConfig &decode_cfg, const DefenseConfig &defense_cfg,
                            std::size_t threads) {
    auto decode_len = [&](std::size_t i) {
        return static_cast<double>(
            defended_generate(weights, inputs[i].features, inputs[i].question, decode_cfg, defense_cfg).tokens.size());
    };
    double total = 0.0;
    if (threads > 1 && inputs.size() > 1) {
        std::vector<std::future<double>> futs;
        for (std::size_t i = 0; i < inputs.size(); ++i) futs.push_back(std::async(std::launch::async, decode_len, i));
        for (auto &f : futs) total += f.get();
    } else {
        for (std::size_t i = 0; i < inputs.size(); ++i) total += decode_len(i);
    }
    return total / static_cast<double>(inputs.size());
}

}  // namespace

nlohmann::json DefenseGridReport::to_json() const {
    nlohmann::json cells_json = nlohmann::json::array();
    for (const DefenseCell &c : cells) {
        cells_json.push_back({{"window", c.window}, {"segment_len", c.segment_len}, {"scale", c.scale},
                              {"mean_attacked_len", c.mean_attacked_len}, {"mean_benign_len", c.mean_benign_len},
                              {"attacked_reduction", c.attacked_reduction}, {"benign_delta", c.benign_delta}});
    }
    return {{"undefended_attacked_mean", undefended_attacked_mean},
            {"undefended_benign_mean", undefended_benign_mean},
            {"cells", cells_json}};
}

DefenseGridReport defense_eval(const vlm::ModelWeights &weights, const std::vector<AttackedInput> &attacked,
                               const std::vector<AttackedInput> &benign, const std::vector<std::size_t> &windows,
                               const std::vector<std::size_t> &segment_lens, const std::vector<double> &scales,
                               const vlm::DecodeConfig &decode_cfg, std::size_t threads) {
    check(!attacked.empty() && !benign.empty(), "defense_eval: attacked and benign sets must be nonempty");
    check(!windows.empty() && !segment_lens.empty() && !scales.empty(), "defense_eval: empty grid");

    DefenseGridReport report;
    DefenseConfig off;
    off.enabled = false;
    report.undefended_attacked_mean = mean_defended_length(weights, attacked, decode_cfg, off, threads);
    report.undefended_benign_mean = mean_defended_length(weights, benign, decode_cfg, off, threads);

    for (std::size_t w : windows) {
        for (std::size_t k : segment_lens) {
            if (k > w) continue;
            for (double s : scales) {
                DefenseConfig cfg;
                cfg.window = w;
                cfg.segment_len = k;
                cfg.scale = s;
                DefenseCell cell;
                cell.window = w;
                cell.segment_len = k;
                cell.scale = s;
                cell.mean_attacked_len = mean_defended_length(weights, attacked, decode_cfg, cfg, threads);
                cell.mean_benign_len = mean_defended_length(weights, benign, decode_cfg, cfg, threads);
                cell.attacked_reduction =
                    report.undefended_attacked_mean > 0.0
                        ? 1.0 - cell.mean_attacked_len / report.undefended_attacked_mean
                        : 0.0;
                cell.benign_delta = report.undefended_benign_mean > 0.0
                                        ? (cell.mean_benign_len - report.undefended_benign_mean) /
                                              report.undefended_benign_mean
                                        : 0.0;
                report.cells.push_back(cell);
            }
        }
    }
    return report;
}

void write_grid_csv(const std::string &path, const DefenseGridReport &report) {
    std::ofstream out(path);
    check(out.good(), "grid csv: cannot open '" + path + "'");
    out << "window,segment_len,scale,mean_attacked_len,mean_benign_len,attacked_reduction,benign_delta\n";
    for (const DefenseCell &c : report.cells) {
        out << c.window << "," << c.segment_len << "," << c.scale << "," << c.mean_attacked_len << ","
            << c.mean_benign_len << "," << c.attacked_reduction << "," << c.benign_delta << "\n";
    }
}

}  // namespace looplab::defense
