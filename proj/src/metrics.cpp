// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#include "looplab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_set>

namespace looplab::metrics {

nlohmann::json LoopVerdict::to_json() const {
    return {{"looping", looping}, {"period", period}, {"repeats", repeats},
            {"hit_max_window", hit_max_window}, {"output_length", output_length}};
}

LoopVerdict LoopVerdict::from_json(const nlohmann::json &j) {
    LoopVerdict v;
    v.looping = j.at("looping").get<bool>();
    v.period = j.at("period").get<std::size_t>();
    v.repeats = j.at("repeats").get<std::size_t>();
    v.hit_max_window = j.value("hit_max_window", false);
    v.output_length = j.at("output_length").get<std::size_t>();
    return v;
}

LoopVerdict detect_loop(const TokenSeq &tokens, std::size_t max_period, std::size_t min_repeats) {
    check(max_period >= 1, "detect_loop: max_period must be >= 1");
    check(min_repeats >= 2, "detect_loop: min_repeats must be >= 2");
    LoopVerdict v;
    v.output_length = tokens.size();
    const std::size_t n = tokens.size();
    for (std::size_t p = 1; p <= max_period; ++p) {
        if (n < min_repeats * p) break;  // longer periods need even more room
        // maximal p-periodic suffix: count matches tokens[i] == tokens[i+p]
        std::size_t matched = 0;
        for (std::size_t i = n - p; i-- > 0;) {
            if (tokens[i] == tokens[i + p])
                ++matched;
            else
                break;
        }
        const std::size_t suffix = matched + p;
        if (suffix >= min_repeats * p) {
            v.looping = true;
            v.period = p;
            v.repeats = suffix / p;
            return v;
        }
    }
    return v;
}

LoopVerdict verdict_for_trace(const vlm::DecodeTrace &trace, std::size_t max_period, std::size_t min_repeats) {
    LoopVerdict v = detect_loop(trace.tokens, max_period, min_repeats);
    v.hit_max_window = trace.hit_window() && v.looping;
    return v;
}

FastVerifyResult fast_verify(const vlm::ModelWeights &weights, const vlm::PixelFeatures &features,
                             const TokenSeq &question, const vlm::DecodeConfig &base_cfg, std::size_t truncation,
                             std::size_t full_window, std::size_t max_period, std::size_t min_repeats) {
    check(truncation < full_window, "fast_verify: truncation must be below the full window");
    vlm::DecodeConfig cfg = base_cfg;
    cfg.max_new_tokens = truncation;
    FastVerifyResult out;
    out.truncated = vlm::generate_features(weights, features, question, cfg);
    out.truncated_verdict = verdict_for_trace(out.truncated, max_period, min_repeats);
    out.predicted = out.truncated_verdict.looping;

    cfg.max_new_tokens = full_window;
    out.full = vlm::generate_features(weights, features, question, cfg);
    out.full_verdict = verdict_for_trace(out.full, max_period, min_repeats);
    out.actual = out.full_verdict.hit_max_window;
    return out;
}

double asr(const std::vector<LoopVerdict> &verdicts) {
    check(!verdicts.empty(), "asr: empty verdict list");
    std::size_t hits = 0;
    for (const LoopVerdict &v : verdicts) hits += v.looping ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(verdicts.size());
}

LengthStats length_stats(const std::vector<vlm::DecodeTrace> &traces) {
    check(!traces.empty(), "length_stats: empty trace list");
    std::vector<std::size_t> lens;
    lens.reserve(traces.size());
    std::size_t at_window = 0;
    double sum = 0.0;
    for (const vlm::DecodeTrace &t : traces) {
        lens.push_back(t.tokens.size());
        sum += static_cast<double>(t.tokens.size());
        if (t.tokens.size() == t.window) ++at_window;
    }
    std::sort(lens.begin(), lens.end());
    LengthStats s;
    s.mean = sum / static_cast<double>(lens.size());
    s.max = lens.back();
    s.median = lens.size() % 2 == 1
                   ? static_cast<double>(lens[lens.size() / 2])
                   : (static_cast<double>(lens[lens.size() / 2 - 1]) + static_cast<double>(lens[lens.size() / 2])) / 2.0;
    s.fraction_at_window = static_cast<double>(at_window) / static_cast<double>(lens.size());
    return s;
}

std::vector<TendencyRow> logit_tendency(const vlm::DecodeTrace &trace, const TokenSeq &expected_loop_unit) {
    std::unordered_set<Token> unit(expected_loop_unit.begin(), expected_loop_unit.end());
    std::vector<TendencyRow> rows;
    rows.reserve(trace.topk.size());
    for (std::size_t i = 0; i < trace.topk.size(); ++i) {
        const auto &entries = trace.topk[i];
        check(entries.size() >= 2, "logit_tendency: step " + std::to_string(i) + " lacks top-k records (k >= 2)");
        TendencyRow r;
        r.step = i;
        r.top1 = entries[0].token;
        r.top1_logit = entries[0].logit;
        r.top2_logit = entries[1].logit;
        r.gap = r.top1_logit - r.top2_logit;
        r.top1_is_target = !unit.empty() && unit.count(r.top1) > 0;
        rows.push_back(r);
    }
    return rows;
}

void write_tendency_csv(const std::string &path, const std::vector<TendencyRow> &rows) {
    std::ofstream out(path);
    check(out.good(), "tendency csv: cannot open '" + path + "'");
    out << "step,top1_token,top1_logit,top2_logit,gap,top1_is_target\n";
    for (const TendencyRow &r : rows) {
        out << r.step << "," << r.top1 << "," << r.top1_logit << "," << r.top2_logit << "," << r.gap << ","
            << (r.top1_is_target ? 1 : 0) << "\n";
    }
}

namespace {

std::vector<double> average_ranks(const std::vector<double> &x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman(const std::vector<double> &x, const std::vector<double> &y) {
    check(x.size() == y.size() && x.size() >= 2, "spearman: need two equal-length series");
    const std::vector<double> rx = average_ranks(x);
    const std::vector<double> ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double num = 0.0, dx = 0.0, dy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx) * (rx[i] - mx);
        dy += (ry[i] - my) * (ry[i] - my);
    }
    if (dx == 0.0 || dy == 0.0) return 0.0;
    return num / std::sqrt(dx * dy);
}

LoopVerdict splice_experiment(const vlm::ModelWeights &weights, const vlm::PixelFeatures &benign_features,
                              const TokenSeq &question, const recall::RecallTarget &target,
                              const vlm::DecodeConfig &cfg, std::size_t max_period, std::size_t min_repeats) {
    TokenSeq spliced = question;
    spliced.insert(spliced.end(), target.sequence.begin(), target.sequence.end());
    const vlm::DecodeTrace trace = vlm::generate_features(weights, benign_features, spliced, cfg);
    return verdict_for_trace(trace, max_period, min_repeats);
}

nlohmann::json LatencyReport::to_json() const {
    return {{"wall_time", wall_time}, {"tokens_generated", tokens_generated}, {"tokens_per_second", tokens_per_second}};
}

LatencyReport measure_latency(const vlm::ModelWeights &weights, const vlm::PixelFeatures &features,
                              const TokenSeq &question, const vlm::DecodeConfig &base_cfg,
                              std::size_t max_new_tokens) {
    vlm::DecodeConfig cfg = base_cfg;
    cfg.max_new_tokens = max_new_tokens;
    const vlm::DecodeTrace trace = vlm::generate_features(weights, features, question, cfg);
    LatencyReport r;
    r.wall_time = trace.wall_seconds;
    r.tokens_generated = trace.tokens.size();
    r.tokens_per_second = r.wall_time > 0.0 ? static_cast<double>(r.tokens_generated) / r.wall_time : 0.0;
    return r;
}

}  // namespace looplab::metrics
