// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#include "looplab/harness.hpp"

#include <filesystem>
#include <fstream>
#include <map>

#include "looplab/tensor_io.hpp"

namespace looplab::harness {

namespace fs = std::filesystem;

// out_dir is deliberately not serialized: it is environmental, and manifests
// must be byte-identical when the same experiment lands in different places.
nlohmann::json ExperimentConfig::to_json() const {
    return {{"weights_path", weights_path},
            {"corpus_seed", corpus_seed},
            {"corpus_count", corpus_count},
            {"question", question},
            {"level", level},
            {"rho", rho},
            {"model", model.to_json()},
            {"train", train.to_json()},
            {"attack", attack.to_json()},
            {"decode", decode.to_json()},
            {"defense", defense.to_json()},
            {"defense_windows", defense_windows},
            {"defense_segment_lens", defense_segment_lens},
            {"defense_scales", defense_scales},
            {"batch", batch},
            {"holdout", holdout},
            {"seed", seed},
            {"truncation", truncation},
            {"full_window", full_window},
            {"max_period", max_period},
            {"min_repeats", min_repeats}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json &j) {
    ExperimentConfig c;
    c.weights_path = j.value("weights_path", c.weights_path);
    c.corpus_seed = j.value("corpus_seed", c.corpus_seed);
    c.corpus_count = j.value("corpus_count", c.corpus_count);
    c.question = j.value("question", c.question);
    c.level = j.value("level", c.level);
    c.rho = j.value("rho", c.rho);
    if (j.contains("model")) c.model = vlm::ModelConfig::from_json(j.at("model"));
    if (j.contains("train")) c.train = vlm::TrainConfig::from_json(j.at("train"));
    if (j.contains("attack")) c.attack = attack::AttackConfig::from_json(j.at("attack"));
    if (j.contains("decode")) c.decode = vlm::DecodeConfig::from_json(j.at("decode"));
    if (j.contains("defense")) c.defense = defense::DefenseConfig::from_json(j.at("defense"));
    c.defense_windows = j.value("defense_windows", c.defense_windows);
    c.defense_segment_lens = j.value("defense_segment_lens", c.defense_segment_lens);
    c.defense_scales = j.value("defense_scales", c.defense_scales);
    c.batch = j.value("batch", c.batch);
    c.holdout = j.value("holdout", c.holdout);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.seed = j.value("seed", c.seed);
    c.truncation = j.value("truncation", c.truncation);
    c.full_window = j.value("full_window", c.full_window);
    c.max_period = j.value("max_period", c.max_period);
    c.min_repeats = j.value("min_repeats", c.min_repeats);
    recall::level_from_name(c.level);
    return c;
}

std::string ExperimentConfig::config_hash() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(to_json().dump())));
    return std::string(buf);
}

void ensure_dir(const std::string &path) {
    std::error_code ec;
    fs::create_directories(path, ec);
    check(!ec, "cannot create directory '" + path + "': " + ec.message());
}

void write_json_file(const std::string &path, const nlohmann::json &j) {
    std::ofstream out(path);
    check(out.good(), "cannot open '" + path + "' for writing");
    out << j.dump(2) << "\n";
    check(out.good(), "write failed for '" + path + "'");
}

nlohmann::json read_json_file(const std::string &path) {
    std::ifstream in(path);
    check(in.good(), "cannot open '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const std::exception &e) {
        throw Error("invalid JSON in '" + path + "': " + e.what());
    }
}

synth::Sample eval_sample(const vlm::ModelConfig &model, std::uint64_t corpus_seed, std::uint64_t seed) {
    // distinct stream from make_corpus so eval images are held out
    Rng rng(corpus_seed * 0x9e3779b97f4a7c15ULL + seed + 0x517cc1b727220a95ULL);
    const std::size_t color = static_cast<std::size_t>(seed % synth::colors().size());
    const std::size_t shape = static_cast<std::size_t>(rng() % synth::shapes().size());
    return synth::make_sample(model, color, shape, rng);
}

namespace {

nlohmann::json trace_json(const vlm::DecodeTrace &trace) {
    return {{"tokens", trace.tokens},
            {"text", vlm::render_text(trace.tokens)},
            {"length", trace.tokens.size()},
            {"ended_with_eos", trace.ended_with_eos},
            {"window", trace.window},
            {"hit_window", trace.hit_window()},
            {"wall_seconds", trace.wall_seconds}};
}

nlohmann::json base_manifest(const ExperimentConfig &cfg, const std::string &kind) {
    return {{"kind", kind}, {"seed", cfg.seed}, {"config_hash", cfg.config_hash()}, {"config", cfg.to_json()}};
}

recall::RecallTarget build_target(const ExperimentConfig &cfg, const vlm::TokenSeq &base) {
    return recall::level_from_name(cfg.level) == recall::Level::token
               ? recall::token_level_recall(base, cfg.rho)
               : recall::sentence_level_recall(base, cfg.rho);
}

}  // namespace

nlohmann::json cmd_synth(const ExperimentConfig &cfg, std::size_t count) {
    const std::string dir = cfg.out_dir;
    ensure_dir(dir);
    const std::vector<synth::Sample> corpus = synth::make_corpus(cfg.model, count, cfg.corpus_seed);
    nlohmann::json entries = nlohmann::json::array();
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "img_%05zu.ppm", i);
        vlm::write_ppm(dir + "/" + name, corpus[i].image);
        const std::string cap_name = "cap_" + std::to_string(i) + ".txt";
        std::ofstream cap(dir + "/" + cap_name);
        cap << corpus[i].caption << "\n";
        entries.push_back({{"image", name}, {"caption", corpus[i].caption}, {"color", corpus[i].color},
                           {"shape", corpus[i].shape}, {"category", corpus[i].category}});
    }
    nlohmann::json manifest = base_manifest(cfg, "synth");
    manifest["count"] = count;
    manifest["corpus_seed"] = cfg.corpus_seed;
    manifest["entries"] = entries;
    write_json_file(dir + "/manifest.json", manifest);
    return manifest;
}

nlohmann::json cmd_train(const ExperimentConfig &cfg) {
    ensure_dir(fs::path(cfg.weights_path).parent_path().empty()
                   ? std::string(".")
                   : fs::path(cfg.weights_path).parent_path().string());
    const std::vector<synth::Sample> corpus = synth::make_corpus(cfg.model, cfg.corpus_count, cfg.corpus_seed);
    std::vector<vlm::TrainSample> samples;
    samples.reserve(corpus.size());
    for (const synth::Sample &s : corpus) samples.push_back({s.image, s.caption});

    vlm::TrainConfig tc = cfg.train;
    tc.question = cfg.question;
    vlm::TrainLog log;
    const vlm::ModelWeights weights = vlm::train_toy(samples, cfg.model, tc, &log);
    save_weights(cfg.weights_path, weights);

    nlohmann::json result = base_manifest(cfg, "train");
    result["weights_path"] = cfg.weights_path;
    result["final_val_loss"] = log.final_val_loss;
    result["steps_run"] = log.steps_run;
    // every log_every-th step loss, plus the last
    nlohmann::json losses = nlohmann::json::array();
    for (std::size_t i = 0; i < log.step_losses.size(); ++i) {
        if (tc.log_every == 0 || i % tc.log_every == 0 || i + 1 == log.step_losses.size()) {
            losses.push_back({{"step", i}, {"loss", log.step_losses[i]}});
        }
    }
    result["losses"] = losses;
    ensure_dir(cfg.out_dir);
    write_json_file(cfg.out_dir + "/train_log.json", result);
    return result;
}

nlohmann::json cmd_attack(const ExperimentConfig &cfg) {
    const std::string dir = cfg.out_dir;
    ensure_dir(dir);
    nlohmann::json manifest = base_manifest(cfg, "attack");
    manifest["level"] = cfg.level;
    manifest["rho"] = cfg.rho;
    nlohmann::json stages = nlohmann::json::array();
    // every stage artifact repeats the run identity
    auto write_stage = [&](const std::string &name, nlohmann::json body) {
        body["config_hash"] = cfg.config_hash();
        body["seed"] = cfg.seed;
        write_json_file(dir + "/" + name, body);
    };
    std::string stage = "load";
    try {
        const vlm::ModelWeights weights = vlm::load_weights(cfg.weights_path);
        const vlm::TokenSeq question = vlm::tokenize(cfg.question);
        const synth::Sample sample = eval_sample(cfg.model, cfg.corpus_seed, cfg.seed);
        vlm::write_ppm(dir + "/original.ppm", sample.image);
        manifest["original_image"] = "original.ppm";
        manifest["category"] = sample.category;

        stage = "benign_decode";
        vlm::DecodeConfig benign_cfg = cfg.decode;
        benign_cfg.max_new_tokens = cfg.truncation;
        const vlm::DecodeTrace benign = vlm::generate(weights, sample.image, question, benign_cfg);
        write_stage("benign.json", trace_json(benign));
        stages.push_back({{"stage", "benign_decode"}, {"artifact", "benign.json"}});

        stage = "initial_recall";
        const vlm::TokenSeq base = recall::initial_recall(benign.tokens);
        stages.push_back({{"stage", "initial_recall"}, {"base_text", vlm::render_text(base)}});

        stage = "recall_target";
        const recall::RecallTarget target = build_target(cfg, base);
        write_stage("target.json", target.to_json());
        stages.push_back({{"stage", "recall_target"}, {"artifact", "target.json"}});

        stage = "pgd_attack";
        attack::SingleAttackResult result = attack::pgd_attack(weights, sample.image, question, target, cfg.attack);
        io::save_tensor(dir + "/delta.lptn", result.delta);
        vlm::write_ppm(dir + "/adversarial.ppm", result.adversarial);
        result.report.perturbation_path = "delta.lptn";
        result.report.adversarial_image_path = "adversarial.ppm";
        stages.push_back({{"stage", "pgd_attack"}, {"artifact", "attack_report.json"}});

        // evaluation decodes from the quantized adversarial image
        const vlm::PixelFeatures adv_features = vlm::processor(weights.config, result.adversarial);

        stage = "fast_verify";
        const metrics::FastVerifyResult fv =
            metrics::fast_verify(weights, adv_features, question, cfg.decode, cfg.truncation, cfg.full_window,
                                 cfg.max_period, cfg.min_repeats);
        write_stage("fast_verify.json", {{"predicted", fv.predicted},
                                         {"actual", fv.actual},
                                         {"truncated_verdict", fv.truncated_verdict.to_json()},
                                         {"full_verdict", fv.full_verdict.to_json()},
                                         {"truncated_length", fv.truncated.tokens.size()}});
        stages.push_back({{"stage", "fast_verify"}, {"artifact", "fast_verify.json"}});

        stage = "full_decode";
        const metrics::LoopVerdict verdict = fv.full_verdict;
        nlohmann::json full = trace_json(fv.full);
        full["verdict"] = verdict.to_json();
        write_stage("full_decode.json", full);
        const auto tendency = metrics::logit_tendency(fv.full, target.group.empty() ? target.base : target.group);
        metrics::write_tendency_csv(dir + "/logit_tendency.csv", tendency);
        stages.push_back({{"stage", "full_decode"}, {"artifact", "full_decode.json"}});

        result.report.decode_outcome = verdict.to_json();
        write_stage("attack_report.json", result.report.to_json());

        manifest["stages"] = stages;
        manifest["verdict"] = verdict.to_json();
        manifest["fast_verify"] = {{"predicted", fv.predicted}, {"actual", fv.actual}};
        manifest["benign_length"] = benign.tokens.size();
        manifest["attacked_length"] = fv.full.tokens.size();
        manifest["benign_wall_seconds"] = benign.wall_seconds;
        manifest["attacked_wall_seconds"] = fv.full.wall_seconds;
        manifest["final_loss"] = result.report.final_loss;
        manifest["iterations_run"] = result.report.iterations_run;
    } catch (const std::exception &e) {
        manifest["stages"] = stages;
        manifest["failed_stage"] = stage;
        manifest["error"] = e.what();
    }
    write_json_file(dir + "/manifest.json", manifest);
    return manifest;
}

nlohmann::json cmd_universal(const ExperimentConfig &cfg) {
    const std::string dir = cfg.out_dir;
    ensure_dir(dir);
    nlohmann::json manifest = base_manifest(cfg, "universal");
    nlohmann::json stages = nlohmann::json::array();
    std::string stage = "load";
    try {
        const vlm::ModelWeights weights = vlm::load_weights(cfg.weights_path);
        const vlm::TokenSeq question = vlm::tokenize(cfg.question);
        check(cfg.batch >= 1, "universal: batch must be >= 1");

        stage = "build_batch";
        const std::size_t category = static_cast<std::size_t>(cfg.seed % synth::colors().size());
        std::vector<synth::Sample> members;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            Rng rng(cfg.corpus_seed * 0x9e3779b97f4a7c15ULL + cfg.seed + b * 7919ULL + 13ULL);
            members.push_back(
                synth::make_sample(cfg.model, category, static_cast<std::size_t>(rng() % synth::shapes().size()), rng));
        }
        std::vector<vlm::Image> images;
        std::vector<vlm::TokenSeq> questions(cfg.batch, question);
        std::vector<recall::RecallTarget> targets;
        vlm::DecodeConfig benign_cfg = cfg.decode;
        benign_cfg.max_new_tokens = cfg.truncation;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            char name[32];
            std::snprintf(name, sizeof(name), "member_%02zu.ppm", b);
            vlm::write_ppm(dir + "/" + name, members[b].image);
            const vlm::DecodeTrace benign = vlm::generate(weights, members[b].image, question, benign_cfg);
            targets.push_back(build_target(cfg, recall::initial_recall(benign.tokens)));
            images.push_back(members[b].image);
        }
        stages.push_back({{"stage", "build_batch"}, {"members", cfg.batch}, {"category", category}});

        stage = "universal_pgd";
        attack::UniversalAttackResult uni = attack::universal_pgd(weights, images, questions, targets, cfg.attack);
        io::save_tensor(dir + "/universal_delta.lptn", uni.delta);
        stages.push_back({{"stage", "universal_pgd"}, {"artifact", "universal_delta.lptn"},
                          {"iterations_run", uni.iterations_run}});

        stage = "evaluate_members";
        nlohmann::json member_rows = nlohmann::json::array();
        std::vector<metrics::LoopVerdict> member_verdicts;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            const vlm::PixelFeatures f = vlm::processor(weights.config, images[b]);
            vlm::PixelFeatures adv = f;
            for (std::size_t i = 0; i < adv.size(); ++i) adv[i] += uni.delta[i];
            const vlm::Image adv_img = vlm::quantized(vlm::reprocessor(weights.config, adv));
            char name[40];
            std::snprintf(name, sizeof(name), "member_%02zu_adv.ppm", b);
            vlm::write_ppm(dir + "/" + name, adv_img);
            vlm::DecodeConfig full_cfg = cfg.decode;
            full_cfg.max_new_tokens = cfg.full_window;
            const vlm::DecodeTrace t =
                vlm::generate_features(weights, vlm::processor(weights.config, adv_img), question, full_cfg);
            const metrics::LoopVerdict v = metrics::verdict_for_trace(t, cfg.max_period, cfg.min_repeats);
            member_verdicts.push_back(v);
            member_rows.push_back({{"member", b}, {"shape", members[b].shape}, {"verdict", v.to_json()},
                                   {"report", uni.reports[b].to_json()}});
        }
        stages.push_back({{"stage", "evaluate_members"}, {"count", cfg.batch}});

        stage = "evaluate_holdout";
        nlohmann::json holdout_rows = nlohmann::json::array();
        std::size_t holdout_hits = 0;
        for (std::size_t hidx = 0; hidx < cfg.holdout; ++hidx) {
            Rng rng(cfg.corpus_seed * 0x2545f4914f6cdd1dULL + cfg.seed + hidx * 104729ULL + 977ULL);
            const synth::Sample h =
                synth::make_sample(cfg.model, category, static_cast<std::size_t>(rng() % synth::shapes().size()), rng);
            const vlm::PixelFeatures f = vlm::processor(weights.config, h.image);
            // the shared delta may sit outside this unseen image's box; project first
            const attack::Perturbation d = attack::project(uni.delta, cfg.attack.epsilon, f);
            vlm::PixelFeatures adv = f;
            for (std::size_t i = 0; i < adv.size(); ++i) adv[i] += d[i];
            const vlm::Image adv_img = vlm::quantized(vlm::reprocessor(weights.config, adv));
            vlm::DecodeConfig full_cfg = cfg.decode;
            full_cfg.max_new_tokens = cfg.full_window;
            const vlm::DecodeTrace t =
                vlm::generate_features(weights, vlm::processor(weights.config, adv_img), question, full_cfg);
            const metrics::LoopVerdict v = metrics::verdict_for_trace(t, cfg.max_period, cfg.min_repeats);
            holdout_hits += v.looping ? 1 : 0;
            holdout_rows.push_back({{"holdout", hidx}, {"shape", h.shape}, {"verdict", v.to_json()}});
        }
        stages.push_back({{"stage", "evaluate_holdout"}, {"count", cfg.holdout}});

        const double member_rate = metrics::asr(member_verdicts);
        const double holdout_rate =
            cfg.holdout > 0 ? static_cast<double>(holdout_hits) / static_cast<double>(cfg.holdout) : 0.0;
        {
            std::ofstream csv(dir + "/radar.csv");
            csv << "category,member_success_rate,holdout_success_rate\n";
            csv << synth::colors()[category].name << "," << member_rate << "," << holdout_rate << "\n";
        }
        manifest["stages"] = stages;
        manifest["members"] = member_rows;
        manifest["holdout"] = holdout_rows;
        manifest["member_success_rate"] = member_rate;
        manifest["holdout_success_rate"] = holdout_rate;
        manifest["category"] = synth::colors()[category].name;
        manifest["mean_loss_trace_head"] = std::vector<double>(
            uni.mean_loss_trace.begin(),
            uni.mean_loss_trace.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(8, uni.mean_loss_trace.size())));
        manifest["mean_final_loss"] = uni.mean_loss_trace.back();
    } catch (const std::exception &e) {
        manifest["stages"] = stages;
        manifest["failed_stage"] = stage;
        manifest["error"] = e.what();
    }
    write_json_file(dir + "/manifest.json", manifest);
    return manifest;
}

nlohmann::json cmd_defend(const ExperimentConfig &cfg, const std::string &bundles_dir) {
    const std::string dir = cfg.out_dir;
    ensure_dir(dir);
    const vlm::ModelWeights weights = vlm::load_weights(cfg.weights_path);
    const vlm::TokenSeq question = vlm::tokenize(cfg.question);

    std::vector<defense::AttackedInput> attacked;
    for (const auto &entry : fs::recursive_directory_iterator(bundles_dir)) {
        if (entry.path().filename() != "manifest.json") continue;
        const nlohmann::json manifest = read_json_file(entry.path().string());
        if (manifest.value("kind", "") != "attack" || manifest.contains("failed_stage")) continue;
        const fs::path adv = entry.path().parent_path() / "adversarial.ppm";
        if (!fs::exists(adv)) continue;
        const vlm::Image img = vlm::read_ppm(adv.string());
        attacked.push_back({vlm::processor(weights.config, img),
                            vlm::tokenize(manifest.at("config").value("question", cfg.question))});
    }
    check(!attacked.empty(), "defend: no attack bundles under '" + bundles_dir + "'");

    std::vector<defense::AttackedInput> benign;
    const std::size_t benign_n = std::min<std::size_t>(attacked.size(), 8);
    for (std::size_t i = 0; i < benign_n; ++i) {
        const synth::Sample s = eval_sample(cfg.model, cfg.corpus_seed + 1, cfg.seed + i);
        benign.push_back({vlm::processor(weights.config, s.image), question});
    }

    vlm::DecodeConfig decode_cfg = cfg.decode;
    decode_cfg.max_new_tokens = cfg.full_window;
    const defense::DefenseGridReport grid =
        defense::defense_eval(weights, attacked, benign, cfg.defense_windows, cfg.defense_segment_lens,
                              cfg.defense_scales, decode_cfg, cfg.attack.threads);
    defense::write_grid_csv(dir + "/defense_grid.csv", grid);

    nlohmann::json manifest = base_manifest(cfg, "defend");
    manifest["attacked_count"] = attacked.size();
    manifest["benign_count"] = benign.size();
    manifest["grid"] = grid.to_json();
    write_json_file(dir + "/defense_grid.json", manifest);
    return manifest;
}

nlohmann::json cmd_report(const std::string &dir) {
    check(fs::exists(dir) && fs::is_directory(dir), "report: '" + dir + "' is not a directory");

    std::vector<nlohmann::json> attack_manifests;
    std::vector<nlohmann::json> universal_manifests;
    std::vector<nlohmann::json> defense_reports;
    std::vector<fs::path> paths;
    for (const auto &entry : fs::recursive_directory_iterator(dir)) paths.push_back(entry.path());
    std::sort(paths.begin(), paths.end());
    for (const fs::path &p : paths) {
        if (p.filename() == "manifest.json") {
            const nlohmann::json m = read_json_file(p.string());
            const std::string kind = m.value("kind", "");
            if (kind == "attack") attack_manifests.push_back(m);
            if (kind == "universal") universal_manifests.push_back(m);
        } else if (p.filename() == "defense_grid.json") {
            defense_reports.push_back(read_json_file(p.string()));
        }
    }
    check(!attack_manifests.empty() || !universal_manifests.empty() || !defense_reports.empty(),
          "report: no experiment outputs under '" + dir + "'");

    nlohmann::json summary;
    summary["kind"] = "summary";
    summary["attack_runs"] = attack_manifests.size();
    summary["universal_runs"] = universal_manifests.size();

    if (!attack_manifests.empty()) {
        std::vector<metrics::LoopVerdict> verdicts;
        double benign_len = 0.0, attacked_len = 0.0, benign_wall = 0.0, attacked_wall = 0.0;
        std::size_t agree = 0, fv_count = 0, truncated_positive = 0, agree_positive = 0, ok = 0;
        std::map<std::string, std::pair<std::size_t, std::size_t>> by_rho;  // hits, total
        for (const nlohmann::json &m : attack_manifests) {
            if (m.contains("failed_stage")) continue;
            ++ok;
            verdicts.push_back(metrics::LoopVerdict::from_json(m.at("verdict")));
            const std::string key =
                m.value("level", "?") + "/rho=" + std::to_string(m.value("rho", 0));
            by_rho[key].second += 1;
            by_rho[key].first += verdicts.back().looping ? 1 : 0;
            benign_len += m.value("benign_length", 0.0);
            attacked_len += m.value("attacked_length", 0.0);
            benign_wall += m.value("benign_wall_seconds", 0.0);
            attacked_wall += m.value("attacked_wall_seconds", 0.0);
            if (m.contains("fast_verify")) {
                ++fv_count;
                const bool p = m.at("fast_verify").at("predicted").get<bool>();
                const bool a = m.at("fast_verify").at("actual").get<bool>();
                if (p == a) ++agree;
                if (p) {
                    ++truncated_positive;
                    if (a) ++agree_positive;
                }
            }
        }
        if (ok > 0) {
            summary["asr"] = metrics::asr(verdicts);
            nlohmann::json rho_table = nlohmann::json::array();
            for (const auto &[key, hit_total] : by_rho) {
                rho_table.push_back({{"group", key},
                                     {"runs", hit_total.second},
                                     {"asr", static_cast<double>(hit_total.first) /
                                                 static_cast<double>(hit_total.second)}});
            }
            summary["asr_by_rho"] = rho_table;
            summary["mean_benign_length"] = benign_len / static_cast<double>(ok);
            summary["mean_attacked_length"] = attacked_len / static_cast<double>(ok);
            summary["length_amplification"] =
                benign_len > 0.0 ? attacked_len / benign_len : 0.0;
            summary["mean_benign_wall_seconds"] = benign_wall / static_cast<double>(ok);
            summary["mean_attacked_wall_seconds"] = attacked_wall / static_cast<double>(ok);
            if (fv_count > 0) {
                summary["fast_verify_agreement"] = static_cast<double>(agree) / static_cast<double>(fv_count);
                summary["fast_verify_agreement_truncation_positive"] =
                    truncated_positive > 0 ? static_cast<double>(agree_positive) / static_cast<double>(truncated_positive)
                                           : 0.0;
            }
        }
        summary["failed_attack_runs"] = attack_manifests.size() - ok;
    }
    if (!universal_manifests.empty()) {
        double member = 0.0, holdout = 0.0;
        std::size_t ok = 0;
        for (const nlohmann::json &m : universal_manifests) {
            if (m.contains("failed_stage")) continue;
            ++ok;
            member += m.value("member_success_rate", 0.0);
            holdout += m.value("holdout_success_rate", 0.0);
        }
        if (ok > 0) {
            summary["universal_member_success_rate"] = member / static_cast<double>(ok);
            summary["universal_holdout_success_rate"] = holdout / static_cast<double>(ok);
        }
    }
    if (!defense_reports.empty()) {
        double best_reduction = -1.0;
        nlohmann::json best_cell;
        for (const nlohmann::json &r : defense_reports) {
            for (const nlohmann::json &cell : r.at("grid").at("cells")) {
                if (cell.at("attacked_reduction").get<double>() > best_reduction) {
                    best_reduction = cell.at("attacked_reduction").get<double>();
                    best_cell = cell;
                }
            }
        }
        summary["defense_best_cell"] = best_cell;
    }

    write_json_file(dir + "/summary.json", summary);
    {
        std::ofstream csv(dir + "/summary.csv");
        csv << "metric,value\n";
        for (const auto &[key, value] : summary.items()) {
            if (value.is_number() || value.is_string() || value.is_boolean()) {
                csv << key << "," << value.dump() << "\n";
            }
        }
    }
    return summary;
}

}  // namespace looplab::harness
