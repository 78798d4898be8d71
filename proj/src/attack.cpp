// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#include "looplab/attack.hpp"

#include <cmath>
#include <future>
#include <limits>

namespace looplab::attack {

using ad::Tensor;

void AttackConfig::validate() const {
    check(epsilon >= 0.0, "attack: epsilon must be >= 0");
    check(step_size > 0.0, "attack: step_size must be > 0");
    check(epsilon == 0.0 || step_size <= epsilon, "attack: step_size must not exceed epsilon");
    check(early_stop_loss >= 0.0, "attack: early_stop_loss must be >= 0");
}

nlohmann::json AttackConfig::to_json() const {
    return {{"epsilon", epsilon}, {"step_size", step_size}, {"max_iters", max_iters},
            {"init", init == Init::zero ? "zero" : "uniform"}, {"seed", seed},
            {"early_stop_loss", early_stop_loss}, {"log_every", log_every},
            {"raw_gradient", raw_gradient}, {"threads", threads}};
}

AttackConfig AttackConfig::from_json(const nlohmann::json &j) {
    AttackConfig c;
    c.epsilon = j.value("epsilon", c.epsilon);
    c.step_size = j.value("step_size", c.step_size);
    c.max_iters = j.value("max_iters", c.max_iters);
    c.init = j.value("init", "zero") == std::string("uniform") ? Init::uniform : Init::zero;
    c.seed = j.value("seed", c.seed);
    c.early_stop_loss = j.value("early_stop_loss", c.early_stop_loss);
    c.log_every = j.value("log_every", c.log_every);
    c.raw_gradient = j.value("raw_gradient", c.raw_gradient);
    c.threads = j.value("threads", c.threads);
    c.validate();
    return c;
}

nlohmann::json AttackReport::to_json() const {
    return {{"loss_trace", loss_trace}, {"final_loss", final_loss}, {"iterations_run", iterations_run},
            {"feasibility_violations", feasibility_violations}, {"aborted", aborted},
            {"abort_reason", abort_reason}, {"perturbation_path", perturbation_path},
            {"adversarial_image_path", adversarial_image_path}, {"decode_outcome", decode_outcome}};
}

std::pair<double, ad::Tensor> recall_loss(const vlm::ModelWeights &weights, const vlm::PixelFeatures &features_tilde,
                                          const vlm::TokenSeq &question, const recall::RecallTarget &target) {
    // shape/finiteness only: the loss is well-defined slightly outside the
    // box, which finite-difference probes at the boundary rely on; the box
    // constraint itself is enforced by project() inside the attack loop
    check(features_tilde.rank() == 2 && features_tilde.rows() == weights.config.patches() &&
              features_tilde.cols() == weights.config.patch_dim(),
          "recall_loss: features shape " + features_tilde.shape_str() + " does not match model geometry");
    check(features_tilde.all_finite(), "recall_loss: non-finite features");
    if (target.sequence.empty()) {
        return {0.0, Tensor(features_tilde.shape())};
    }
    ad::Tape tape;
    vlm::WeightVars wv = vlm::stage_weights(tape, weights, false);
    ad::Var f = tape.leaf(features_tilde, true);
    vlm::TeacherForcedLoss tf = vlm::build_teacher_forced_ce(tape, weights.config, wv, f, question, target.sequence);
    tape.backward(tf.loss);
    return {tape.value(tf.loss)[0], tape.grad(f)};
}

namespace {

// Move x by ulps until pred(x) holds; the projection bounds are at most a
// couple of rounding errors away.
template <typename Pred>
double nudge(double x, double toward, Pred pred) {
    while (!pred(x)) x = std::nextafter(x, toward);
    return x;
}

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

Perturbation project_multi(Perturbation delta, double epsilon, const std::vector<vlm::PixelFeatures> &features) {
    check(!features.empty(), "project: no features");
    for (const vlm::PixelFeatures &f : features) {
        check(f.same_shape(delta), "project: delta shape " + delta.shape_str() + " vs features " + f.shape_str());
    }
    for (std::size_t i = 0; i < delta.size(); ++i) {
        double d = std::min(epsilon, std::max(-epsilon, delta[i]));
        for (const vlm::PixelFeatures &f : features) {
            const double fv = f[i];
            if (fv + d > 1.0) {
                d = nudge(1.0 - fv, -kInf, [fv](double x) { return fv + x <= 1.0; });
            }
            if (fv + d < -1.0) {
                d = nudge(-1.0 - fv, kInf, [fv](double x) { return fv + x >= -1.0; });
            }
        }
        delta[i] = d;
    }
    return delta;
}

Perturbation project(Perturbation delta, double epsilon, const vlm::PixelFeatures &features) {
    return project_multi(std::move(delta), epsilon, std::vector<vlm::PixelFeatures>{features});
}

namespace {

struct SampleEval {
    double loss = 0.0;
    Tensor grad;
};

std::size_t count_feasibility_violations(const Perturbation &delta, double epsilon,
                                         const std::vector<vlm::PixelFeatures> &features) {
    std::size_t violations = 0;
    for (std::size_t i = 0; i < delta.size(); ++i) {
        if (std::fabs(delta[i]) > epsilon) ++violations;
        for (const vlm::PixelFeatures &f : features) {
            const double t = f[i] + delta[i];
            if (t < -1.0 || t > 1.0) ++violations;
        }
    }
    return violations;
}

Tensor apply_delta(const vlm::PixelFeatures &features, const Perturbation &delta) {
    Tensor out = features;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += delta[i];
    return out;
}

// Shared PGD engine; pgd_attack is the B=1 case so both paths are literally
// the same code.
UniversalAttackResult run_pgd(const vlm::ModelWeights &weights, const std::vector<vlm::PixelFeatures> &features,
                              const std::vector<vlm::TokenSeq> &questions,
                              const std::vector<recall::RecallTarget> &targets, const AttackConfig &cfg) {
    cfg.validate();
    const std::size_t batch = features.size();
    check(batch >= 1, "pgd: empty batch");
    check(questions.size() == batch && targets.size() == batch, "pgd: batch size mismatch");
    for (const vlm::PixelFeatures &f : features) {
        check(f.same_shape(features[0]), "pgd: feature geometry mismatch across batch");
    }

    std::size_t total_target_tokens = 0;
    for (const recall::RecallTarget &t : targets) total_target_tokens += t.sequence.size();

    UniversalAttackResult result;
    result.reports.resize(batch);

    Perturbation delta(features[0].shape());
    if (cfg.init == AttackConfig::Init::uniform && cfg.epsilon > 0.0) {
        Rng rng(cfg.seed);
        for (double &d : delta.vec()) d = uniform(rng, -cfg.epsilon, cfg.epsilon);
    }
    delta = project_multi(std::move(delta), cfg.epsilon, features);

    auto evaluate = [&](const Perturbation &d) {
        std::vector<SampleEval> evals(batch);
        auto eval_one = [&](std::size_t b) {
            SampleEval e;
            auto [loss, grad] = recall_loss(weights, apply_delta(features[b], d), questions[b], targets[b]);
            e.loss = loss;
            e.grad = std::move(grad);
            return e;
        };
        if (cfg.threads > 1 && batch > 1) {
            std::vector<std::future<SampleEval>> futs;
            for (std::size_t b = 0; b < batch; ++b)
                futs.push_back(std::async(std::launch::async, eval_one, b));
            for (std::size_t b = 0; b < batch; ++b) evals[b] = futs[b].get();
        } else {
            for (std::size_t b = 0; b < batch; ++b) evals[b] = eval_one(b);
        }
        return evals;
    };

    auto record = [&](const std::vector<SampleEval> &evals) {
        double mean = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            result.reports[b].loss_trace.push_back(evals[b].loss);
            mean += evals[b].loss;
        }
        mean /= static_cast<double>(batch);
        result.mean_loss_trace.push_back(mean);
        return mean;
    };

    std::vector<SampleEval> evals = evaluate(delta);
    double mean_loss = record(evals);

    auto finish = [&](std::size_t iterations, bool aborted, const std::string &reason) {
        result.iterations_run = iterations;
        result.delta = delta;
        for (std::size_t b = 0; b < batch; ++b) {
            AttackReport &r = result.reports[b];
            r.iterations_run = iterations;
            r.final_loss = r.loss_trace.back();
            r.aborted = aborted;
            r.abort_reason = reason;
        }
        return result;
    };

    if (!std::isfinite(mean_loss)) return finish(0, true, "non-finite initial loss");

    for (std::size_t k = 1; k <= cfg.max_iters; ++k) {
        // mean-loss gradient: samples share delta, so it is the per-sample mean
        Tensor g(delta.shape());
        for (const SampleEval &e : evals)
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += e.grad[i];
        const double inv_b = 1.0 / static_cast<double>(batch);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= inv_b;

        if (cfg.raw_gradient) {
            for (std::size_t i = 0; i < delta.size(); ++i) delta[i] -= cfg.step_size * g[i];
        } else {
            for (std::size_t i = 0; i < delta.size(); ++i) {
                const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
                delta[i] -= cfg.step_size * s;
            }
        }
        delta = project_multi(std::move(delta), cfg.epsilon, features);
        const std::size_t violations = count_feasibility_violations(delta, cfg.epsilon, features);
        for (AttackReport &r : result.reports) r.feasibility_violations += violations;

        evals = evaluate(delta);
        mean_loss = record(evals);
        if (!std::isfinite(mean_loss)) return finish(k, true, "non-finite loss at iteration " + std::to_string(k));

        const double per_token =
            total_target_tokens > 0 ? mean_loss * static_cast<double>(batch) / static_cast<double>(total_target_tokens)
                                    : 0.0;
        if (per_token < cfg.early_stop_loss) {
            return finish(k, false, "");
        }
    }
    return finish(cfg.max_iters, false, "");
}

}  // namespace

SingleAttackResult pgd_attack(const vlm::ModelWeights &weights, const vlm::Image &image, const vlm::TokenSeq &question,
                              const recall::RecallTarget &target, const AttackConfig &cfg) {
    const vlm::PixelFeatures features = vlm::processor(weights.config, image);
    UniversalAttackResult uni = run_pgd(weights, {features}, {question}, {target}, cfg);
    SingleAttackResult out;
    out.report = std::move(uni.reports[0]);
    out.delta = std::move(uni.delta);
    out.adversarial = vlm::quantized(vlm::reprocessor(weights.config, apply_delta(features, out.delta)));
    return out;
}

UniversalAttackResult universal_pgd(const vlm::ModelWeights &weights, const std::vector<vlm::Image> &images,
                                    const std::vector<vlm::TokenSeq> &questions,
                                    const std::vector<recall::RecallTarget> &targets, const AttackConfig &cfg) {
    std::vector<vlm::PixelFeatures> features;
    features.reserve(images.size());
    for (const vlm::Image &img : images) features.push_back(vlm::processor(weights.config, img));
    return run_pgd(weights, features, questions, targets, cfg);
}

}  // namespace looplab::attack
