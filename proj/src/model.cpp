// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#include "looplab/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>

#include "looplab/tensor_io.hpp"

namespace looplab::vlm {

using ad::Tensor;

void ModelConfig::validate() const {
    check(image_h > 0 && image_w > 0 && channels > 0 && patch > 0, "config: empty geometry");
    check(image_h % patch == 0 && image_w % patch == 0, "config: image not divisible by patch");
    check(embed_dim > 0 && heads > 0 && embed_dim % heads == 0, "config: embed_dim must divide by heads");
    check(layers > 0 && ff_dim > 0, "config: empty transformer");
    check(vocab == static_cast<std::size_t>(kVocabSize), "config: vocab must match tokenizer");
    check(max_context >= patches() + 8, "config: context too small for visual prefix");
}

nlohmann::json ModelConfig::to_json() const {
    return {{"image_h", image_h}, {"image_w", image_w}, {"channels", channels}, {"patch", patch},
            {"embed_dim", embed_dim}, {"layers", layers}, {"heads", heads}, {"ff_dim", ff_dim},
            {"vocab", vocab}, {"max_context", max_context}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json &j) {
    ModelConfig c;
    c.image_h = j.at("image_h").get<std::size_t>();
    c.image_w = j.at("image_w").get<std::size_t>();
    c.channels = j.at("channels").get<std::size_t>();
    c.patch = j.at("patch").get<std::size_t>();
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.ff_dim = j.at("ff_dim").get<std::size_t>();
    c.vocab = j.at("vocab").get<std::size_t>();
    c.max_context = j.at("max_context").get<std::size_t>();
    c.validate();
    return c;
}

// ---- processor / reprocessor ------------------------------------------------

PixelFeatures processor(const ModelConfig &cfg, const Image &img) {
    check(img.height == cfg.image_h && img.width == cfg.image_w && img.channels == cfg.channels,
          "processor: image geometry mismatch");
    validate_image(img);
    const std::size_t per_side = cfg.image_w / cfg.patch;
    Tensor features({cfg.patches(), cfg.patch_dim()});
    for (std::size_t pr = 0; pr < cfg.image_h / cfg.patch; ++pr) {
        for (std::size_t pc = 0; pc < per_side; ++pc) {
            const std::size_t pi = pr * per_side + pc;
            for (std::size_t y = 0; y < cfg.patch; ++y) {
                for (std::size_t x = 0; x < cfg.patch; ++x) {
                    for (std::size_t c = 0; c < cfg.channels; ++c) {
                        const double p = img.at(pr * cfg.patch + y, pc * cfg.patch + x, c);
                        features(pi, (y * cfg.patch + x) * cfg.channels + c) = 2.0 * p - 1.0;
                    }
                }
            }
        }
    }
    return features;
}

void validate_features(const ModelConfig &cfg, const PixelFeatures &features) {
    check(features.rank() == 2 && features.rows() == cfg.patches() && features.cols() == cfg.patch_dim(),
          "features: shape " + features.shape_str() + " does not match model geometry");
    for (double v : features.vec()) {
        check(v >= -1.0 && v <= 1.0 && std::isfinite(v),
              "features: entry " + std::to_string(v) + " outside [-1,1]");
    }
}

Image reprocessor(const ModelConfig &cfg, const PixelFeatures &features) {
    validate_features(cfg, features);
    const std::size_t per_side = cfg.image_w / cfg.patch;
    Image img(cfg.image_h, cfg.image_w, cfg.channels);
    for (std::size_t pr = 0; pr < cfg.image_h / cfg.patch; ++pr) {
        for (std::size_t pc = 0; pc < per_side; ++pc) {
            const std::size_t pi = pr * per_side + pc;
            for (std::size_t y = 0; y < cfg.patch; ++y) {
                for (std::size_t x = 0; x < cfg.patch; ++x) {
                    for (std::size_t c = 0; c < cfg.channels; ++c) {
                        const double f = features(pi, (y * cfg.patch + x) * cfg.channels + c);
                        img.at(pr * cfg.patch + y, pc * cfg.patch + x, c) = (f + 1.0) / 2.0;
                    }
                }
            }
        }
    }
    return img;
}

// ---- weights ----------------------------------------------------------------

ModelWeights ModelWeights::random(const ModelConfig &cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    const double std_ = 0.08;
    ModelWeights w;
    w.config = cfg;
    const std::size_t d = cfg.embed_dim;
    w.patch_proj = ad::random_gaussian({cfg.patch_dim(), d}, 0.0, std_, rng);
    w.patch_bias = Tensor({1, d});
    w.token_embed = ad::random_gaussian({cfg.vocab, d}, 0.0, std_, rng);
    w.pos_embed = ad::random_gaussian({cfg.max_context, d}, 0.0, std_, rng);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        BlockWeights b;
        b.ln1_g = Tensor::full({1, d}, 1.0);
        b.ln1_b = Tensor({1, d});
        b.wq = ad::random_gaussian({d, d}, 0.0, std_, rng);
        b.wk = ad::random_gaussian({d, d}, 0.0, std_, rng);
        b.wv = ad::random_gaussian({d, d}, 0.0, std_, rng);
        b.wo = ad::random_gaussian({d, d}, 0.0, std_, rng);
        b.bq = Tensor({1, d});
        b.bk = Tensor({1, d});
        b.bv = Tensor({1, d});
        b.bo = Tensor({1, d});
        b.ln2_g = Tensor::full({1, d}, 1.0);
        b.ln2_b = Tensor({1, d});
        b.w1 = ad::random_gaussian({d, cfg.ff_dim}, 0.0, std_, rng);
        b.b1 = Tensor({1, cfg.ff_dim});
        b.w2 = ad::random_gaussian({cfg.ff_dim, d}, 0.0, std_, rng);
        b.b2 = Tensor({1, d});
        w.blocks.push_back(std::move(b));
    }
    w.final_ln_g = Tensor::full({1, d}, 1.0);
    w.final_ln_b = Tensor({1, d});
    w.head_w = ad::random_gaussian({d, cfg.vocab}, 0.0, std_, rng);
    w.head_b = Tensor({1, cfg.vocab});
    return w;
}

void ModelWeights::validate() const {
    config.validate();
    const std::size_t d = config.embed_dim;
    check(patch_proj.rows() == config.patch_dim() && patch_proj.cols() == d, "weights: patch_proj shape");
    check(token_embed.rows() == config.vocab && token_embed.cols() == d, "weights: token_embed shape");
    check(pos_embed.rows() == config.max_context && pos_embed.cols() == d, "weights: pos_embed shape");
    check(blocks.size() == config.layers, "weights: block count");
    check(head_w.rows() == d && head_w.cols() == config.vocab, "weights: head shape");
    bool finite = patch_proj.all_finite() && token_embed.all_finite() && pos_embed.all_finite() && head_w.all_finite();
    for (const BlockWeights &b : blocks) {
        finite = finite && b.wq.all_finite() && b.wk.all_finite() && b.wv.all_finite() && b.wo.all_finite() &&
                 b.w1.all_finite() && b.w2.all_finite();
    }
    check(finite, "weights: non-finite parameter");
}

void ModelWeights::for_each_param(const std::function<void(const std::string &, ad::Tensor &)> &fn) {
    fn("patch_proj", patch_proj);
    fn("patch_bias", patch_bias);
    fn("token_embed", token_embed);
    fn("pos_embed", pos_embed);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        BlockWeights &b = blocks[l];
        const std::string p = "block" + std::to_string(l) + ".";
        fn(p + "ln1_g", b.ln1_g);
        fn(p + "ln1_b", b.ln1_b);
        fn(p + "wq", b.wq);
        fn(p + "wk", b.wk);
        fn(p + "wv", b.wv);
        fn(p + "wo", b.wo);
        fn(p + "bq", b.bq);
        fn(p + "bk", b.bk);
        fn(p + "bv", b.bv);
        fn(p + "bo", b.bo);
        fn(p + "ln2_g", b.ln2_g);
        fn(p + "ln2_b", b.ln2_b);
        fn(p + "w1", b.w1);
        fn(p + "b1", b.b1);
        fn(p + "w2", b.w2);
        fn(p + "b2", b.b2);
    }
    fn("final_ln_g", final_ln_g);
    fn("final_ln_b", final_ln_b);
    fn("head_w", head_w);
    fn("head_b", head_b);
}

void ModelWeights::for_each_param(const std::function<void(const std::string &, const ad::Tensor &)> &fn) const {
    const_cast<ModelWeights *>(this)->for_each_param(
        [&fn](const std::string &name, ad::Tensor &t) { fn(name, t); });
}

void save_weights(const std::string &path, const ModelWeights &weights) {
    std::vector<io::NamedTensor> tensors;
    weights.for_each_param([&](const std::string &name, const ad::Tensor &t) { tensors.push_back({name, t}); });
    io::save_tensors(path, tensors, {{"model", weights.config.to_json()}});
}

ModelWeights load_weights(const std::string &path) {
    io::TensorFile file = io::load_tensors(path);
    check(file.config.contains("model"), "weights: missing model config in '" + path + "'");
    ModelWeights w;
    w.config = ModelConfig::from_json(file.config.at("model"));
    w.blocks.resize(w.config.layers);
    w.for_each_param([&](const std::string &name, ad::Tensor &t) { t = file.get(name); });
    w.validate();
    return w;
}

TokenSeq prompt_text_ids(const TokenSeq &question) {
    TokenSeq ids;
    ids.reserve(question.size() + 2);
    ids.push_back(kBosToken);
    ids.insert(ids.end(), question.begin(), question.end());
    ids.push_back(kSepToken);
    return ids;
}

// ---- tape path --------------------------------------------------------------

WeightVars stage_weights(ad::Tape &tape, const ModelWeights &w, bool trainable) {
    auto put = [&](const Tensor &t) { return trainable ? tape.leaf(t, true) : tape.constant(t); };
    WeightVars v;
    v.patch_proj = put(w.patch_proj);
    v.patch_bias = put(w.patch_bias);
    v.token_embed = put(w.token_embed);
    v.pos_embed = put(w.pos_embed);
    for (const BlockWeights &b : w.blocks) {
        WeightVars::Block bv;
        bv.ln1_g = put(b.ln1_g);
        bv.ln1_b = put(b.ln1_b);
        bv.wq = put(b.wq);
        bv.wk = put(b.wk);
        bv.wv = put(b.wv);
        bv.wo = put(b.wo);
        bv.bq = put(b.bq);
        bv.bk = put(b.bk);
        bv.bv = put(b.bv);
        bv.bo = put(b.bo);
        bv.ln2_g = put(b.ln2_g);
        bv.ln2_b = put(b.ln2_b);
        bv.w1 = put(b.w1);
        bv.b1 = put(b.b1);
        bv.w2 = put(b.w2);
        bv.b2 = put(b.b2);
        v.blocks.push_back(bv);
    }
    v.final_ln_g = put(w.final_ln_g);
    v.final_ln_b = put(w.final_ln_b);
    v.head_w = put(w.head_w);
    v.head_b = put(w.head_b);
    return v;
}

// Parameter vars in for_each_param order; used to read out training gradients.
static std::vector<ad::Var> ordered_vars(const WeightVars &v) {
    std::vector<ad::Var> out = {v.patch_proj, v.patch_bias, v.token_embed, v.pos_embed};
    for (const WeightVars::Block &b : v.blocks) {
        for (ad::Var x : {b.ln1_g, b.ln1_b, b.wq, b.wk, b.wv, b.wo, b.bq, b.bk, b.bv, b.bo,
                          b.ln2_g, b.ln2_b, b.w1, b.b1, b.w2, b.b2})
            out.push_back(x);
    }
    out.push_back(v.final_ln_g);
    out.push_back(v.final_ln_b);
    out.push_back(v.head_w);
    out.push_back(v.head_b);
    return out;
}

ad::Var build_sequence_logits(ad::Tape &tape, const ModelConfig &cfg, const WeightVars &w, ad::Var features,
                              const TokenSeq &text_ids, std::size_t row0, std::size_t row1,
                              std::size_t text_pos_offset) {
    const std::size_t total = cfg.patches() + text_ids.size();
    check(text_pos_offset >= cfg.patches() && text_pos_offset + text_ids.size() <= cfg.max_context,
          "context overflow: text at positions " + std::to_string(text_pos_offset) + ".." +
              std::to_string(text_pos_offset + text_ids.size()) + " exceeds " + std::to_string(cfg.max_context));
    check(row0 <= row1 && row1 <= total, "build_sequence_logits: bad row range");

    ad::Var visual = tape.add_row(tape.matmul(features, w.patch_proj), w.patch_bias);
    ad::Var x = text_ids.empty() ? visual
                                 : tape.concat_rows({visual, tape.embedding(w.token_embed, text_ids)});
    ad::Var pos = text_ids.empty()
                      ? tape.slice_rows(w.pos_embed, 0, cfg.patches())
                      : tape.concat_rows({tape.slice_rows(w.pos_embed, 0, cfg.patches()),
                                          tape.slice_rows(w.pos_embed, text_pos_offset,
                                                          text_pos_offset + text_ids.size())});
    x = tape.add(x, pos);

    const std::size_t hd = cfg.head_dim();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    for (const WeightVars::Block &b : w.blocks) {
        ad::Var h = tape.layer_norm(x, b.ln1_g, b.ln1_b);
        ad::Var q = tape.add_row(tape.matmul(h, b.wq), b.bq);
        ad::Var k = tape.add_row(tape.matmul(h, b.wk), b.bk);
        ad::Var v = tape.add_row(tape.matmul(h, b.wv), b.bv);
        std::vector<ad::Var> head_outs;
        for (std::size_t i = 0; i < cfg.heads; ++i) {
            ad::Var qi = tape.slice_cols(q, i * hd, (i + 1) * hd);
            ad::Var ki = tape.slice_cols(k, i * hd, (i + 1) * hd);
            ad::Var vi = tape.slice_cols(v, i * hd, (i + 1) * hd);
            ad::Var scores = tape.causal_mask(tape.scale(tape.matmul_bt(qi, ki), inv_sqrt));
            head_outs.push_back(tape.matmul(tape.softmax_rows(scores), vi));
        }
        ad::Var attn = tape.add_row(tape.matmul(tape.concat_cols(head_outs), b.wo), b.bo);
        x = tape.add(x, attn);
        ad::Var h2 = tape.layer_norm(x, b.ln2_g, b.ln2_b);
        ad::Var f = tape.gelu(tape.add_row(tape.matmul(h2, b.w1), b.b1));
        x = tape.add(x, tape.add_row(tape.matmul(f, b.w2), b.b2));
    }
    ad::Var xf = tape.layer_norm(x, w.final_ln_g, w.final_ln_b);
    return tape.add_row(tape.matmul(tape.slice_rows(xf, row0, row1), w.head_w), w.head_b);
}

TeacherForcedLoss build_teacher_forced_ce(ad::Tape &tape, const ModelConfig &cfg, const WeightVars &w,
                                          ad::Var features, const TokenSeq &question, const TokenSeq &target,
                                          std::size_t text_pos_offset) {
    TeacherForcedLoss out;
    if (target.empty()) return out;
    if (text_pos_offset == SIZE_MAX) text_pos_offset = cfg.patches();

    TokenSeq text = prompt_text_ids(question);
    const std::size_t prompt_rows = cfg.patches() + text.size();
    text.insert(text.end(), target.begin(), target.end() - 1);

    out.logits = build_sequence_logits(tape, cfg, w, features, text, prompt_rows - 1, prompt_rows - 1 + target.size(),
                                       text_pos_offset);

    Tensor one_hot({target.size(), cfg.vocab});
    for (std::size_t i = 0; i < target.size(); ++i) {
        check(target[i] >= 0 && static_cast<std::size_t>(target[i]) < cfg.vocab, "target token out of vocab");
        one_hot(i, static_cast<std::size_t>(target[i])) = 1.0;
    }
    out.loss = tape.cross_entropy(out.logits, one_hot);
    return out;
}

// ---- inference path ----------------------------------------------------------

namespace {

Tensor layer_norm_rows(const Tensor &x, const Tensor &g, const Tensor &b) {
    Tensor y = x;
    const std::size_t m = x.rows(), w = x.cols();
    for (std::size_t i = 0; i < m; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < w; ++j) mean += x(i, j);
        mean /= static_cast<double>(w);
        double var = 0.0;
        for (std::size_t j = 0; j < w; ++j) {
            const double d = x(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(w);
        const double inv = 1.0 / std::sqrt(var + ad::kLayerNormEps);
        for (std::size_t j = 0; j < w; ++j) y(i, j) = (x(i, j) - mean) * inv * g[j] + b[j];
    }
    return y;
}

Tensor linear_rows(const Tensor &x, const Tensor &w, const Tensor &b) {
    Tensor y = ad::matmul(x, w);
    for (std::size_t i = 0; i < y.rows(); ++i)
        for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += b[j];
    return y;
}

void gelu_inplace(Tensor &x) {
    constexpr double c0 = 0.7978845608028654;
    constexpr double c1 = 0.044715;
    for (double &v : x.vec()) {
        const double u = c0 * (v + c1 * v * v * v);
        v = 0.5 * v * (1.0 + std::tanh(u));
    }
}

struct LayerCache {
    std::vector<double> k, v;  // packed rows x d
    std::size_t rows = 0;
};

// Incremental transformer state over [visual rows | text rows]; new rows are
// appended in blocks and attend causally over everything cached so far.
class Session {
public:
    Session(const ModelWeights &w, const PixelFeatures &features) : w_(w), features_(features) {
        cache_.resize(w.config.layers);
        const std::size_t d = w.config.embed_dim;
        for (LayerCache &c : cache_) {
            c.k.reserve(w.config.max_context * d);
            c.v.reserve(w.config.max_context * d);
        }
    }

    std::size_t rows() const { return rows_; }

    // Visual prefix plus text rows; positions are absolute. Returns hidden
    // states (pre final layer norm) of the appended rows.
    Tensor extend_visual_and_text(const TokenSeq &text) {
        check(rows_ == 0, "session: visual prefix must come first");
        const ModelConfig &cfg = w_.config;
        Tensor emb({cfg.patches() + text.size(), cfg.embed_dim});
        Tensor visual = linear_rows(features_, w_.patch_proj, w_.patch_bias);
        for (std::size_t i = 0; i < visual.rows(); ++i)
            for (std::size_t j = 0; j < visual.cols(); ++j) emb(i, j) = visual(i, j) + w_.pos_embed(i, j);
        embed_text_rows(text, cfg.patches(), emb, visual.rows());
        return extend(emb);
    }

    Tensor extend_text(const TokenSeq &text) {
        const ModelConfig &cfg = w_.config;
        Tensor emb({text.size(), cfg.embed_dim});
        embed_text_rows(text, rows_, emb, 0);
        return extend(emb);
    }

    std::vector<double> head_logits(const Tensor &hidden, std::size_t row) const {
        const ModelConfig &cfg = w_.config;
        Tensor one({1, cfg.embed_dim});
        for (std::size_t j = 0; j < cfg.embed_dim; ++j) one(0, j) = hidden(row, j);
        Tensor xf = layer_norm_rows(one, w_.final_ln_g, w_.final_ln_b);
        Tensor logits = linear_rows(xf, w_.head_w, w_.head_b);
        return logits.vec();
    }

    Tensor head_logits_rows(const Tensor &hidden, std::size_t r0, std::size_t r1) const {
        const ModelConfig &cfg = w_.config;
        Tensor sel({r1 - r0, cfg.embed_dim});
        for (std::size_t i = r0; i < r1; ++i)
            for (std::size_t j = 0; j < cfg.embed_dim; ++j) sel(i - r0, j) = hidden(i, j);
        return linear_rows(layer_norm_rows(sel, w_.final_ln_g, w_.final_ln_b), w_.head_w, w_.head_b);
    }

private:
    void embed_text_rows(const TokenSeq &text, std::size_t pos0, Tensor &emb, std::size_t dst0) {
        const ModelConfig &cfg = w_.config;
        check(pos0 + text.size() <= cfg.max_context, "context overflow");
        for (std::size_t i = 0; i < text.size(); ++i) {
            const Token t = text[i];
            check(t >= 0 && static_cast<std::size_t>(t) < cfg.vocab, "token out of vocab");
            for (std::size_t j = 0; j < cfg.embed_dim; ++j)
                emb(dst0 + i, j) = w_.token_embed(static_cast<std::size_t>(t), j) + w_.pos_embed(pos0 + i, j);
        }
    }

    Tensor extend(const Tensor &emb) {
        const ModelConfig &cfg = w_.config;
        const std::size_t r = emb.rows(), d = cfg.embed_dim, hd = cfg.head_dim();
        const std::size_t base = rows_;
        check(base + r <= cfg.max_context, "context overflow");
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

        Tensor x = emb;
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            const BlockWeights &b = w_.blocks[l];
            LayerCache &cache = cache_[l];
            Tensor h = layer_norm_rows(x, b.ln1_g, b.ln1_b);
            Tensor q = linear_rows(h, b.wq, b.bq);
            Tensor k = linear_rows(h, b.wk, b.bk);
            Tensor v = linear_rows(h, b.wv, b.bv);
            cache.k.insert(cache.k.end(), k.data(), k.data() + k.size());
            cache.v.insert(cache.v.end(), v.data(), v.data() + v.size());
            cache.rows += r;

            Tensor attn({r, d});
            std::vector<double> scores(base + r);
            for (std::size_t i = 0; i < r; ++i) {
                const std::size_t keys = base + i + 1;  // causal: positions 0..base+i
                for (std::size_t head = 0; head < cfg.heads; ++head) {
                    const std::size_t off = head * hd;
                    double mx = -1e300;
                    for (std::size_t j = 0; j < keys; ++j) {
                        const double *kj = cache.k.data() + j * d + off;
                        const double *qi = q.data() + i * d + off;
                        double s = 0.0;
                        for (std::size_t t = 0; t < hd; ++t) s += qi[t] * kj[t];
                        s *= inv_sqrt;
                        scores[j] = s;
                        mx = std::max(mx, s);
                    }
                    double total = 0.0;
                    for (std::size_t j = 0; j < keys; ++j) {
                        scores[j] = std::exp(scores[j] - mx);
                        total += scores[j];
                    }
                    for (std::size_t t = 0; t < hd; ++t) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < keys; ++j) acc += scores[j] * cache.v[j * d + off + t];
                        attn(i, off + t) = acc / total;
                    }
                }
            }
            Tensor proj = linear_rows(attn, b.wo, b.bo);
            for (std::size_t idx = 0; idx < x.size(); ++idx) x[idx] += proj[idx];

            Tensor h2 = layer_norm_rows(x, b.ln2_g, b.ln2_b);
            Tensor f = linear_rows(h2, b.w1, b.b1);
            gelu_inplace(f);
            Tensor ff = linear_rows(f, b.w2, b.b2);
            for (std::size_t idx = 0; idx < x.size(); ++idx) x[idx] += ff[idx];
        }
        rows_ += r;
        return x;
    }

    const ModelWeights &w_;
    PixelFeatures features_;
    std::vector<LayerCache> cache_;
    std::size_t rows_ = 0;
};

// Room left after a context slide so rebuilds amortize over many steps.
constexpr std::size_t kSlideHeadroom = 64;

}  // namespace

ad::Tensor forward_teacher_forced(const ModelWeights &weights, const PixelFeatures &features,
                                  const TokenSeq &question, const TokenSeq &target) {
    weights.config.validate();
    validate_features(weights.config, features);
    if (target.empty()) return Tensor({0, weights.config.vocab});

    TokenSeq text = prompt_text_ids(question);
    const std::size_t prompt_rows = weights.config.patches() + text.size();
    text.insert(text.end(), target.begin(), target.end() - 1);
    check(weights.config.patches() + text.size() <= weights.config.max_context, "context overflow");

    Session session(weights, features);
    Tensor hidden = session.extend_visual_and_text(text);
    return session.head_logits_rows(hidden, prompt_rows - 1, prompt_rows - 1 + target.size());
}

void DecodeConfig::validate() const {
    check(temperature > 0.0, "decode: temperature must be positive");
    check(repetition_penalty >= 1.0, "decode: repetition_penalty must be >= 1");
    check(top_k >= 1, "decode: top_k must be >= 1");
}

nlohmann::json DecodeConfig::to_json() const {
    return {{"max_new_tokens", max_new_tokens}, {"greedy", greedy}, {"temperature", temperature},
            {"repetition_penalty", repetition_penalty}, {"top_k", top_k}, {"seed", seed}, {"eos_token", eos_token}};
}

DecodeConfig DecodeConfig::from_json(const nlohmann::json &j) {
    DecodeConfig c;
    c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
    c.greedy = j.value("greedy", c.greedy);
    c.temperature = j.value("temperature", c.temperature);
    c.repetition_penalty = j.value("repetition_penalty", c.repetition_penalty);
    c.top_k = j.value("top_k", c.top_k);
    c.seed = j.value("seed", c.seed);
    c.eos_token = j.value("eos_token", c.eos_token);
    c.validate();
    return c;
}

namespace {

void apply_repetition_penalty(const TokenSeq &generated, double penalty, std::vector<double> &logits) {
    if (penalty <= 1.0) return;
    std::vector<bool> seen(logits.size(), false);
    for (Token t : generated) {
        const auto idx = static_cast<std::size_t>(t);
        if (idx < logits.size() && !seen[idx]) {
            seen[idx] = true;
            if (logits[idx] > 0.0)
                logits[idx] /= penalty;
            else
                logits[idx] *= penalty;
        }
    }
}

std::vector<TopEntry> top_entries(const std::vector<double> &logits, std::size_t k) {
    std::vector<TopEntry> all(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) all[i] = {static_cast<Token>(i), logits[i]};
    const std::size_t keep = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(),
                      [](const TopEntry &a, const TopEntry &b) {
                          return a.logit > b.logit || (a.logit == b.logit && a.token < b.token);
                      });
    all.resize(keep);
    return all;
}

Token select_token(const std::vector<double> &logits, const DecodeConfig &cfg, Rng &rng) {
    if (cfg.greedy) {
        return static_cast<Token>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    }
    std::vector<TopEntry> pool = top_entries(logits, cfg.top_k);
    double mx = pool.front().logit / cfg.temperature;
    double total = 0.0;
    std::vector<double> probs(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        probs[i] = std::exp(pool[i].logit / cfg.temperature - mx);
        total += probs[i];
    }
    const double draw = uniform(rng, 0.0, 1.0) * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        acc += probs[i];
        if (draw < acc) return pool[i].token;
    }
    return pool.back().token;
}

}  // namespace

DecodeTrace generate_features(const ModelWeights &weights, const PixelFeatures &features, const TokenSeq &question,
                              const DecodeConfig &cfg, const LogitsHook *hook) {
    cfg.validate();
    weights.config.validate();
    validate_features(weights.config, features);
    const ModelConfig &mc = weights.config;
    const TokenSeq prompt = prompt_text_ids(question);
    const std::size_t prompt_rows = mc.patches() + prompt.size();
    check(prompt_rows + 1 + kSlideHeadroom <= mc.max_context, "context overflow: prompt too long");

    DecodeTrace trace;
    trace.window = cfg.max_new_tokens;
    const auto t0 = std::chrono::steady_clock::now();

    Rng rng(cfg.seed);
    if (cfg.max_new_tokens > 0) {
        auto session = std::make_unique<Session>(weights, features);
        Tensor hidden = session->extend_visual_and_text(prompt);
        std::vector<double> logits = session->head_logits(hidden, hidden.rows() - 1);

        while (trace.tokens.size() < cfg.max_new_tokens) {
            trace.topk.push_back(top_entries(logits, kTopRecord));
            std::vector<double> working = logits;
            if (hook != nullptr) {
                (*hook)(trace.tokens, working);
            } else {
                apply_repetition_penalty(trace.tokens, cfg.repetition_penalty, working);
            }
            const Token next = select_token(working, cfg, rng);
            if (next == cfg.eos_token) {
                trace.ended_with_eos = true;
                break;
            }
            trace.tokens.push_back(next);
            if (trace.tokens.size() == cfg.max_new_tokens) break;

            if (session->rows() + 1 > mc.max_context) {
                // Slide: keep the prompt, re-embed the most recent generated
                // tokens at fresh positions, leave headroom for future steps.
                const std::size_t keep = mc.max_context - prompt_rows - kSlideHeadroom;
                TokenSeq tail(trace.tokens.end() - static_cast<std::ptrdiff_t>(keep), trace.tokens.end());
                TokenSeq full = prompt;
                full.insert(full.end(), tail.begin(), tail.end());
                session = std::make_unique<Session>(weights, features);
                Tensor h = session->extend_visual_and_text(full);
                logits = session->head_logits(h, h.rows() - 1);
            } else {
                Tensor h = session->extend_text({next});
                logits = session->head_logits(h, 0);
            }
        }
    }
    trace.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return trace;
}

DecodeTrace generate(const ModelWeights &weights, const Image &img, const TokenSeq &question, const DecodeConfig &cfg) {
    return generate_features(weights, processor(weights.config, img), question, cfg, nullptr);
}

// ---- training -----------------------------------------------------------------

nlohmann::json TrainConfig::to_json() const {
    return {{"steps", steps}, {"batch", batch}, {"lr", lr}, {"beta1", beta1}, {"beta2", beta2},
            {"adam_eps", adam_eps}, {"seed", seed}, {"log_every", log_every}, {"question", question},
            {"val_fraction", val_fraction}, {"threads", threads}, {"randomize_positions", randomize_positions},
            {"pattern_fraction", pattern_fraction}, {"pattern_max_len", pattern_max_len},
            {"pattern_until", pattern_until}, {"feature_noise", feature_noise}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json &j) {
    TrainConfig c;
    c.steps = j.value("steps", c.steps);
    c.batch = j.value("batch", c.batch);
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.seed = j.value("seed", c.seed);
    c.log_every = j.value("log_every", c.log_every);
    c.question = j.value("question", c.question);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.threads = j.value("threads", c.threads);
    c.randomize_positions = j.value("randomize_positions", c.randomize_positions);
    c.pattern_fraction = j.value("pattern_fraction", c.pattern_fraction);
    c.pattern_max_len = j.value("pattern_max_len", c.pattern_max_len);
    c.pattern_until = j.value("pattern_until", c.pattern_until);
    c.feature_noise = j.value("feature_noise", c.feature_noise);
    return c;
}

namespace {

double sequence_ce(const ModelWeights &w, const PixelFeatures &features, const TokenSeq &question,
                   const TokenSeq &target) {
    const Tensor logits = forward_teacher_forced(w, features, question, target);
    double loss = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        double mx = logits(i, 0);
        for (std::size_t j = 1; j < logits.cols(); ++j) mx = std::max(mx, logits(i, j));
        double total = 0.0;
        for (std::size_t j = 0; j < logits.cols(); ++j) total += std::exp(logits(i, j) - mx);
        loss -= (logits(i, static_cast<std::size_t>(target[i])) - mx) - std::log(total);
    }
    return loss;
}

struct SampleGrad {
    double loss = 0.0;
    std::size_t tokens = 0;
    std::vector<Tensor> grads;
};

SampleGrad sample_gradients(const ModelWeights &w, const PixelFeatures &features, const TokenSeq &question,
                            const TokenSeq &target, std::size_t text_pos_offset) {
    ad::Tape tape;
    WeightVars wv = stage_weights(tape, w, true);
    ad::Var f = tape.constant(features);
    TeacherForcedLoss tf = build_teacher_forced_ce(tape, w.config, wv, f, question, target, text_pos_offset);
    SampleGrad out;
    out.tokens = target.size();
    if (!tf.loss.valid()) return out;
    tape.backward(tf.loss);
    out.loss = tape.value(tf.loss)[0];
    for (ad::Var v : ordered_vars(wv)) out.grads.push_back(tape.grad(v));
    return out;
}

}  // namespace

namespace {

// Repeated word units teach copy behavior and exercise long position rows;
// words come from the caption vocabulary so no new bytes are introduced.
std::vector<vlm::TrainSample> pattern_samples(const std::vector<TrainSample> &corpus, const TrainConfig &tc,
                                              const ModelConfig &cfg) {
    std::vector<TrainSample> out;
    if (tc.pattern_fraction <= 0.0 || corpus.empty()) return out;

    std::vector<std::string> words;
    for (const TrainSample &s : corpus) {
        std::string w;
        for (char ch : s.caption + " ") {
            if (ch == ' ') {
                if (!w.empty() && std::find(words.begin(), words.end(), w) == words.end()) words.push_back(w);
                w.clear();
            } else {
                w.push_back(ch);
            }
        }
    }

    const std::size_t prompt_len = 2 + tokenize(tc.question).size();
    const std::size_t cap = std::min(tc.pattern_max_len, cfg.max_context - cfg.patches() - prompt_len - 2);
    const std::size_t count = static_cast<std::size_t>(static_cast<double>(corpus.size()) * tc.pattern_fraction);
    Rng rng(tc.seed ^ 0x5bf03635d1a2b4c7ULL);
    for (std::size_t i = 0; i < count; ++i) {
        std::string unit = words[rng() % words.size()];
        // mostly single-word units (short periods dominate token-level loops)
        // with a tail of longer phrases for sentence-length periods
        const std::uint64_t roll = rng() % 20;
        std::size_t extra_words = 0;
        if (roll >= 12 && roll < 17)
            extra_words = 1;
        else if (roll >= 17)
            extra_words = 2 + rng() % 4;
        for (std::size_t wi = 0; wi < extra_words; ++wi) unit += " " + words[rng() % words.size()];
        const std::size_t target_len = 64 + rng() % (cap > 64 ? cap - 64 : 1);
        std::string text = unit;
        while (text.size() + unit.size() + 1 <= target_len) {
            std::string emit = unit;
            // an occasional corrupted copy teaches the model to re-lock onto
            // the dominant unit after a glitch instead of drifting away
            if (rng() % 12 == 0 && emit.size() > 2) {
                const std::size_t pos = rng() % emit.size();
                if (rng() % 2 == 0)
                    emit.erase(pos, 1);
                else
                    emit[pos] = static_cast<char>('a' + rng() % 26);
            }
            text += " " + emit;
        }
        TrainSample s;
        s.image = corpus[rng() % corpus.size()].image;
        s.caption = text;
        s.append_eos = false;
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

ModelWeights train_toy(const std::vector<TrainSample> &corpus, const ModelConfig &cfg, const TrainConfig &tc,
                       TrainLog *log) {
    cfg.validate();
    check(!corpus.empty(), "train: empty corpus");
    check(tc.batch >= 1 && tc.steps >= 1, "train: bad schedule");

    ModelWeights weights = ModelWeights::random(cfg, tc.seed);
    const TokenSeq question = tokenize(tc.question);

    struct Prepared {
        PixelFeatures features;
        TokenSeq target;
    };
    std::vector<Prepared> prepared;
    prepared.reserve(corpus.size());
    std::size_t caption_count = 0;
    auto add_sample = [&](const TrainSample &s) {
        TokenSeq target = tokenize(s.caption);
        if (s.append_eos) target.push_back(kEosToken);
        prepared.push_back({processor(cfg, s.image), std::move(target)});
    };
    for (const TrainSample &s : corpus) add_sample(s);
    caption_count = prepared.size();

    // validation is carved from the caption samples only
    std::size_t val_n = static_cast<std::size_t>(static_cast<double>(caption_count) * tc.val_fraction);
    val_n = std::min(val_n, caption_count - 1);

    for (const TrainSample &s : pattern_samples(corpus, tc, cfg)) add_sample(s);

    // move the validation block to the end so the training index range is
    // contiguous: [captions | patterns | validation]
    std::vector<Prepared> training;
    std::vector<Prepared> validation;
    for (std::size_t i = 0; i < prepared.size(); ++i) {
        if (i >= caption_count - val_n && i < caption_count)
            validation.push_back(std::move(prepared[i]));
        else
            training.push_back(std::move(prepared[i]));
    }
    prepared = std::move(training);
    for (Prepared &p : validation) prepared.push_back(std::move(p));
    const std::size_t train_n = prepared.size() - val_n;
    const std::size_t caption_train_n = caption_count - val_n;

    std::vector<ad::Tensor *> params;
    weights.for_each_param([&](const std::string &, ad::Tensor &t) { params.push_back(&t); });
    std::vector<std::vector<double>> m(params.size()), v(params.size());
    for (std::size_t p = 0; p < params.size(); ++p) {
        m[p].assign(params[p]->size(), 0.0);
        v[p].assign(params[p]->size(), 0.0);
    }

    Rng rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(train_n);
    for (std::size_t i = 0; i < train_n; ++i) order[i] = i;
    std::size_t cursor = train_n;  // forces an initial shuffle

    if (log != nullptr) log->step_losses.clear();

    for (std::size_t step = 0; step < tc.steps; ++step) {
        const bool patterns_active =
            static_cast<double>(step) < tc.pattern_until * static_cast<double>(tc.steps);
        std::vector<std::size_t> batch_idx;
        for (std::size_t i = 0; i < tc.batch; ++i) {
            std::size_t idx;
            do {
                if (cursor >= train_n) {
                    std::shuffle(order.begin(), order.end(), rng);
                    cursor = 0;
                }
                idx = order[cursor++];
            } while (!patterns_active && idx >= caption_train_n);
            batch_idx.push_back(idx);
        }

        std::vector<std::size_t> offsets(batch_idx.size(), cfg.patches());
        if (tc.randomize_positions) {
            for (std::size_t i = 0; i < batch_idx.size(); ++i) {
                const std::size_t text_len = 2 + question.size() + prepared[batch_idx[i]].target.size() - 1;
                const std::size_t max_off = cfg.max_context - text_len;
                offsets[i] = cfg.patches() + rng() % (max_off - cfg.patches() + 1);
            }
        }

        // per-sample feature copies with augmentation noise, clamped to the box
        std::vector<PixelFeatures> noisy(batch_idx.size());
        for (std::size_t i = 0; i < batch_idx.size(); ++i) {
            noisy[i] = prepared[batch_idx[i]].features;
            if (tc.feature_noise > 0.0) {
                for (double &v : noisy[i].vec()) {
                    v = std::min(1.0, std::max(-1.0, v + uniform(rng, -tc.feature_noise, tc.feature_noise)));
                }
            }
        }

        std::vector<SampleGrad> grads(batch_idx.size());
        if (tc.threads > 1 && batch_idx.size() > 1) {
            std::vector<std::future<SampleGrad>> futs;
            for (std::size_t i = 0; i < batch_idx.size(); ++i) {
                const Prepared &p = prepared[batch_idx[i]];
                const PixelFeatures &f = noisy[i];
                const std::size_t off = offsets[i];
                futs.push_back(std::async(std::launch::async, [&weights, &p, &f, &question, off] {
                    return sample_gradients(weights, f, question, p.target, off);
                }));
            }
            for (std::size_t i = 0; i < futs.size(); ++i) grads[i] = futs[i].get();
        } else {
            for (std::size_t i = 0; i < batch_idx.size(); ++i) {
                const Prepared &p = prepared[batch_idx[i]];
                grads[i] = sample_gradients(weights, noisy[i], question, p.target, offsets[i]);
            }
        }

        double step_loss = 0.0;
        std::size_t step_tokens = 0;
        for (const SampleGrad &g : grads) {
            step_loss += g.loss;
            step_tokens += g.tokens;
        }
        const double mean_loss = step_loss / std::max<std::size_t>(1, step_tokens);
        if (!std::isfinite(mean_loss)) {
            throw Error("train: diverged (non-finite loss) at step " + std::to_string(step));
        }
        if (log != nullptr) log->step_losses.push_back(mean_loss);

        // Adam on the batch-mean gradient.
        const double scale = 1.0 / static_cast<double>(grads.size());
        const double bc1 = 1.0 - std::pow(tc.beta1, static_cast<double>(step + 1));
        const double bc2 = 1.0 - std::pow(tc.beta2, static_cast<double>(step + 1));
        for (std::size_t p = 0; p < params.size(); ++p) {
            ad::Tensor &t = *params[p];
            for (std::size_t i = 0; i < t.size(); ++i) {
                double g = 0.0;
                for (const SampleGrad &sg : grads) g += sg.grads[p][i];
                g *= scale;
                m[p][i] = tc.beta1 * m[p][i] + (1.0 - tc.beta1) * g;
                v[p][i] = tc.beta2 * v[p][i] + (1.0 - tc.beta2) * g * g;
                t[i] -= tc.lr * (m[p][i] / bc1) / (std::sqrt(v[p][i] / bc2) + tc.adam_eps);
            }
        }
    }

    if (log != nullptr) {
        log->steps_run = tc.steps;
        double val_loss = 0.0;
        std::size_t val_tokens = 0;
        for (std::size_t i = train_n; i < prepared.size(); ++i) {
            val_loss += sequence_ce(weights, prepared[i].features, question, prepared[i].target);
            val_tokens += prepared[i].target.size();
        }
        log->final_val_loss = val_n > 0 ? val_loss / static_cast<double>(val_tokens) : 0.0;
    }
    return weights;
}

}  // namespace looplab::vlm
