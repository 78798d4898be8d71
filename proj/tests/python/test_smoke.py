# Copyright 2026 looplab Authors
# SPDX-License-Identifier: Apache-2.0
"""Smoke tests for the looplab python module (plain asserts, no pytest)."""

import looplab as ll


def test_tokenizer():
    tokens = ll.tokenize("hello world")
    assert ll.detokenize(tokens) == "hello world"
    assert ll.VOCAB == 260
    assert ll.EOS == 258


def test_recall_constructions():
    base = ll.tokenize("a red circle")
    target = ll.token_level_recall(base, 2)
    assert ll.render_text(target.sequence) == "a red circle circle circle"
    assert len(target.sequence) == len(base) + 2 * len(target.group)
    sent = ll.sentence_level_recall(base, 3)
    assert len(sent.sequence) == 3 * len(base) + 2


def test_processor_roundtrip():
    cfg = ll.ModelConfig()
    sample = ll.eval_sample(cfg, 7, 0)
    feats = ll.processor(cfg, sample.image)
    assert feats.shape == [16, 192]
    back = ll.processor(cfg, ll.quantized(ll.reprocessor(cfg, feats)))
    rows, brows = feats.rows(), back.rows()
    worst = max(abs(a - b) for ra, rb in zip(rows, brows) for a, b in zip(ra, rb))
    assert worst <= 1.0 / 255.0


def test_loop_detection():
    verdict = ll.detect_loop([1, 2, 3] * 5, 64, 3)
    assert verdict.looping and verdict.period == 3 and verdict.repeats == 5
    assert not ll.detect_loop(list(range(50)), 64, 3).looping
    assert ll.asr([verdict]) == 1.0


def test_defense_passthrough():
    cfg = ll.DefenseConfig()
    logits = [1.0, -2.0, 3.0]
    assert ll.defended_logits(logits, [0, 1, 2], cfg) == logits
    sf = ll.max_segment_frequency(ll.tokenize("ababab"), 6, 2)
    assert sf.f_max == 3


def test_model_and_attack():
    cfg = ll.ModelConfig()
    cfg.image_h = cfg.image_w = 16
    cfg.embed_dim = 32
    cfg.layers = 1
    cfg.heads = 4
    cfg.ff_dim = 64
    cfg.max_context = 96
    weights = ll.ModelWeights.random(cfg, 1)
    sample = ll.eval_sample(cfg, 7, 2)
    question = ll.tokenize("describe")

    dcfg = ll.DecodeConfig()
    dcfg.max_new_tokens = 16
    trace = ll.generate(weights, sample.image, question, dcfg)
    assert len(trace.tokens) <= 16
    assert trace.tokens == ll.generate(weights, sample.image, question, dcfg).tokens

    acfg = ll.AttackConfig()
    acfg.max_iters = 3
    acfg.early_stop_loss = 0.0
    target = ll.token_level_recall(ll.tokenize("one two"), 2)
    result = ll.pgd_attack(weights, sample.image, question, target, acfg)
    assert result.report.iterations_run == 3
    assert len(result.report.loss_trace) == 4
    assert result.report.feasibility_violations == 0

    loss, grad = ll.recall_loss(weights, ll.processor(cfg, sample.image), question, target)
    assert loss > 0.0
    assert grad.shape == [4, 192]


def main():
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for test in tests:
        test()
        print(f"ok {test.__name__}")
    print(f"{len(tests)} python smoke tests passed")


if __name__ == "__main__":
    main()
