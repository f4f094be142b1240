"""Acceptance gate: one test per criterion, each recorded as a PASS/FAIL line.

The directional experiments (8-10) train on the default synthetic testbed
with seeds 0-4 and report medians.
"""

import time

import numpy as np
import pytest

from visprompt import io
from visprompt.cli import main
from visprompt.data import Dataset, ImageSample
from visprompt.dictionary import (
    DictEntry,
    SimilarityDictionary,
    Vocabulary,
    build_similarity_dictionary,
    dedup_nms,
    top_k_similar,
)
from visprompt.embedding import estimate_gaussian_prior, make_rng
from visprompt.evaluator import Detection, average_precision, combined_inference, evaluate_prompts
from visprompt.losses import alignment_loss
from visprompt.optim import OptimizerState, adamw_step
from visprompt.prompts import VisualPrompt, fuse_rows, stochastic_similarity
from visprompt.scoring import score_train
from visprompt.testbed import TestbedSpec, generate, make_paired_tasks
from visprompt.trainer import TrainConfig, end_to_end_gradient_check, train_visual_prompts

from oracles import (
    adamw_reference,
    central_difference,
    cos,
    greedy_nms,
    pr_curve_ap,
    relative_error,
    tiny_detection_instance,
    top_k_by_full_sort,
    unit_cosines,
)

SEEDS = range(5)


def _dictionaries(task, config):
    ds = task.dataset
    return {c: build_similarity_dictionary(ds, task.vocabulary, c, config.top_k, config.nms_threshold,
                                           exclude=ds.categories, mode=config.similarity_mode)
            for c in ds.categories}


def _train(task, seed, use_dictionary=True, **overrides):
    config = TrainConfig(seed=seed, **overrides)
    dicts = _dictionaries(task, config) if use_dictionary else {}
    prior = estimate_gaussian_prior(task.vocabulary.embeddings)
    return train_visual_prompts(task.dataset, dicts, config, make_rng(seed), prior=prior).prompts


def _baseline(task):
    return {c: VisualPrompt(c, task.vocabulary.embedding(c)[None, :]) for c in task.dataset.categories}


def test_criterion_01_mean_restoration(criterion):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for k in range(10_000):
        n, c = int(rng.integers(1, 26)), int(rng.integers(1, 17))
        prompt = VisualPrompt("c", rng.normal(scale=rng.uniform(0.1, 10.0), size=(n, c)))
        out = stochastic_similarity(prompt, float(rng.uniform()), float(rng.uniform()), make_rng(k)).vectors
        worst = max(worst, float(np.max(np.abs(out.mean(axis=0) - prompt.vectors.mean(axis=0)))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 10.0
    criterion(1, ok, f"max mean drift {worst:.2e} (<= 1e-9) over 10000 configs in {elapsed:.1f}s (< 10s)")
    assert ok


def test_criterion_02_identity_cases(criterion):
    rng = np.random.default_rng(2)
    mismatches = 0
    for k in range(2000):
        prompt = VisualPrompt("c", rng.normal(size=(int(rng.integers(1, 21)), int(rng.integers(1, 9)))))
        by_a = stochastic_similarity(prompt, 1.0, float(rng.uniform()), make_rng(k)).vectors
        by_p2 = stochastic_similarity(prompt, float(rng.uniform()), 0.0, make_rng(k)).vectors
        mismatches += not np.array_equal(by_a, prompt.vectors)
        mismatches += not np.array_equal(by_p2, prompt.vectors)
    criterion(2, mismatches == 0, f"{mismatches} inexact outputs for a=1 or p2=0 over 2000 prompts each")
    assert mismatches == 0


def test_criterion_03_variance_preservation(criterion):
    r = make_rng(3)
    trials = 100_000
    results = []
    for a in (0.3, 0.6, 0.9):
        out = np.empty((trials, 2, 4))
        for t in range(trials):
            out[t] = fuse_rows(r.standard_normal((2, 4)), a, 1.0, r)
        results.append((a, out.reshape(-1, 4).var(axis=0)))
    ok = all(np.all(np.abs(v - 1.0) <= 0.02) for _, v in results)
    detail = "; ".join(f"a={a}: var in [{v.min():.4f}, {v.max():.4f}]" for a, v in results)
    criterion(3, ok, f"{detail} (each within 1 +/- 0.02, {trials} forced fusions per a)")
    assert ok


def _random_world(rng):
    dim = int(rng.integers(2, 7))
    cats = tuple(f"c{i}" for i in range(int(rng.integers(1, 4))))
    images = []
    for i in range(int(rng.integers(1, 4))):
        p = int(rng.integers(1, 7))
        labels = tuple(cats[int(rng.integers(len(cats)))] if rng.random() < 0.4 else None for _ in range(p))
        boxes = np.tile([0.1, 0.1, 0.5, 0.5], (p, 1))
        images.append(ImageSample(f"i{i}", rng.normal(size=(p, dim)), boxes, labels, ()))
    ds = Dataset(dim, cats, tuple(images))
    n = int(rng.integers(1, 5))
    prompts = {c: VisualPrompt(c, rng.normal(size=(n, dim))) for c in cats}
    dicts = {}
    for c in cats:
        if rng.random() < 0.7:
            size = int(rng.integers(1, 5))
            entries = tuple(DictEntry(f"{c}-n{j}", rng.normal(size=dim), 0.0) for j in range(size))
            dicts[c] = SimilarityDictionary(entries, size, 1.0)
    config = TrainConfig(n_vectors=n, temperature=1.0, neg_probability=1.0, neg_max_len=4,
                         eq5_mode=str(rng.choice(["bce", "positive_only"])),
                         background_negatives=bool(rng.random() < 0.3))
    return ds, prompts, dicts, config


def test_criterion_04_gradients(criterion):
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    loss_worst = 0.0
    for _ in range(100):
        r, d_p, d_n = int(rng.integers(1, 9)), int(rng.integers(1, 5)), int(rng.integers(0, 5))
        scores = rng.normal(scale=3.0, size=(r, d_p + d_n))
        targets = rng.integers(-1, d_p, size=r)
        _, grad = alignment_loss(scores, targets, d_p, d_n)
        numeric = central_difference(lambda s: alignment_loss(s, targets, d_p, d_n)[0], scores)
        loss_worst = max(loss_worst, relative_error(grad, numeric))
    e2e_worst = 0.0
    for k in range(100):
        ds, prompts, dicts, config = _random_world(rng)
        e2e_worst = max(e2e_worst, end_to_end_gradient_check(ds, config, prompts, dicts, make_rng(k)))
    elapsed = time.perf_counter() - start
    ok = loss_worst < 1e-5 and e2e_worst < 1e-5 and elapsed < 30.0
    criterion(4, ok, f"alignment loss rel err {loss_worst:.1e}, end-to-end rel err {e2e_worst:.1e} (< 1e-5), "
                     f"100 configs each, tau=1, {elapsed:.1f}s (< 30s)")
    assert ok


def test_criterion_05_oracle_equivalence(criterion):
    rng = np.random.default_rng(5)
    topk_bad = 0
    for _ in range(1000):
        b, k = int(rng.integers(1, 201)), int(rng.integers(1, 51))
        vocab = Vocabulary(tuple(f"p{i}" for i in range(b)), rng.normal(size=(b, 6)))
        q = rng.normal(size=6)
        got = [e.phrase for e in top_k_similar(q, vocab, k)]
        topk_bad += got != [f"p{i}" for i in top_k_by_full_sort(unit_cosines(vocab.embeddings, q), k)]

    nms_bad = nms_skipped = 0
    for _ in range(1000):
        k, dim = int(rng.integers(1, 21)), int(rng.integers(2, 6))
        emb = rng.normal(size=(k, dim))
        q = float(rng.uniform())
        lib = emb / np.linalg.norm(emb, axis=1, keepdims=True)
        if np.any(np.abs(lib @ lib.T - q) < 1e-12):
            nms_skipped += 1  # a pair sits on the threshold to the last bit
            continue
        got = dedup_nms([DictEntry(f"p{i}", e, 0.0) for i, e in enumerate(emb)], q).phrases
        pairwise = [[cos(a, b) for b in emb] for a in emb]
        nms_bad += got != [f"p{i}" for i in greedy_nms(pairwise, q)]

    ap_bad = 0
    for _ in range(200):
        dets, gts = tiny_detection_instance(rng, Detection)
        for cat in ("a", "b"):
            for t in (0.5, 0.75, 0.95):
                ap_bad += average_precision(dets, gts, cat, t) != pr_curve_ap(dets, gts, cat, t)
    ok = topk_bad == nms_bad == ap_bad == 0
    criterion(5, ok, f"mismatches: top-k {topk_bad}/1000, NMS {nms_bad}/{1000 - nms_skipped}, "
                     f"AP {ap_bad}/1200 (200 instances x 2 categories x 3 thresholds)")
    assert ok


def test_criterion_06_gumbel_limits(criterion):
    r = make_rng(6)
    exact = all(score_train([w], tau, r)[0] == w
                for w in np.random.default_rng(0).normal(size=200) for tau in (1e-3, 1.0, 50.0))
    bounded = True
    for _ in range(5000):
        w = r.normal(scale=5.0, size=int(r.integers(1, 12)))
        s, _ = score_train(w, float(r.uniform(1e-3, 10.0)), r)
        bounded &= w.min() <= s <= w.max()
    w = np.array([1.0, 0.5])
    gaps = [abs(score_train(w, 1e-3, r)[0] - w.max()) for _ in range(1000)]
    median = float(np.median(gaps))
    ok = exact and bounded and median < 1e-2
    criterion(6, ok, f"length-1 exact: {exact}; min <= S <= max on 5000 draws: {bounded}; "
                     f"tau=1e-3, gap 0.5: median |S - max| = {median:.1e} (< 1e-2)")
    assert ok


def test_criterion_07_adamw_trajectory(criterion):
    rng = np.random.default_rng(7)
    p0 = rng.normal(size=(3, 4))
    grads = rng.normal(size=(100, 3, 4))
    ref = adamw_reference(p0.ravel().tolist(), [g.ravel().tolist() for g in grads], lr=0.1)
    params, state = [p0], OptimizerState.for_params([p0])
    worst = 0.0
    for t in range(100):
        params, state = adamw_step(params, [grads[t]], state, 0.1)
        worst = max(worst, float(np.max(np.abs(params[0].ravel() - ref[t]))))
    criterion(7, worst < 1e-10, f"max divergence from reference recurrence over 100 steps {worst:.1e} (< 1e-10)")
    assert worst < 1e-10


def test_criterion_08_trained_beats_text_baseline(criterion):
    start = time.perf_counter()
    trained, base = [], []
    for seed in SEEDS:
        task = generate(TestbedSpec(seed=seed))
        trained.append(evaluate_prompts(_train(task, seed, n_vectors=20), task.eval_dataset).map50)
        base.append(evaluate_prompts(_baseline(task), task.eval_dataset).map50)
    elapsed = time.perf_counter() - start
    gain = float(np.median(np.subtract(trained, base)))
    ok = gain >= 0.05 and elapsed < 120.0
    criterion(8, ok, f"median mAP50 gain {100 * gain:.1f} points (>= 5): trained {np.round(trained, 3).tolist()} "
                     f"vs baseline {np.round(base, 3).tolist()}, {elapsed:.0f}s (< 120s)")
    assert ok


def test_criterion_09_dictionary_reduces_combined_drop(criterion):
    start = time.perf_counter()
    drops = {False: [], True: []}
    for seed in SEEDS:
        a, b = make_paired_tasks(TestbedSpec(seed=seed))
        for use in (False, True):
            sets = [_train(a, seed, use), _train(b, seed, use)]
            drops[use].append(combined_inference(sets, [a.eval_dataset, b.eval_dataset]).drop)
    elapsed = time.perf_counter() - start
    without, with_dict = float(np.median(drops[False])), float(np.median(drops[True]))
    ok = with_dict < without and elapsed < 300.0
    criterion(9, ok, f"median combined mAP drop with dictionary {100 * with_dict:.2f} vs without "
                     f"{100 * without:.2f} points (need strictly smaller); per seed with "
                     f"{np.round(drops[True], 4).tolist()}, without {np.round(drops[False], 4).tolist()}, "
                     f"{elapsed:.0f}s (< 300s)")
    assert ok


def test_criterion_10_more_vectors_never_hurt(criterion):
    sizes = (1, 2, 4, 8, 12, 16)
    tasks = [generate(TestbedSpec(seed=seed)) for seed in SEEDS]
    medians = []
    for n in sizes:
        scores = [evaluate_prompts(_train(t, seed, n_vectors=n), t.eval_dataset).map50
                  for seed, t in zip(SEEDS, tasks)]
        medians.append(float(np.median(scores)))
    ok = all(b >= a for a, b in zip(medians, medians[1:]))
    listing = ", ".join(f"N={n}: {m:.4f}" for n, m in zip(sizes, medians))
    criterion(10, ok, f"median mAP50 {listing} (non-decreasing)")
    assert ok


def _pipeline(out):
    task = out / "task"
    steps = [
        ["gen", "--seed", "11", "--out", str(task)],
        ["build-dict", "--dataset", str(task / "train.json"), "--vocab", str(task / "vocabulary.json"),
         "--out", str(out)],
        ["train", "--seed", "11", "--dataset", str(task / "train.json"), "--vocab", str(task / "vocabulary.json"),
         "--dictionaries", str(out / "dictionaries.json"), "--out", str(out)],
        ["eval", "--prompts", str(out / "prompts.json"), "--dataset", str(task / "eval.json"),
         "--baseline-vocab", str(task / "vocabulary.json"), "--out", str(out)],
    ]
    return [main(s) for s in steps]


def test_criterion_11_cli_determinism(criterion, tmp_path):
    codes = _pipeline(tmp_path / "one") + _pipeline(tmp_path / "two")
    names = ["prompts.json", "train_report.json", "eval_report.json", "dictionaries.json"]
    same = {n: (tmp_path / "one" / n).read_bytes() == (tmp_path / "two" / n).read_bytes() for n in names}
    report = io.load_report(tmp_path / "one" / "eval_report.json")
    ok = all(c == 0 for c in codes) and all(same.values())
    criterion(11, ok, f"exit codes {codes}; byte-identical: {same}; "
                      f"mAP50 {report['metrics']['map50']:.3f} vs baseline {report['baseline']['map50']:.3f}")
    assert ok
