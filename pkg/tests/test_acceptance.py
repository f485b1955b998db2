"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines alongside the pytest verdicts.
"""

from __future__ import annotations

import json
import time

import numpy as np
import pytest

from annodistill import annotate as ann
from annodistill import refinery as rf
from annodistill import theory as th
from annodistill.classifiers import LinearSoftmaxClassifier
from annodistill.cli import EXIT_OK, main
from annodistill.core import CandidateNoiseSpec, CandidateSet, gen_synthetic, is_prob_vector, save_dataset
from annodistill.metrics import assess, beta_coverage, f1_score, gold_inclusion_rate


def check(criterion: int, description: str, passed: bool) -> None:
    print(f"\n[criterion {criterion}] {'PASS' if passed else 'FAIL'}: {description}")
    assert passed, f"criterion {criterion} failed: {description}"


def test_criterion_1_metric_fidelity():
    t0 = time.monotonic()
    # candidate-annotation aggregate: 10000 sets, 8909 contain gold, mean size 1.70
    gold = [0] * 10_000
    ca_sets = []
    for i in range(10_000):
        if i < 7000:
            ca_sets.append(CandidateSet.of(0, 1) if i < 8909 else CandidateSet.of(1, 2))
        elif i < 8909:
            ca_sets.append(CandidateSet.of(0))
        else:
            ca_sets.append(CandidateSet.of(1))
    ca = assess(ca_sets, gold, C=6)
    assert ca.one_minus_alpha == pytest.approx(0.8909, abs=1e-12)
    assert ca.mean_set_size == pytest.approx(1.70, abs=1e-12)
    # single-annotation aggregate: all singletons, 7107 correct
    sa_sets = [CandidateSet.of(0) if i < 7107 else CandidateSet.of(1) for i in range(10_000)]
    sa = assess(sa_sets, gold, C=6)
    assert sa.one_minus_alpha == pytest.approx(0.7107, abs=1e-12)
    elapsed = time.monotonic() - t0
    ok = abs(100 * ca.f1 - 87.5) <= 0.1 and abs(100 * sa.f1 - 83.1) <= 0.1 and elapsed < 1.0
    check(
        1,
        f"metric fidelity: F1(CA)={100 * ca.f1:.2f} (target 87.5 +/- 0.1), "
        f"F1(SA)={100 * sa.f1:.2f} (target 83.1 +/- 0.1), {elapsed:.2f}s < 1s",
        ok,
    )


def test_criterion_2_metric_oracle_equivalence():
    rng = np.random.default_rng(20240115)
    worst = 0.0
    for _ in range(1000):
        C = int(rng.integers(2, 11))
        n = int(rng.integers(1, 51))
        sets = []
        for _ in range(n):
            size = int(rng.integers(1, C + 1))
            sets.append(CandidateSet(tuple(rng.choice(C, size=size, replace=False))))
        gold = [int(g) for g in rng.integers(0, C, size=n)]
        # naive loop oracles
        misses = sum(1 for s, y in zip(sets, gold) if y not in s.labels)
        naive_oma = 1.0 - misses / n
        naive_beta = sum((C - len(s)) / (C - 1) for s in sets) / n
        naive_f1 = 0.0 if naive_oma + naive_beta == 0 else 2 * naive_oma * naive_beta / (naive_oma + naive_beta)
        worst = max(
            worst,
            abs(gold_inclusion_rate(sets, gold) - naive_oma),
            abs(beta_coverage(sets, C) - naive_beta),
            abs(f1_score(naive_oma, naive_beta) - naive_f1),
        )
    check(2, f"metric oracle equivalence over 1000 random instances: max |diff| = {worst:.2e} <= 1e-12", worst <= 1e-12)


def test_criterion_3_refinery_invariant_suite():
    t0 = time.monotonic()
    rng = np.random.default_rng(7)
    ok = True
    for _ in range(200):
        n = int(rng.integers(2, 60))
        C = int(rng.integers(2, 9))
        preds = rng.dirichlet(np.ones(C), size=n)
        mask = rng.random((n, C)) < 0.5
        for i in range(n):
            if not mask[i].any():
                mask[i, rng.integers(0, C)] = True
        state = rf.compute_refinery_state(
            preds, mask, epoch=int(rng.integers(1, 30)), delta=float(rng.uniform(0.2, 1.0)), tau=float(rng.uniform(0.5, 1.0))
        )
        q_hat, targeted = rf.assemble_targets(state, gamma=float(rng.uniform(0.5, 1.0)))
        ok &= sorted(list(state.in_idx) + list(state.out_idx)) == list(range(n))
        ok &= set(state.sl_idx) <= set(state.in_idx) and set(state.hc_idx) <= set(state.out_idx)
        hc = set(state.hc_idx)
        for i in np.flatnonzero(targeted):
            ok &= is_prob_vector(q_hat[i])
            if i not in hc:
                ok &= not q_hat[i][~mask[i]].any()
        # sharpening preserves argmax and never shrinks the max for gamma < 1
        q = rng.dirichlet(np.ones(C))
        sq = rf.sharpen(q, 0.85)
        ok &= sq.argmax() == q.argmax() and sq.max() >= q.max() - 1e-12
    # pinned refinement examples
    q0 = rf.renormalize_target(None, CandidateSet.of(2, 5), t=0, C=6)
    ok &= bool(np.array_equal(q0[[2, 5]], [0.5, 0.5]) and q0.sum() == 1.0)
    q1 = rf.renormalize_target(np.array([0.1, 0.3, 0.2, 0.4]), CandidateSet.of(1, 3), t=1, C=4)
    ok &= bool(np.abs(q1 - np.array([0.0, 3 / 7, 0.0, 4 / 7])).max() < 1e-12)
    q2 = rf.renormalize_target(np.array([0.9, 0.05, 0.05]), CandidateSet.of(1), t=2, C=3)
    ok &= bool(np.array_equal(q2, [0.0, 1.0, 0.0]))
    elapsed = time.monotonic() - t0
    ok &= elapsed < 10.0
    check(3, f"refinery invariant suite (200 random epochs + pinned examples), {elapsed:.2f}s < 10s", bool(ok))


def test_criterion_4_gradient_check():
    rng = np.random.default_rng(11)
    worst = 0.0
    for trial in range(20):
        n = int(rng.integers(4, 14))
        d = int(rng.integers(2, 7))
        C = int(rng.integers(2, 6))
        X = rng.standard_normal((n, d))
        q = rng.dirichlet(np.ones(C), size=n)
        targeted = rng.random(n) < 0.85
        if not targeted.any():
            targeted[0] = True
        in_mask = targeted & (rng.random(n) < 0.7)
        plan = rf.make_batch_plan(
            X,
            q,
            targeted,
            in_mask,
            ~in_mask,
            eta=float(rng.uniform(0.1, 1.0)),
            X_aug=X + 0.1 * rng.standard_normal((n, d)),
            varsigma=4.0,
            mix_rng=np.random.default_rng(trial),
        )
        clf = LinearSoftmaxClassifier(d, C, rng=np.random.default_rng(trial), init_scale=0.5)
        _, _, grad = rf.total_loss_and_grad(clf, plan)
        v0 = clf.param_vector()
        fd = np.zeros_like(grad)
        h = 1e-5
        for i in range(len(v0)):
            vp = v0.copy()
            vp[i] += h
            clf.set_param_vector(vp)
            lp = rf.total_loss(clf, plan)
            vm = v0.copy()
            vm[i] -= h
            clf.set_param_vector(vm)
            lm = rf.total_loss(clf, plan)
            fd[i] = (lp - lm) / (2 * h)
        clf.set_param_vector(v0)
        worst = max(worst, float(np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-10)))
    check(4, f"analytic vs central-difference gradients on 20 batches: worst rel err = {worst:.2e} < 1e-4", worst < 1e-4)


def test_criterion_5_ce_reduction():
    ds = gen_synthetic(C=3, per_class=30, d=8, sep=9.0, noise_spec=CandidateNoiseSpec(1.0, 1.0), seed=2)
    cands = {s.id: CandidateSet.of(s.gold) for s in ds.samples}
    cfg = rf.RefineryConfig(
        epochs=10, warmup_epochs=4, learning_rate=0.3, delta=1.0, tau=1.0, gamma=1.0, eta_max=0.0, seed=7
    )
    ours: list[float] = []
    clf = LinearSoftmaxClassifier(8, 3)
    rf.train(ds, cands, clf, cfg, batch_callback=lambda e, b, parts, total: ours.append(parts.dr))

    ref_clf = LinearSoftmaxClassifier(8, 3)
    X = ds.feature_matrix()
    one_hot = np.eye(3)[ds.gold_labels()]
    ref: list[float] = []
    for epoch in range(cfg.epochs):
        shuffle_rng = np.random.default_rng([cfg.seed, epoch, 0])
        for bidx in rf.minibatch_indices(len(X), cfg.batch_size, shuffle_rng):
            P = ref_clf.predict_proba(X[bidx])
            ref.append(float(rf.cross_entropy_rows(P, one_hot[bidx]).mean()))
            dZ = (P - one_hot[bidx]) / len(bidx)
            grad = ref_clf.grad_param_vector([(X[bidx], dZ)]) + cfg.weight_decay * ref_clf.weight_decay_vector()
            ref_clf.set_param_vector(ref_clf.param_vector() - cfg.learning_rate * grad)
    worst = max(abs(a - b) for a, b in zip(ours, ref)) if ours else np.inf
    ok = len(ours) == len(ref) and worst <= 1e-9
    check(5, f"delta=tau=gamma=1, eta=0 on singleton candidates == reference CE: worst step diff = {worst:.2e} <= 1e-9", ok)


def test_criterion_6_phase_separation():
    t0 = time.monotonic()
    params = th.TheoryParams(C=2, m=100, a=0.8, b=0.2, lam=0.01)
    grid = [round(0.01 * k, 2) for k in range(50)]
    rows = th.phase_sweep(params, grid)
    threshold_rho = th.top1_threshold(params) / 2
    ok = True
    transition = None
    for r in rows:
        ok &= r.top2_acc == 1.0 and r.cond_top2
        expected_top1 = 2 * r.rho < th.top1_threshold(params)
        ok &= r.cond_top1 == expected_top1
        ok &= (r.teacher_acc == 1.0) == r.cond_top1
        ok &= (r.top1_acc == 1.0) == r.cond_top1
    flips = [i for i, (x, y) in enumerate(zip(rows, rows[1:])) if x.cond_top1 != y.cond_top1]
    ok &= len(flips) == 1
    if flips:
        transition = grid[flips[0]]
        ok &= abs(transition - threshold_rho) <= 0.01
    elapsed = time.monotonic() - t0
    ok &= elapsed < 10.0
    check(
        6,
        f"phase separation: top-2 = 1.0 on the whole sweep, top-1 transition at rho ~ {transition} "
        f"(predicted {threshold_rho:.4f}), conditions match accuracies, {elapsed:.2f}s < 10s",
        bool(ok),
    )


def test_criterion_7_closed_form_vs_oracle():
    rng = np.random.default_rng(13)
    worst_oracle = 0.0
    for _ in range(10):
        C = int(rng.integers(2, 5))
        m = C * int(rng.integers(max(2, 20 // C), 120 // C + 1))
        a = float(rng.uniform(0.5, 0.95))
        b = float(rng.uniform(0.05, a - 0.2))
        lam = float(10 ** rng.uniform(-2.5, -0.5))
        S = th.build_similarity(m, C, a, b)
        Q = rng.dirichlet(np.ones(C), size=m).T
        expected = th.closed_form_predictions(Q, S, lam, C)
        result = th.gd_oracle(S, Q, lam, mode="linear")
        worst_oracle = max(worst_oracle, float(np.abs(result.P - expected).max()))
    worst_block = 0.0
    worst_eig = 0.0
    for _ in range(5):
        C = int(rng.integers(2, 5))
        m = C * int(rng.integers(5, 25))
        p = th.TheoryParams(C=C, m=m, a=float(rng.uniform(0.5, 0.9)), b=float(rng.uniform(0.05, 0.4)), lam=0.02)
        if not p.a > p.b:
            continue
        S = th.build_similarity(p.m, p.C, p.a, p.b)
        K = np.eye(p.m) + S / (p.C * p.m * p.lam)
        numeric = np.eye(p.m) - np.linalg.inv(K)
        worst_block = max(worst_block, float(np.abs(th.analytic_multiplier(p) - numeric).max()))
        ev = np.sort(np.linalg.eigvalsh(S))[::-1]
        lam1, lam2, lam3 = p.similarity_eigenvalues()
        worst_eig = max(
            worst_eig,
            abs(ev[0] - lam1),
            float(np.abs(ev[1 : p.C] - lam2).max()),
            float(np.abs(ev[p.C :] - lam3).max()),
        )
    ok = worst_oracle < 1e-6 and worst_block < 1e-8 and worst_eig < 1e-8
    check(
        7,
        f"closed form vs oracles: gd deviation {worst_oracle:.2e} < 1e-6, analytic block {worst_block:.2e} < 1e-8, "
        f"eigenvalues {worst_eig:.2e} < 1e-8 with multiplicities (1, C-1, m-C)",
        ok,
    )


def test_criterion_8_desk_scale_gain():
    t0 = time.monotonic()
    gains = []
    for seed in range(5):
        ds = gen_synthetic(C=4, per_class=500, d=16, sep=2.5, noise_spec=CandidateNoiseSpec(0.85, 2.0), seed=seed)
        refined = rf.RefineryConfig(epochs=40, warmup_epochs=5, learning_rate=0.5, seed=seed)
        baseline = rf.RefineryConfig(epochs=40, warmup_epochs=40, learning_rate=0.5, seed=seed)
        acc_ref = rf.train(ds, ds.candidates, LinearSoftmaxClassifier(16, 4), refined).history[-1].train_acc
        acc_base = rf.train(ds, ds.candidates, LinearSoftmaxClassifier(16, 4), baseline).history[-1].train_acc
        gains.append(acc_ref - acc_base)
    mean_gain = float(np.mean(gains))
    elapsed = time.monotonic() - t0
    ok = mean_gain >= 0.03 and elapsed < 120.0
    check(
        8,
        f"desk-scale gain over uniform-candidate CE baseline: {100 * mean_gain:.2f} points >= 3.0 "
        f"(5 seeds, {elapsed:.1f}s < 120s)",
        ok,
    )


def test_criterion_9_determinism(tmp_path):
    ds = gen_synthetic(C=3, per_class=30, d=6, sep=3.0, noise_spec=CandidateNoiseSpec(0.85, 2.0), seed=1)
    ds_path = tmp_path / "ds.jsonl"
    save_dataset(ds, ds_path)
    for sub in ("one", "two"):
        code = main(
            [
                "--out-dir", str(tmp_path / sub),
                "distill", "--dataset", str(ds_path),
                "--epochs", "8", "--warmup-epochs", "2", "--out-prefix", "run",
            ]
        )
        assert code == EXIT_OK
    model_same = (tmp_path / "one/run.model.json").read_bytes() == (tmp_path / "two/run.model.json").read_bytes()

    # replay-mode annotation determinism on a text dataset
    samples = []
    lines = []
    for i in range(5):
        samples.append({"id": f"q{i}", "text": f"text {i}", "features": [float(i), 1.0]})
        lines.append(json.dumps({"sample_id": f"q{i}", "prompt": "p", "responses": ["Entities; Locations"]}))
    text_ds = tmp_path / "text.jsonl"
    text_ds.write_text(
        json.dumps({"label_space": {"names": list(ann.TREC_LABEL_SPACE.names)}})
        + "\n"
        + "\n".join(json.dumps(s) for s in samples)
        + "\n"
    )
    fixture = tmp_path / "fixture.log"
    fixture.write_text("\n".join(lines) + "\n")
    for sub in ("a1", "a2"):
        code = main(
            [
                "--out-dir", str(tmp_path / sub),
                "annotate", "--dataset", str(text_ds), "--strategy", "ca_all",
                "--replay", str(fixture), "--out", "ann.jsonl",
            ]
        )
        assert code == EXIT_OK
    ann_same = (tmp_path / "a1/ann.jsonl").read_bytes() == (tmp_path / "a2/ann.jsonl").read_bytes()
    check(9, f"determinism: model files byte-identical={model_same}, replay annotations byte-identical={ann_same}",
          model_same and ann_same)
