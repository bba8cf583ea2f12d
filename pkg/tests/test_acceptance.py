"""End-to-end acceptance gate for the channel-scoring toolkit.

Each test checks one release criterion at its stated tolerance and prints a
single `[acceptance] <name>: PASS/FAIL` line, so a bare pytest run doubles
as a checklist. Oracles live in tests/oracles.py and share no numerics with
the library.
"""

import json
import math
import subprocess
import sys
import time

import numpy as np

import helpers
import oracles
import prunescope.jsonio as jsonio
from prunescope import (
    ActivationSet,
    BinaryPartitionStats,
    ChannelScoreReport,
    LabelScheme,
    abssnr_binary,
    block_assignment,
    block_centroids,
    block_confusion,
    dca_components,
    di_score,
    fdr_binary,
    gaussian_channels,
    kmeans_mapping,
    layer_specs,
    linear_probe,
    mmd_score,
    nuisance_features,
    output_kd_loss,
    pca_components,
    project,
    scatter_matrices,
    score_layer,
    sd_binary,
    spectral_mapping,
    ttest_binary,
)
from prunescope.planner import build_plan

GENERALIZED = {"G-SD": "sd", "G-AbsSNR": "abssnr", "G-FDR": "fdr", "G-Ttest": "ttest"}
DISCRIMINANT = list(GENERALIZED) + ["MMD", "DI"]
EPS = 1e-8


def report(capsys, name, ok, detail=""):
    tail = f" ({detail})" if detail else ""
    with capsys.disabled():
        print(f"[acceptance] {name}: {'PASS' if ok else 'FAIL'}{tail}")
    assert ok, f"{name}: {detail}"


def rel_err(got, want):
    return abs(got - want) / max(abs(want), 1e-300)


def canon(assign):
    """First-appearance relabeling, so cluster ids compare up to permutation."""
    seen = {}
    return [seen.setdefault(int(a), len(seen)) for a in assign]


def test_metric_oracle_agreement(capsys):
    t0 = time.perf_counter()
    worst = 0.0

    # One tensor pool serves all four single-variate metrics; every channel
    # is compared. The mean offset keeps scores away from zero so relative
    # error stays meaningful.
    rng = np.random.default_rng(101)
    for _ in range(200):
        acts = helpers.random_acts(rng, class_offset=0.3)
        scheme = helpers.fine_scheme(acts)
        data = acts.data.tolist()
        labels = acts.labels.tolist()
        reports = {m: score_layer(m, acts, scheme) for m in GENERALIZED}
        for ch in range(acts.data.shape[1]):
            for metric, key in GENERALIZED.items():
                want = oracles.generalized_metric(
                    key, data, labels, ch, acts.num_classes, EPS
                )
                worst = max(worst, rel_err(reports[metric].scores[ch], want))

    # Kernel and scatter metrics pay O(N^2) / O(S^3) oracle cost, so their
    # pools stay smaller and only one random channel per tensor is checked.
    rng = np.random.default_rng(102)
    for _ in range(200):
        acts = helpers.random_acts(rng, n_extra_max=14, c_max=3, hw_max=2,
                                   class_offset=0.5)
        scheme = helpers.fine_scheme(acts)
        ch = int(rng.integers(0, acts.data.shape[1]))
        got = mmd_score(acts, ch, scheme)
        want = oracles.mmd_metric(
            acts.data.tolist(), acts.labels.tolist(), ch, acts.num_classes, 1.0
        )
        worst = max(worst, rel_err(got, want))

    rng = np.random.default_rng(103)
    for _ in range(200):
        acts = helpers.random_acts(rng, class_offset=0.3)
        scheme = helpers.fine_scheme(acts)
        ch = int(rng.integers(0, acts.data.shape[1]))
        got = di_score(acts, ch, scheme)
        want = oracles.di_metric(
            acts.data.tolist(), acts.labels.tolist(), ch, acts.num_classes, 1e-4
        )
        worst = max(worst, rel_err(got, want))

    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 60.0
    report(capsys, "metric-oracle-agreement", ok,
           f"worst rel err {worst:.2e}, {elapsed:.1f}s for 6x200 tensors")


def test_closed_form_spot_values(capsys):
    stats = BinaryPartitionStats(
        mu_pos=1.0, var_pos=1.0, mu_neg=11.0, var_neg=1.0, n_pos=2, n_neg=2
    )
    got = {
        "sd": sd_binary(stats),
        "fdr": fdr_binary(stats),
        "abssnr": abssnr_binary(stats),
        "ttest": ttest_binary(stats),
    }
    want = {"sd": 25.0, "fdr": 50.0, "abssnr": 5.0, "ttest": 10.0}

    singleton = helpers.acts_from_values([[0.0], [2.0]])
    got["mmd"] = mmd_score(singleton, 0, helpers.fine_scheme(singleton))
    want["mmd"] = 2.0 - 2.0 * math.exp(-2.0)  # ~1.729329

    pair = helpers.acts_from_values([[-1.0], [1.0]])
    got["di"] = di_score(pair, 0, helpers.fine_scheme(pair))
    want["di"] = 2.0 / 2.0001  # ~0.99995

    got["kl"] = output_kd_loss(
        np.array([[math.log(3.0), 0.0]]), np.array([[0.0, 0.0]]), temperature=1.0
    )
    want["kl"] = 0.75 * math.log(1.5) + 0.25 * math.log(0.5)  # ~0.130812

    errs = {k: abs(got[k] - want[k]) for k in want}
    worst_key = max(errs, key=errs.get)
    ok = errs[worst_key] <= 1e-6
    report(capsys, "closed-form-spot-values", ok,
           f"7 identities, worst abs err {errs[worst_key]:.2e} ({worst_key})")


def test_affine_invariance_contrast(capsys):
    # The x30 base scale keeps channel variances far above the eps floor;
    # the floor is the one non-invariant term in the pooled statistics, and
    # at variance ~1e3 its second-order contribution sits below 1e-12.
    rng = np.random.default_rng(301)
    pairs = [(0.5, 3.0), (2.0, -7.0), (-1.5, 0.25), (-0.5, 1.0)]
    worst = 0.0
    for _ in range(20):
        base = helpers.random_acts(rng, class_offset=0.5)
        acts = ActivationSet(base.data * 30.0, base.labels, base.num_classes)
        scheme = helpers.fine_scheme(acts)
        ref = {m: score_layer(m, acts, scheme).scores for m in GENERALIZED}
        for a, b in pairs:
            moved = ActivationSet(acts.data * a + b, acts.labels, acts.num_classes)
            for metric in GENERALIZED:
                scores = score_layer(metric, moved, scheme).scores
                for s_new, s_old in zip(scores, ref[metric]):
                    worst = max(worst, rel_err(s_new, s_old))
    invariant_ok = worst <= 1e-9

    # MMD and DI must move under the same family of maps: pure rescaling is
    # affine, and both metrics see it through the kernel width / the ridge.
    spread = helpers.acts_from_values([[0.0, 0.4, -0.3, 0.8], [2.0, 2.5, 1.7, 2.2]])
    doubled = ActivationSet(spread.data * 2.0, spread.labels, spread.num_classes)
    mmd_delta = abs(
        mmd_score(doubled, 0, helpers.fine_scheme(doubled))
        - mmd_score(spread, 0, helpers.fine_scheme(spread))
    )

    tiny = helpers.acts_from_values([[-1.0, -1.2, -0.8], [1.0, 1.2, 0.8]])
    lo = ActivationSet(tiny.data * 0.01, tiny.labels, tiny.num_classes)
    hi = ActivationSet(tiny.data * 0.02, tiny.labels, tiny.num_classes)
    di_delta = abs(
        di_score(hi, 0, helpers.fine_scheme(hi))
        - di_score(lo, 0, helpers.fine_scheme(lo))
    )
    sensitive_ok = mmd_delta >= 1e-3 and di_delta >= 1e-3

    ok = invariant_ok and sensitive_ok
    report(capsys, "affine-invariance-contrast", ok,
           f"G worst rel drift {worst:.2e}; MMD moved {mmd_delta:.3f}, "
           f"DI moved {di_delta:.3f}")


def test_signal_channel_ranking(capsys):
    t0 = time.perf_counter()
    specs = layer_specs(1, 2, 0, separation=3.0)
    wins = {m: 0 for m in DISCRIMINANT}
    random_wins = 0
    trials = 100
    for seed in range(trials):
        acts = gaussian_channels(specs, n_per_class=10, y=4, hw=2, seed=seed)
        scheme = helpers.fine_scheme(acts)
        for metric in DISCRIMINANT:
            if int(np.argmax(score_layer(metric, acts, scheme).scores)) == 0:
                wins[metric] += 1
        rand = score_layer("Random", acts, scheme, seed=seed).scores
        if int(np.argmax(rand)) == 0:
            random_wins += 1
    elapsed = time.perf_counter() - t0
    ok = all(w >= 95 for w in wins.values()) and random_wins <= 70 and elapsed < 120.0
    tally = ", ".join(f"{m} {w}" for m, w in wins.items())
    report(capsys, "signal-channel-ranking", ok,
           f"{tally}, Random {random_wins} of {trials}, {elapsed:.1f}s")


def test_hierarchy_recovery(capsys):
    spectral_hits = 0
    kmeans_hits = 0
    trials = 50
    for seed in range(trials):
        rng = np.random.default_rng(5000 + seed)
        blocks = int(rng.integers(2, 5))
        sizes = [int(rng.integers(2, 6)) for _ in range(blocks)]  # F <= 20

        conf = block_confusion(sizes, intra=10, inter=2, seed=seed)
        truth = block_assignment(sizes, seed)
        got = spectral_mapping(conf, blocks, seed)
        if canon(got.map) == canon(truth):
            spectral_hits += 1

        dim = int(rng.integers(blocks, 9))
        points, assign = block_centroids(sizes, separation=10.0, spread=1.0,
                                         dim=dim, seed=seed)
        got = kmeans_mapping(points, blocks, seed)
        if canon(got.map) == canon(assign):
            kmeans_hits += 1
    ok = spectral_hits == trials and kmeans_hits == trials
    report(capsys, "hierarchy-recovery", ok,
           f"spectral {spectral_hits}/{trials}, kmeans {kmeans_hits}/{trials}")


def test_dca_eigensystem(capsys):
    worst_res = 0.0
    worst_con = 0.0
    worst_idn = 0.0
    for trial in range(100):
        rng = np.random.default_rng(600 + trial)
        d = int(rng.integers(2, 31))
        y = int(rng.integers(2, min(d, 5) + 1))
        extra = int(rng.integers(d, 2 * d + 10))
        labels = np.concatenate(
            [np.repeat(np.arange(y), 2), rng.integers(0, y, size=extra)]
        ).astype(np.int64)
        rng.shuffle(labels)
        x = rng.normal(size=(labels.size, d))
        x[np.arange(labels.size), labels % d] += 2.0

        pair = scatter_matrices(x, labels)
        proj = dca_components(x, labels)
        lhs = pair.s_w + proj.ridge * np.eye(d)
        resid = pair.s_bar @ proj.w - lhs @ proj.w @ np.diag(proj.eigenvalues)
        worst_res = max(
            worst_res, np.abs(resid).max() / np.abs(pair.s_bar).max()
        )
        gram = proj.w.T @ lhs @ proj.w
        worst_con = max(worst_con, np.abs(gram - np.eye(y)).max())

        centered = x - x.mean(axis=0)
        total = centered.T @ centered
        gap = np.abs(pair.s_w + pair.s_b - total).max()
        worst_idn = max(worst_idn, gap / max(1.0, np.abs(total).max()))
    ok = worst_res <= 1e-8 and worst_con <= 1e-8 and worst_idn <= 1e-9
    report(capsys, "dca-eigensystem", ok,
           f"100 problems: residual {worst_res:.2e}, constraint {worst_con:.2e}, "
           f"scatter identity {worst_idn:.2e}")


def test_dca_beats_pca_probe(capsys):
    # Nuisance directions carry 10x the per-dimension variance of the
    # class-signal block, so a variance-ranked basis buries the labels.
    signal_scale = 3.0
    signal_var = 1.0 + 0.1875 * signal_scale**2
    nuisance_scale = math.sqrt(10.0 * signal_var)
    wins = 0
    accs = []
    trials = 20
    for trial in range(trials):
        x, labels = nuisance_features(
            4, 50, nuisance_dims=28, signal_scale=signal_scale,
            nuisance_scale=nuisance_scale, seed=700 + trial,
        )
        acc_dca = linear_probe(project(x, dca_components(x, labels)), labels,
                               seed=trial)
        acc_pca = linear_probe(project(x, pca_components(x, 4)), labels,
                               seed=trial)
        accs.append((acc_dca, acc_pca))
        if acc_dca >= acc_pca:
            wins += 1
    mean_dca = np.mean([a for a, _ in accs])
    mean_pca = np.mean([b for _, b in accs])
    ok = wins >= 18
    report(capsys, "dca-beats-pca-probe", ok,
           f"dca >= pca in {wins}/{trials} runs "
           f"(mean acc {mean_dca:.3f} vs {mean_pca:.3f})")


def _plan_fixture_schemes():
    return {
        "fine": LabelScheme("fine", 10, "fine"),
        "coarse": LabelScheme("coarse", 5, "coarse"),
        "coarsest": LabelScheme("coarse", 2, "coarsest"),
    }


def _expected_keep(channels, ratio, rounding):
    base = int(math.floor((1.0 - ratio) * channels + 0.5))
    base = max(1, base)
    if rounding == "multiple-of-8":
        return min(channels, max(8, 8 * int(math.floor(base / 8.0 + 0.5))))
    return base


def test_plan_invariants(capsys):
    rng = np.random.default_rng(800)
    schemes = _plan_fixture_schemes()
    checked = 0
    trials = 1000
    for trial in range(trials):
        num_layers = int(rng.integers(1, 9))
        modes = ["all-fine", "all-coarse"]
        if num_layers >= 2:
            modes += ["coarse-fine", "fine-coarse"]
        if num_layers >= 3:
            modes.append("three-level")
        mode = modes[int(rng.integers(0, len(modes)))]
        alpha = float(rng.uniform(0.05, 0.95))
        rounding = ("none", "multiple-of-8")[int(rng.integers(0, 2))]

        slots = []
        for i in range(num_layers):
            c = int(rng.integers(2, 65))
            if trial % 3:
                scores = rng.integers(0, 6, size=c).astype(np.float64)  # ties
            else:
                scores = rng.normal(size=c)
            slots.append({
                role: ChannelScoreReport(
                    layer=f"l{i}", metric="G-SD", scheme=schemes[role],
                    scores=scores, params={"eps": EPS},
                )
                for role in schemes
            })
        if rng.integers(0, 2):
            ratios = float(rng.uniform(0.02, 0.98))
        else:
            ratios = [float(r) for r in rng.uniform(0.02, 0.98, size=num_layers)]

        plan = build_plan(slots, mode, ratios, alpha=alpha, rounding=rounding)

        # structural invariants on every layer entry
        for entry in plan.layers:
            keep = np.asarray(entry["keep"])
            drop = np.asarray(entry["drop"])
            c = entry["channels"]
            assert np.array_equal(
                np.sort(np.concatenate([keep, drop])), np.arange(c)
            ), "keep/drop must partition the channel range"
            assert keep.size >= 1
            assert np.all(np.diff(keep) > 0), "keep indices must ascend"
            assert keep.size == _expected_keep(c, entry["ratio"], rounding)
            if rounding == "multiple-of-8":
                assert keep.size % 8 == 0 or keep.size == c
        for i, entry in enumerate(plan.layers):
            keep = entry["keep"]
            drop = entry["drop"]
            scores = None
            for role, rep in slots[i].items():
                if rep.scheme == entry["scheme_used"]:
                    scores = rep.scores
                    break
            assert scores is not None
            if len(drop):
                kept_worst = min((scores[j], -j) for j in keep)
                drop_best = max((scores[j], -j) for j in drop)
                assert kept_worst > drop_best, \
                    "a dropped channel outranked a kept one"
            checked += 1

        # watershed regime: scheme names must follow the mode's layout
        names = [e["scheme_used"].name for e in plan.layers]
        if mode == "all-fine":
            assert names == ["fine"] * num_layers
        elif mode == "all-coarse":
            assert names == ["coarse"] * num_layers
        elif mode in ("coarse-fine", "fine-coarse"):
            w = plan.watersheds[0]
            assert w == min(max(int(math.floor(alpha * num_layers)), 1),
                            num_layers - 1)
            head, tail = ("coarse", "fine") if mode == "coarse-fine" else \
                         ("fine", "coarse")
            assert names == [head] * w + [tail] * (num_layers - w)
        else:
            w1, w2 = plan.watersheds
            assert w1 == min(max(int(math.floor(num_layers / 3.0)), 1),
                             num_layers - 1)
            assert w2 == min(max(int(math.floor(2.0 * num_layers / 3.0)), 1),
                             num_layers - 1)
            assert names == (["coarsest"] * w1 + ["coarse"] * (w2 - w1)
                             + ["fine"] * (num_layers - w2))

        again = build_plan(slots, mode, ratios, alpha=alpha, rounding=rounding)
        assert jsonio.dumps(plan.to_obj()) == jsonio.dumps(again.to_obj())

    report(capsys, "plan-invariants", True,
           f"{trials} builds, {checked} layer entries, reruns byte-identical")


def _run(cmd, **kw):
    proc = subprocess.run(cmd, capture_output=True, text=True, **kw)
    assert proc.returncode == 0, f"{cmd}: {proc.stderr}"
    return proc.stdout


def _check_report_schema(path, metric, granularity):
    obj = json.loads(path.read_text())
    assert obj["metric"] == metric
    assert obj["scheme"]["granularity"] == granularity
    assert isinstance(obj["scores"], list) and obj["scores"]
    assert all(isinstance(s, (int, float)) for s in obj["scores"])
    return obj


def test_cli_pipeline(capsys, tmp_path):
    # The scoring suite must stand alone: nothing here may lean on the
    # export tooling, and importing the package must not drag it in.
    assert not any(m == "actexport" or m.startswith("actexport.")
                   for m in sys.modules)

    t0 = time.perf_counter()
    run = tmp_path / "run"
    reports = tmp_path / "reports"
    layers = [f"conv{i}" for i in range(1, 7)]

    _run(["prunescope", "synth", "--out", str(run), "--classes", "4",
          "--per-class", "25", "--layers", "6", "--signal", "2", "--noise", "3",
          "--height", "2", "--width", "2", "--seed", "17", "--logits"])
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["layers"] == layers
    assert manifest["num_classes"] == 4 and manifest["num_samples"] == 100

    validated = json.loads(_run(["prunescope", "validate", "--run", str(run)]))
    assert validated["valid"] is True and validated["logits"] is True

    _run(["prunescope", "score", "--run", str(run), "--metric", "g-sd",
          "--out-dir", str(reports)])

    map3 = tmp_path / "coarse.json"
    map2 = tmp_path / "coarsest.json"
    _run(["prunescope", "hierarchy", "--method", "spectral", "--run", str(run),
          "--coarse-classes", "3", "--seed", "5", "--out", str(map3)])
    _run(["prunescope", "hierarchy", "--method", "kmeans", "--run", str(run),
          "--coarse-classes", "2", "--seed", "5", "--out", str(map2)])
    for path, k in ((map3, 3), (map2, 2)):
        obj = json.loads(path.read_text())
        assert obj["num_fine"] == 4 and obj["num_coarse"] == k
        assert len(obj["map"]) == 4
        assert set(obj["map"]) == set(range(k))

    _run(["prunescope", "score", "--run", str(run), "--metric", "g-sd",
          "--out-dir", str(reports), "--mapping", str(map3),
          "--scheme-name", "coarse"])
    _run(["prunescope", "score", "--run", str(run), "--metric", "g-sd",
          "--out-dir", str(reports), "--mapping", str(map2),
          "--scheme-name", "coarsest"])
    for layer in layers:
        _check_report_schema(reports / "fine" / f"{layer}.json", "G-SD", "fine")
        _check_report_schema(reports / "coarse" / f"{layer}.json", "G-SD", "coarse")
        _check_report_schema(reports / "coarsest" / f"{layer}.json", "G-SD",
                             "coarse")

    plan_path = tmp_path / "plan.json"
    _run(["prunescope", "plan", "--run", str(run), "--reports-dir", str(reports),
          "--mode", "three-level", "--ratio", "0.5", "--out", str(plan_path)])
    plan = json.loads(plan_path.read_text())
    assert plan["kind"] == "pruning_plan" and plan["mode"] == "three-level"
    assert plan["watersheds"] == [2, 4]
    assert [e["layer"] for e in plan["layers"]] == layers
    for entry in plan["layers"]:
        merged = sorted(entry["keep"] + entry["drop"])
        assert merged == list(range(entry["channels"]))
        assert len(entry["keep"]) >= 1

    teacher = tmp_path / "teacher"
    student = tmp_path / "student"
    _run(["prunescope", "dca", "--run", str(run), "--layer", "conv6",
          "--kind", "dca", "--out", str(teacher)])
    _run(["prunescope", "dca", "--run", str(run), "--layer", "conv5",
          "--kind", "pca", "--out", str(student)])
    for base, kind in ((teacher, "dca"), (student, "pca")):
        side = json.loads((base.parent / (base.name + ".json")).read_text())
        assert side["kind"] == kind
        assert len(side["eigenvalues"]) == 4
        assert (base.parent / (base.name + ".npy")).is_file()

    probe = json.loads(_run(["prunescope", "probe", "--run", str(run),
                             "--layer", "conv6", "--proj", str(teacher),
                             "--seed", "5"]))
    assert 0.0 <= probe["accuracy"] <= 1.0
    assert probe["projection"] == "dca" and probe["num_classes"] == 4

    loss = json.loads(_run([
        "prunescope", "distill-loss",
        "--teacher-acts", str(run / "conv6" / "activations.npy"),
        "--student-acts", str(run / "conv5" / "activations.npy"),
        "--teacher-proj", str(teacher), "--student-proj", str(student),
        "--teacher-logits", str(run / "logits.npy"),
        "--student-logits", str(run / "logits.npy"),
        "--labels", str(run / "labels.npy"),
    ]))
    for key in ("inter", "output", "ce", "combined"):
        # JSON has one number type; exact zeros come back as ints
        assert isinstance(loss[key], (int, float)) and math.isfinite(loss[key])
    assert loss["combined"] == loss["ce"] + 10.0 * loss["inter"] + loss["output"]

    elapsed = time.perf_counter() - t0
    ok = elapsed < 300.0
    report(capsys, "cli-pipeline", ok,
           f"6-layer run, 13 commands, all outputs schema-valid, {elapsed:.1f}s, "
           f"probe acc {probe['accuracy']:.2f}, no export tooling loaded")
