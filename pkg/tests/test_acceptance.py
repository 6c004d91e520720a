"""End-to-end acceptance gate.

One test per shipped guarantee, each printing a single PASS/FAIL line to
the terminal (bypassing capture) so a full run reads as a checklist:

  1. contrastive loss matches a brute-force double-precision oracle
  2. finite-difference gradient suite over every primitive and loss
  3. AUC equals exhaustive pairwise counting, ROC area and invariances
  4. four-stage pipeline beats its baselines in the documented order
  5. repeated runs are bit-identical
  6. every pseudo-label obeys the hard = [soft >= threshold] law
  7. binary formats round-trip exactly and reject corruption

The ordering experiment (test 4) trains the full pipeline three times at
the desk preset and dominates the suite's runtime (about 25 minutes on a
laptop CPU).
"""

import math
import os
import shutil
import statistics
import time

import numpy as np
import pytest

from ssl_distill.cli import EXIT_OK, main
from ssl_distill.config import resolve
from ssl_distill.data import (
    GeneratorConfig,
    ManifestEntry,
    generate_synthetic,
    read_manifest,
    write_manifest,
)
from ssl_distill.gradcheck import run_suite
from ssl_distill.losses import NtXentConfig, nt_xent, nt_xent_from_tensor, EmbeddingBatch
from ssl_distill.metrics import auc, roc_curve
from ssl_distill.pipeline import (
    Checkpoint,
    FormatError,
    load_checkpoint,
    load_pseudo_labels,
    run_all,
    save_checkpoint,
)
from ssl_distill.tensor import Tensor

QUIET = lambda msg: None


@pytest.fixture()
def emit(capfd):
    """One visible [PASS]/[FAIL] line per criterion, bypassing capture."""

    def _emit(name: str, failures, detail: str = "") -> None:
        status = "FAIL" if failures else "PASS"
        line = f"[{status}] {name}"
        if detail:
            line += f": {detail}"
        if failures:
            line += " | " + "; ".join(str(f) for f in failures)
        with capfd.disabled():
            print(line, flush=True)
        assert not failures, line

    return _emit


# ---------------------------------------------------------------------------
# 1. Contrastive loss oracle


def _oracle(z: np.ndarray, tau: float) -> float:
    z = z.astype(np.float64)
    n = len(z)
    zn = z / np.linalg.norm(z, axis=1, keepdims=True)
    sims = zn @ zn.T
    total = 0.0
    for i in range(n):
        j = i ^ 1
        denom = sum(math.exp(sims[i, k] / tau) for k in range(n) if k != i)
        total += -math.log(math.exp(sims[i, j] / tau) / denom)
    return total / n


def test_contrastive_loss_oracle(emit):
    failures = []
    t0 = time.perf_counter()

    gen = np.random.default_rng(20240)
    worst = 0.0
    for case in range(200):
        n_pairs = int(gen.integers(2, 17))
        d = int(gen.integers(2, 129))
        tau = float(gen.uniform(0.05, 2.0))
        z = gen.standard_normal((2 * n_pairs, d)).astype(np.float32)
        got = float(nt_xent_from_tensor(Tensor(z), tau).data)
        want = _oracle(z, tau)
        rel = abs(got - want) / max(1e-12, abs(want))
        worst = max(worst, rel)
        if rel >= 1e-4:
            failures.append(f"case {case} (N={n_pairs}, d={d}, tau={tau:.3f}): rel {rel:.2e}")

    ident = float(nt_xent(
        EmbeddingBatch(Tensor(np.ones((4, 3), dtype=np.float32))),
        NtXentConfig(temperature=1.0),
    ).data)
    if round(ident, 4) != round(math.log(3.0), 4):
        failures.append(f"identical-embedding value {ident:.6f} != ln 3")

    ortho = float(nt_xent(
        EmbeddingBatch(Tensor(np.array(
            [[1, 0], [1, 0], [0, 1], [0, 1]], dtype=np.float32))),
        NtXentConfig(temperature=1.0),
    ).data)
    if round(ortho, 4) != 0.5514:
        failures.append(f"orthogonal-pair value {ortho:.6f} != 0.5514")

    elapsed = time.perf_counter() - t0
    if elapsed >= 5.0:
        failures.append(f"runtime {elapsed:.1f}s >= 5s")
    emit(
        "contrastive loss oracle",
        failures,
        f"200 cases, worst rel err {worst:.2e}, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# 2. Gradient suite


def test_gradient_suite(emit):
    failures = []
    t0 = time.perf_counter()
    reports = run_suite(seeds=range(20), log=QUIET)
    elapsed = time.perf_counter() - t0
    for rep in reports:
        if not rep.passed:
            failures.append(f"{rep.name}: max err {rep.max_error:.2e} at {rep.worst_coord}")
    if elapsed >= 60.0:
        failures.append(f"runtime {elapsed:.1f}s >= 60s")
    emit(
        "gradient suite",
        failures,
        f"{len(reports)} checks x 20 seeds, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# 3. AUC oracle


def _pairwise(scores, labels) -> float:
    wins = 0.0
    total = 0
    for sp, lp in zip(scores, labels):
        if lp != 1:
            continue
        for sn, ln in zip(scores, labels):
            if ln != 0:
                continue
            total += 1
            wins += 1.0 if sp > sn else (0.5 if sp == sn else 0.0)
    return wins / total


def _trapezoid(points) -> float:
    return sum((x1 - x0) * (y0 + y1) / 2.0
               for (x0, y0), (x1, y1) in zip(points, points[1:]))


def test_auc_oracle(emit):
    failures = []
    gen = np.random.default_rng(77)
    for case in range(100):
        n = int(gen.integers(4, 60))
        labels = gen.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = np.round(gen.random(n), 1)  # coarse grid forces ties
        got = auc(scores, labels)
        want = _pairwise(scores, labels)
        if got != pytest.approx(want, abs=1e-15):
            failures.append(f"case {case}: auc {got!r} != pairwise {want!r}")
        area = _trapezoid(roc_curve(scores, labels))
        if abs(area - got) > 1e-12:
            failures.append(f"case {case}: roc area off by {abs(area - got):.2e}")
        affine = auc(2.5 * scores + 3.0, labels)
        expo = auc(np.exp(scores), labels)
        if abs(affine - got) > 1e-12 or abs(expo - got) > 1e-12:
            failures.append(f"case {case}: monotone-transform invariance broken")
    emit("auc oracle", failures, "100 tied instances, exact pairwise agreement")


# ---------------------------------------------------------------------------
# 4. Pipeline ordering experiment (shared with 6)

SUP_FRAC = "Supervised (5% labels)"
SUP_FULL = "Supervised (100% labels)"
TEACHER = "SimCLR-Finetuned (Teacher)"
STUDENT = "SimCLR-Distilled (Student)"


@pytest.fixture(scope="module")
def ordering_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("ordering")
    root = str(base / "data")
    generate_synthetic(GeneratorConfig(n_train=2000, n_test=400, image_size=32, seed=0), root)
    t0 = time.perf_counter()
    tables = []
    for seed in (0, 1, 2):
        exp = resolve(
            "desk",
            None,
            {
                "data.root": root,
                "experiment.out_dir": str(base / f"run{seed}"),
                "experiment.seed": str(seed),
            },
            None,
            {},
        )
        run = run_all(exp, QUIET)
        tables.append({r.name: r.auc for r in run.report.results})
    wall = time.perf_counter() - t0
    return tables, wall, str(base)


def test_pipeline_ordering(ordering_runs, emit):
    tables, wall, _base = ordering_runs
    med = {
        name: statistics.median(t[name] for t in tables)
        for name in (SUP_FRAC, SUP_FULL, TEACHER, STUDENT)
    }
    failures = []
    if med[STUDENT] < med[TEACHER] - 0.02:
        failures.append(f"student {med[STUDENT]:.4f} < teacher {med[TEACHER]:.4f} - 0.02")
    if med[TEACHER] < med[SUP_FRAC] + 0.02:
        failures.append(f"teacher {med[TEACHER]:.4f} < supervised-5% {med[SUP_FRAC]:.4f} + 0.02")
    if med[SUP_FULL] < med[SUP_FRAC]:
        failures.append(
            f"supervised-100% {med[SUP_FULL]:.4f} < supervised-5% {med[SUP_FRAC]:.4f}"
        )
    for name, value in med.items():
        if value <= 0.7:
            failures.append(f"{name} median auc {value:.4f} <= 0.7")
    if wall >= 1800.0:
        failures.append(f"3-seed wall time {wall:.0f}s >= 1800s")
    emit(
        "pipeline ordering experiment",
        failures,
        "medians over seeds {0,1,2}: "
        + ", ".join(f"{n} {v:.4f}" for n, v in med.items())
        + f", wall {wall:.0f}s",
    )


# ---------------------------------------------------------------------------
# 5. Determinism


def test_determinism(tmp_path, emit):
    failures = []
    root = str(tmp_path / "data")
    out_dir = str(tmp_path / "runs")
    stash = str(tmp_path / "first")
    args = ["--deterministic", "--seed", "0"]
    for k, v in {
        "data.root": root,
        "experiment.out_dir": out_dir,
        "data.n_train": "64",
        "data.n_test": "16",
        "split.label_fraction": "0.25",
        "pretrain.epochs": "1",
        "pretrain.batch_size": "8",
        "finetune_teacher.epochs": "1",
        "finetune_teacher.batch_size": "8",
        "distill.epochs": "1",
        "distill.batch_size": "8",
        "finetune_student.epochs": "1",
        "finetune_student.batch_size": "8",
    }.items():
        args += ["--set", f"{k}={v}"]

    if main(["gen-data"] + args) != EXIT_OK:
        failures.append("gen-data failed")
    if main(["run-all"] + args) != EXIT_OK:
        failures.append("first run-all failed")
    shutil.copytree(out_dir, stash)
    if main(["run-all"] + args) != EXIT_OK:
        failures.append("second run-all failed")

    compared = 0
    for fname in sorted(os.listdir(stash)):
        a = open(os.path.join(stash, fname), "rb").read()
        b = open(os.path.join(out_dir, fname), "rb").read()
        compared += 1
        if a != b:
            failures.append(f"{fname} differs between identical runs")
    if compared < 8:  # 6 checkpoints + pseudo labels + reports
        failures.append(f"only {compared} artifacts compared")
    emit("determinism", failures, f"{compared} artifacts bit-identical across reruns")


# ---------------------------------------------------------------------------
# 6. Pseudo-label law


def test_pseudo_label_threshold_law(ordering_runs, emit):
    _tables, _wall, base = ordering_runs
    failures = []
    checked = 0
    for seed in (0, 1, 2):
        path = os.path.join(base, f"run{seed}", "pseudo_labels.csv")
        pl = load_pseudo_labels(path, 0.5)
        if not pl.records:
            failures.append(f"seed {seed}: empty pseudo-label file")
        for rec in pl.records:
            checked += 1
            if rec.hard != int(rec.soft >= 0.5):
                failures.append(f"seed {seed} id {rec.id}: soft {rec.soft!r} hard {rec.hard}")
    emit(
        "pseudo-label threshold law",
        failures,
        f"{checked} records obey hard = [soft >= 0.5]",
    )


# ---------------------------------------------------------------------------
# 7. Format round trips


def test_format_round_trips(tmp_path, emit):
    failures = []

    gen = np.random.default_rng(5)
    ck = Checkpoint(
        spec_name="tiny-t",
        tensors={
            "encoder.stem_conv.weight": gen.standard_normal((14, 3, 3, 3)).astype(np.float32),
            "encoder.fc.bias": gen.standard_normal(128).astype(np.float32),
            "classifier.fc.weight": gen.standard_normal((128, 1)).astype(np.float32),
        },
        provenance=("pretrain", "finetune_teacher"),
        seed=3,
        split_hash=bytes(range(32)),
    )
    p1 = str(tmp_path / "a.ckpt")
    p2 = str(tmp_path / "b.ckpt")
    save_checkpoint(ck, p1)
    loaded = load_checkpoint(p1)
    save_checkpoint(loaded, p2)
    if open(p1, "rb").read() != open(p2, "rb").read():
        failures.append("checkpoint save/load/save is not byte-identical")
    for k in ck.tensors:
        if not np.array_equal(loaded.tensors[k], ck.tensors[k]):
            failures.append(f"tensor {k} changed across the round trip")
    if (loaded.spec_name, loaded.provenance, loaded.seed, loaded.split_hash) != (
        ck.spec_name, ck.provenance, ck.seed, ck.split_hash,
    ):
        failures.append("checkpoint metadata changed across the round trip")

    blob = bytearray(open(p1, "rb").read())
    blob[0] ^= 0xFF
    bad = str(tmp_path / "corrupt.ckpt")
    open(bad, "wb").write(bytes(blob))
    try:
        load_checkpoint(bad)
        failures.append("corrupted magic byte was accepted")
    except FormatError:
        pass

    entries = [
        ManifestEntry("train_00000.ppm", 0, 0, "train"),
        ManifestEntry("train_00001.ppm", 3, 1, "train"),
        ManifestEntry("test_00000.ppm", 2, 1, "test"),
    ]
    m1 = str(tmp_path / "m1.csv")
    m2 = str(tmp_path / "m2.csv")
    write_manifest(m1, entries)
    back = read_manifest(m1)
    write_manifest(m2, back)
    if open(m1, "rb").read() != open(m2, "rb").read():
        failures.append("manifest write/read/write is not byte-identical")
    if back != entries:
        failures.append("manifest entries changed across the round trip")

    emit("format round trips", failures, "checkpoint + manifest exact, corruption rejected")
