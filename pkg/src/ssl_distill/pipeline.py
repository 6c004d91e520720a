"""Four-stage training pipeline with provenance-checked checkpoints.

Stage 1 pretrains the teacher encoder contrastively on unlabeled images,
stage 2 fine-tunes it on the small labeled fraction, stage 3 pseudo-labels
the unlabeled pool with the fine-tuned teacher, and stage 4 distills into
a larger student that is finally fine-tuned on the same labeled set.

Checkpoints record the stage chain they came through plus a digest of the
labeled id set, so stages refuse to run out of order or against a
different split.  With fixed seeds every stage is bit-deterministic: all
randomness (shuffles, augmentations, inits) flows through name-keyed rng
substreams, never through shared mutable generator state.
"""

from __future__ import annotations

import os
import struct
import sys
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .augment import AugmentationPolicy, augment, make_view_pair
from .data import (
    DatasetSplit,
    ImageSample,
    labeled_hash,
    load_dataset,
    make_split,
    preprocess,
    read_manifest,
)
from .losses import bce, nt_xent_from_tensor
from .metrics import EvalReport
from .models import (
    BUILTIN_SPECS,
    EncoderSpec,
    Module,
    build_classifier_head,
    build_encoder,
    build_projection_head,
    forward_classify,
    forward_pretrain,
)
from .optim import sgd_step, zero_grad
from .rng import RngState
from .tensor import Tensor, backward

CHECKPOINT_MAGIC = b"SSLCKPT1"
CHECKPOINT_VERSION = 1
NO_SPLIT_HASH = bytes(32)

STAGES = ("pretrain", "finetune_teacher", "pseudo_label", "distill", "finetune_student")
TRAINING_STAGES = ("pretrain", "finetune_teacher", "distill", "finetune_student")

EVAL_BATCH = 256

Logger = Callable[[str], None]


def _stderr_log(msg: str) -> None:
    print(msg, file=sys.stderr)


class FormatError(ValueError):
    """Corrupt or foreign checkpoint/pseudo-label file."""


class ProvenanceError(ValueError):
    """Checkpoint arrived from the wrong stage."""


class SpecMismatchError(ValueError):
    """Checkpoint carries a different model spec than requested."""


class DatasetTooSmallError(ValueError):
    pass


class EmptyPseudoLabelSetError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Stage configuration


@dataclass(frozen=True)
class StageConfig:
    stage: str
    lr: float = 0.01
    weight_decay: float = 0.0
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 1
    policy: str = "weak"
    temperature: float = 0.5  # pretrain only
    threshold: float = 0.5    # pseudo_label only
    seed: int = 0

    def validate(self) -> None:
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}, expected one of {STAGES}")
        if self.stage in TRAINING_STAGES:
            if self.lr <= 0:
                raise ValueError(f"{self.stage}: lr must be positive, got {self.lr}")
            if self.weight_decay < 0:
                raise ValueError(f"{self.stage}: weight_decay must be nonnegative")
            if self.momentum < 0:
                raise ValueError(f"{self.stage}: momentum must be nonnegative")
            if self.batch_size < 2:
                raise ValueError(
                    f"{self.stage}: batch_size must be at least 2, got {self.batch_size}"
                )
            if self.epochs < 1:
                raise ValueError(f"{self.stage}: epochs must be at least 1, got {self.epochs}")
        if self.stage == "pretrain" and self.temperature <= 0:
            raise ValueError(f"pretrain: temperature must be positive, got {self.temperature}")
        if self.stage == "pseudo_label" and not 0.0 < self.threshold < 1.0:
            raise ValueError(
                f"pseudo_label: threshold must be in (0, 1), got {self.threshold}"
            )


# ---------------------------------------------------------------------------
# Models as checkpointable composites


class PretrainModel(Module):
    """Encoder plus projection head for the contrastive stage."""

    def __init__(self, spec: EncoderSpec, rng: RngState):
        super().__init__()
        self.spec = spec
        self.encoder = self.register_child("encoder", build_encoder(spec, rng))
        self.projection = self.register_child("projection", build_projection_head(spec, rng))

    def __call__(self, x: Tensor):
        return forward_pretrain(self.encoder, self.projection, x)


class ClassifierModel(Module):
    """Encoder plus sigmoid classifier head for supervised stages."""

    def __init__(self, spec: EncoderSpec, rng: RngState):
        super().__init__()
        self.spec = spec
        self.encoder = self.register_child("encoder", build_encoder(spec, rng))
        self.classifier = self.register_child("classifier", build_classifier_head(spec, rng))

    def __call__(self, x: Tensor) -> Tensor:
        return forward_classify(self.encoder, self.classifier, x)


# ---------------------------------------------------------------------------
# Checkpoints


@dataclass
class Checkpoint:
    spec_name: str
    tensors: Dict[str, np.ndarray]
    provenance: Tuple[str, ...]
    seed: int
    split_hash: bytes = NO_SPLIT_HASH
    format_version: int = CHECKPOINT_VERSION

    def last_stage(self) -> str:
        return self.provenance[-1] if self.provenance else ""


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    """Binary layout: magic, version, spec name, split hash, tensor table,
    then a provenance footer (stage names plus the run seed)."""
    if len(ckpt.split_hash) != 32:
        raise ValueError(f"split_hash must be 32 bytes, got {len(ckpt.split_hash)}")
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", ckpt.format_version)]
    name_b = ckpt.spec_name.encode("utf-8")
    parts.append(struct.pack("<I", len(name_b)))
    parts.append(name_b)
    parts.append(ckpt.split_hash)
    parts.append(struct.pack("<I", len(ckpt.tensors)))
    for name, arr in ckpt.tensors.items():
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<I", arr.ndim))
        if arr.ndim:
            parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    parts.append(struct.pack("<I", len(ckpt.provenance)))
    for stage in ckpt.provenance:
        sb = stage.encode("utf-8")
        parts.append(struct.pack("<I", len(sb)))
        parts.append(sb)
    parts.append(struct.pack("<Q", ckpt.seed & (2**64 - 1)))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Cursor:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.path}: truncated checkpoint")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def utf8(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    cur = _Cursor(blob, path)
    if cur.take(8) != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic, not a checkpoint file")
    version = cur.u32()
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    spec_name = cur.utf8()
    split_hash = cur.take(32)
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(cur.u32()):
        name = cur.utf8()
        ndim = cur.u32()
        shape = tuple(cur.u64() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(cur.take(4 * count), dtype="<f4").reshape(shape)
        tensors[name] = arr.astype(np.float32).copy()
    provenance = tuple(cur.utf8() for _ in range(cur.u32()))
    seed = cur.u64()
    return Checkpoint(spec_name, tensors, provenance, seed, split_hash, version)


def _spec_by_name(name: str) -> EncoderSpec:
    try:
        return BUILTIN_SPECS[name]
    except KeyError:
        raise SpecMismatchError(
            f"unknown model spec {name!r}, expected one of {sorted(BUILTIN_SPECS)}"
        ) from None


def _load_prefixed(module: Module, tensors: Dict[str, np.ndarray], prefix: str) -> None:
    subset = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
    module.load_state_arrays(subset)


# ---------------------------------------------------------------------------
# Pseudo labels


@dataclass
class PseudoLabelRecord:
    id: str
    soft: float
    hard: int


@dataclass
class PseudoLabelSet:
    records: List[PseudoLabelRecord] = field(default_factory=list)
    threshold: float = 0.5

    def validate(self) -> None:
        for rec in self.records:
            expect = int(rec.soft >= self.threshold)
            if rec.hard != expect:
                raise ValueError(
                    f"pseudo label {rec.id}: hard {rec.hard} violates "
                    f"[soft >= {self.threshold}] with soft {rec.soft!r}"
                )


def save_pseudo_labels(pl: PseudoLabelSet, path: str) -> None:
    pl.validate()
    lines = ["id,soft,hard"]
    for rec in pl.records:
        # %.9g round-trips float32 exactly, so the threshold law survives re-parsing
        lines.append(f"{rec.id},{np.float32(rec.soft):.9g},{rec.hard}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_pseudo_labels(path: str, threshold: float = 0.5) -> PseudoLabelSet:
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    if not raw or raw[0].strip() != "id,soft,hard":
        raise FormatError(f"{path}: bad pseudo-label header, line 1")
    records = []
    for lineno, line in enumerate(raw[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise FormatError(f"{path}: expected 3 fields, line {lineno}")
        try:
            soft = np.float32(parts[1])
            hard = int(parts[2])
        except ValueError:
            raise FormatError(f"{path}: bad soft/hard value, line {lineno}") from None
        records.append(PseudoLabelRecord(parts[0].strip(), float(soft), hard))
    pl = PseudoLabelSet(records, threshold)
    pl.validate()
    return pl


# ---------------------------------------------------------------------------
# Shared training machinery


def _prepare_images(
    dataset: Dict[str, ImageSample], ids: Sequence[str], size: int
) -> Dict[str, np.ndarray]:
    """Images at network input size; recenters and resizes when needed."""
    out = {}
    for sid in ids:
        px = dataset[sid].pixels
        if px.shape[1] != size or px.shape[2] != size:
            px = preprocess(px, size)
        out[sid] = px
    return out


def _supervised_epochs(
    model: ClassifierModel,
    images: Dict[str, np.ndarray],
    targets: Dict[str, float],
    cfg: StageConfig,
    policy: AugmentationPolicy,
    rng: RngState,
    log: Logger,
    tag: str,
) -> None:
    ids_sorted = sorted(images)
    params = model.parameters()
    model.train()
    for epoch in range(cfg.epochs):
        order = rng.substream("shuffle", epoch).generator().permutation(len(ids_sorted))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            chunk = [ids_sorted[k] for k in order[start : start + cfg.batch_size]]
            views = [
                augment(images[sid], policy, rng.substream("aug", epoch, sid))
                for sid in chunk
            ]
            y = np.array([targets[sid] for sid in chunk], dtype=np.float32)
            probs = model(Tensor(np.stack(views)))
            loss = bce(probs, y)
            zero_grad(params)
            backward(loss)
            sgd_step(params, cfg.lr, cfg.weight_decay, cfg.momentum)
            losses.append(float(loss.data))
        log(f"[{tag}] epoch {epoch + 1}/{cfg.epochs} bce {float(np.mean(losses)):.4f}")


def predict_probs(
    model: ClassifierModel, images: Dict[str, np.ndarray], ids: Sequence[str]
) -> np.ndarray:
    """Eval-mode probabilities, no augmentation, deterministic."""
    model.eval()
    out = np.empty(len(ids), dtype=np.float32)
    for start in range(0, len(ids), EVAL_BATCH):
        chunk = list(ids[start : start + EVAL_BATCH])
        batch = Tensor(np.stack([images[sid] for sid in chunk]))
        out[start : start + len(chunk)] = model(batch).data
    model.train()
    return out


# ---------------------------------------------------------------------------
# Stages


def pretrain(
    dataset: Dict[str, ImageSample],
    unlabeled_ids: Sequence[str],
    spec: EncoderSpec,
    cfg: StageConfig,
    policy: AugmentationPolicy,
    rng: RngState,
    log: Logger = _stderr_log,
) -> Checkpoint:
    """Contrastive pretraining of the encoder on unlabeled images."""
    cfg.validate()
    if len(unlabeled_ids) < cfg.batch_size:
        raise DatasetTooSmallError(
            f"pretrain needs at least batch_size={cfg.batch_size} unlabeled images, "
            f"got {len(unlabeled_ids)}"
        )
    images = _prepare_images(dataset, unlabeled_ids, spec.input_size)
    model = PretrainModel(spec, rng.substream("init"))
    params = model.parameters()
    ids_sorted = sorted(images)
    model.train()
    for epoch in range(cfg.epochs):
        order = rng.substream("shuffle", epoch).generator().permutation(len(ids_sorted))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            chunk = [ids_sorted[k] for k in order[start : start + cfg.batch_size]]
            if len(chunk) < 2:
                continue  # a lone image contributes no negatives
            views = []
            for sid in chunk:
                va, vb = make_view_pair(images[sid], policy, rng.substream("aug", epoch, sid))
                views.append(va)
                views.append(vb)
            emb = model(Tensor(np.stack(views)))
            loss = nt_xent_from_tensor(emb.z, cfg.temperature)
            zero_grad(params)
            backward(loss)
            sgd_step(params, cfg.lr, cfg.weight_decay, cfg.momentum)
            losses.append(float(loss.data))
        log(f"[pretrain] epoch {epoch + 1}/{cfg.epochs} nt-xent {float(np.mean(losses)):.4f}")
    return Checkpoint(
        spec_name=spec.name,
        tensors=model.state_arrays(),
        provenance=("pretrain",),
        seed=cfg.seed,
    )


def finetune(
    ckpt: Checkpoint,
    dataset: Dict[str, ImageSample],
    labeled_ids: Sequence[str],
    cfg: StageConfig,
    policy: AugmentationPolicy,
    rng: RngState,
    log: Logger = _stderr_log,
    expect_spec: str = None,
) -> Checkpoint:
    """Supervised fine-tuning of a pretrained encoder on the labeled set."""
    cfg.validate()
    if expect_spec is not None and ckpt.spec_name != expect_spec:
        raise SpecMismatchError(
            f"checkpoint holds {ckpt.spec_name!r} but the configured model is "
            f"{expect_spec!r}"
        )
    if ckpt.last_stage() != "pretrain":
        raise ProvenanceError(
            f"finetune expects a pretrain checkpoint, got stage chain {ckpt.provenance}"
        )
    spec = _spec_by_name(ckpt.spec_name)
    model = ClassifierModel(spec, rng.substream("init"))
    _load_prefixed(model.encoder, ckpt.tensors, "encoder.")
    images = _prepare_images(dataset, labeled_ids, spec.input_size)
    targets = {sid: float(dataset[sid].binary_label) for sid in labeled_ids}
    _supervised_epochs(model, images, targets, cfg, policy, rng, log, "finetune-teacher")
    return Checkpoint(
        spec_name=spec.name,
        tensors=model.state_arrays(),
        provenance=ckpt.provenance + ("finetune_teacher",),
        seed=cfg.seed,
        split_hash=labeled_hash(labeled_ids),
    )


def generate_pseudo_labels(
    ckpt: Checkpoint,
    dataset: Dict[str, ImageSample],
    unlabeled_ids: Sequence[str],
    threshold: float = 0.5,
) -> PseudoLabelSet:
    """Eval-mode teacher inference; hard = [soft >= threshold], ties up."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    if not unlabeled_ids:
        raise EmptyPseudoLabelSetError("no unlabeled ids to pseudo-label")
    if ckpt.last_stage() != "finetune_teacher":
        raise ProvenanceError(
            f"pseudo-labeling expects a fine-tuned teacher, got stage chain {ckpt.provenance}"
        )
    spec = _spec_by_name(ckpt.spec_name)
    model = ClassifierModel(spec, RngState(0).substream("pseudo-scaffold"))
    model.load_state_arrays(ckpt.tensors)
    ids_sorted = sorted(unlabeled_ids)
    images = _prepare_images(dataset, ids_sorted, spec.input_size)
    soft = predict_probs(model, images, ids_sorted)
    records = [
        PseudoLabelRecord(sid, float(s), int(s >= threshold))
        for sid, s in zip(ids_sorted, soft)
    ]
    return PseudoLabelSet(records, threshold)


def distill(
    student_spec: EncoderSpec,
    teacher_ckpt: Checkpoint,
    pseudo: PseudoLabelSet,
    dataset: Dict[str, ImageSample],
    cfg: StageConfig,
    policy: AugmentationPolicy,
    rng: RngState,
    log: Logger = _stderr_log,
) -> Checkpoint:
    """Train a fresh student on the teacher's hard pseudo-labels."""
    cfg.validate()
    if not pseudo.records:
        raise EmptyPseudoLabelSetError("pseudo-label set is empty")
    pseudo.validate()
    if teacher_ckpt.last_stage() != "finetune_teacher":
        raise ProvenanceError(
            f"distill expects a fine-tuned teacher, got stage chain {teacher_ckpt.provenance}"
        )
    teacher_spec = _spec_by_name(teacher_ckpt.spec_name)
    student = ClassifierModel(student_spec, rng.substream("init"))
    teacher_params = sum(
        v.size for k, v in teacher_ckpt.tensors.items() if k.startswith("encoder.")
    )
    student_params = student.encoder.param_count()
    if student_params < teacher_params:
        log(
            f"[distill] warning: student has fewer parameters than the teacher "
            f"({student_params} < {teacher_params}); proceeding anyway"
        )
    hard = [rec.hard for rec in pseudo.records]
    if len(set(hard)) == 1:
        log(
            f"[distill] warning: class collapse, every pseudo-label is {hard[0]}; "
            f"the student will converge to a constant output"
        )
    ids = [rec.id for rec in pseudo.records]
    images = _prepare_images(dataset, ids, student_spec.input_size)
    targets = {rec.id: float(rec.hard) for rec in pseudo.records}
    _supervised_epochs(student, images, targets, cfg, policy, rng, log, "distill")
    return Checkpoint(
        spec_name=student_spec.name,
        tensors=student.state_arrays(),
        provenance=teacher_ckpt.provenance + ("pseudo_label", "distill"),
        seed=cfg.seed,
        split_hash=teacher_ckpt.split_hash,
    )


def finetune_student(
    ckpt: Checkpoint,
    dataset: Dict[str, ImageSample],
    labeled_ids: Sequence[str],
    cfg: StageConfig,
    policy: AugmentationPolicy,
    rng: RngState,
    log: Logger = _stderr_log,
    expect_spec: str = None,
) -> Checkpoint:
    """Final fine-tune of the student on the stage-2 labeled set."""
    cfg.validate()
    if expect_spec is not None and ckpt.spec_name != expect_spec:
        raise SpecMismatchError(
            f"checkpoint holds {ckpt.spec_name!r} but the configured model is "
            f"{expect_spec!r}"
        )
    if ckpt.last_stage() != "distill":
        raise ProvenanceError(
            f"student fine-tune expects a distilled checkpoint, got stage chain {ckpt.provenance}"
        )
    if ckpt.split_hash != labeled_hash(labeled_ids):
        raise ValueError(
            "labeled set mismatch: the student must be fine-tuned on the same "
            "labeled ids the teacher was fine-tuned on"
        )
    spec = _spec_by_name(ckpt.spec_name)
    model = ClassifierModel(spec, rng.substream("init"))
    model.load_state_arrays(ckpt.tensors)
    images = _prepare_images(dataset, labeled_ids, spec.input_size)
    targets = {sid: float(dataset[sid].binary_label) for sid in labeled_ids}
    _supervised_epochs(model, images, targets, cfg, policy, rng, log, "finetune-student")
    return Checkpoint(
        spec_name=spec.name,
        tensors=model.state_arrays(),
        provenance=ckpt.provenance + ("finetune_student",),
        seed=cfg.seed,
        split_hash=ckpt.split_hash,
    )


def train_supervised(
    spec: EncoderSpec,
    dataset: Dict[str, ImageSample],
    labeled_ids: Sequence[str],
    cfg: StageConfig,
    policy: AugmentationPolicy,
    rng: RngState,
    log: Logger = _stderr_log,
    tag: str = "supervised",
) -> Checkpoint:
    """Label-only baseline: fresh init, no pretraining or distillation."""
    cfg.validate()
    model = ClassifierModel(spec, rng.substream("init"))
    images = _prepare_images(dataset, labeled_ids, spec.input_size)
    targets = {sid: float(dataset[sid].binary_label) for sid in labeled_ids}
    _supervised_epochs(model, images, targets, cfg, policy, rng, log, tag)
    return Checkpoint(
        spec_name=spec.name,
        tensors=model.state_arrays(),
        provenance=("supervised",),
        seed=cfg.seed,
        split_hash=labeled_hash(labeled_ids),
    )


def evaluate_checkpoint(
    ckpt: Checkpoint, dataset: Dict[str, ImageSample], ids: Sequence[str]
) -> Tuple[np.ndarray, np.ndarray]:
    """(scores, labels) for the given ids under the checkpointed model."""
    spec = _spec_by_name(ckpt.spec_name)
    model = ClassifierModel(spec, RngState(0).substream("eval-scaffold"))
    model.load_state_arrays(ckpt.tensors)
    ids_sorted = sorted(ids)
    images = _prepare_images(dataset, ids_sorted, spec.input_size)
    scores = predict_probs(model, images, ids_sorted)
    labels = np.array([dataset[sid].binary_label for sid in ids_sorted], dtype=np.int64)
    return scores.astype(np.float64), labels


# ---------------------------------------------------------------------------
# Full pipeline


@dataclass
class RunReport:
    report: EvalReport
    checkpoint_paths: Dict[str, str]
    pseudo_label_path: str
    wall_time: float


def run_all(exp, log: Logger = _stderr_log) -> RunReport:
    """Execute stages 1-4 plus baselines and evaluate everything.

    `exp` is an ExperimentConfig (see config module): dataset root, split
    settings, model spec names, per-stage StageConfigs, policies, output
    directory and the experiment seed.
    """
    t0 = time.time()
    manifest_path = os.path.join(exp.data_root, "manifest.csv")
    if not os.path.isfile(manifest_path):
        raise FileNotFoundError(
            f"dataset not found: {manifest_path} is missing, generate data first"
        )
    dataset = load_dataset(exp.data_root)
    entries = read_manifest(manifest_path)
    split = make_split(entries, exp.label_fraction, exp.split_seed)
    labeled = sorted(split.labeled_ids)
    unlabeled = sorted(split.unlabeled_ids)
    test_ids = sorted(split.test_ids)
    train_ids = sorted(split.labeled_ids | split.unlabeled_ids)
    log(
        f"[run-all] {len(labeled)} labeled / {len(unlabeled)} unlabeled / "
        f"{len(test_ids)} test, seed {exp.seed}"
    )

    teacher_spec = _spec_by_name(exp.teacher_spec)
    student_spec = _spec_by_name(exp.student_spec)
    root = RngState(exp.seed)
    os.makedirs(exp.out_dir, exist_ok=True)
    paths: Dict[str, str] = {}

    def _save(ckpt: Checkpoint, name: str) -> None:
        paths[name] = os.path.join(exp.out_dir, name + ".ckpt")
        save_checkpoint(ckpt, paths[name])

    pre = pretrain(
        dataset, unlabeled, teacher_spec, exp.stages["pretrain"],
        exp.strong_policy, root.substream("pretrain"), log,
    )
    _save(pre, "pretrain")

    teacher = finetune(
        pre, dataset, labeled, exp.stages["finetune_teacher"],
        exp.weak_policy, root.substream("finetune_teacher"), log,
    )
    _save(teacher, "teacher")

    pseudo = generate_pseudo_labels(teacher, dataset, unlabeled, exp.pseudo_threshold)
    pseudo_path = os.path.join(exp.out_dir, "pseudo_labels.csv")
    save_pseudo_labels(pseudo, pseudo_path)
    log(f"[pseudo-label] {len(pseudo.records)} records, threshold {exp.pseudo_threshold}")

    distilled = distill(
        student_spec, teacher, pseudo, dataset, exp.stages["distill"],
        exp.weak_policy, root.substream("distill"), log,
    )
    _save(distilled, "student_distilled")

    student = finetune_student(
        distilled, dataset, labeled, exp.stages["finetune_student"],
        exp.weak_policy, root.substream("finetune_student"), log,
    )
    _save(student, "student")

    sup_frac = train_supervised(
        teacher_spec, dataset, labeled, exp.stages["finetune_teacher"],
        exp.weak_policy, root.substream("supervised_frac"), log, "supervised-frac",
    )
    _save(sup_frac, "supervised_frac")

    sup_full = train_supervised(
        teacher_spec, dataset, train_ids, exp.stages["finetune_teacher"],
        exp.weak_policy, root.substream("supervised_full"), log, "supervised-full",
    )
    _save(sup_full, "supervised_full")

    report = EvalReport()
    frac_pct = f"{100.0 * exp.label_fraction:g}%"
    for name, ckpt in (
        (f"Supervised ({frac_pct} labels)", sup_frac),
        ("Supervised (100% labels)", sup_full),
        ("SimCLR-Finetuned (Teacher)", teacher),
        ("SimCLR-Distilled (Student)", student),
    ):
        scores, labels = evaluate_checkpoint(ckpt, dataset, test_ids)
        res = report.add(name, scores, labels)
        log(f"[evaluate] {name}: auc {res.auc:.4f} accuracy {res.accuracy:.4f}")

    return RunReport(report, paths, pseudo_path, time.time() - t0)
