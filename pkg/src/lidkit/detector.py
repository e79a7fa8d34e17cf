"""Minibatch feature extraction, logistic-regression detectors, and AUC tooling.

The training-phase loop: a minibatch of normal examples spawns an adversarial
and a magnitude-matched noisy counterpart per member, per-layer characteristics
of every example are computed against the normal batch's activations, and a
logistic-regression detector learns to separate adversarial rows (positive)
from normal and noisy rows (negative).

Feature kinds and their column layouts (D = number of feature layers, i.e.
activation levels including the input):

* ``lid``       D columns, one LID estimate per level
* ``kd``        D columns, one class-conditional kernel-density score per level
* ``bu``        1 column, dropout-variance uncertainty
* ``kd_bu``     2 columns: KD at the pre-softmax level plus BU
* ``combined``  lid block + kd block + bu column (2D + 1 columns)

Feature extraction is split into ``prepare_batch`` (attacks, noise, and
activations — everything independent of k and sigma) and ``features_from``
(the characteristic computations), so parameter sweeps re-run only the cheap
part.  ``extract_features`` composes the two.
"""

from __future__ import annotations

import csv
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import characteristics, microgradnet
from .attacks import (AttackConfig, AttackOutcome, gaussian_l2_noise,
                      minmax_pixel_noise, run_attack)
from .characteristics import BuConfig, KdConfig, kernel_density, mle_lid
from .errors import (EmptyPositiveClassError, ExhaustedFeaturesError,
                     NoDirectionError, ShapeError)
from .neighborhood import Minibatch, knn_profile

FEATURE_KINDS = ("lid", "kd", "bu", "kd_bu", "combined")
SOURCES = ("normal", "noisy", "adversarial")

# offset separating per-example noise seeds from the uncertainty seed block
_BU_SEED_OFFSET = 10_000


@dataclass(frozen=True)
class FeatureMatrix:
    """Characteristic rows with binary labels and row provenance.

    Label 1 marks adversarial rows and label 0 everything else; the invariant
    that positives are exactly the adversarial-provenance rows is checked on
    construction.
    """

    features: np.ndarray
    labels: np.ndarray
    provenance: tuple
    feature_kind: str

    def __post_init__(self):
        f = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=int)
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "provenance", tuple(self.provenance))
        if self.feature_kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {self.feature_kind!r}")
        if f.ndim != 2 or y.shape != (f.shape[0],) or len(self.provenance) != f.shape[0]:
            raise ShapeError("features, labels, and provenance do not align")
        if not np.all(np.isfinite(f)):
            raise ValueError("features must be finite")
        for lab, prov in zip(y, self.provenance):
            if prov not in SOURCES:
                raise ValueError(f"unknown provenance {prov!r}")
            if (lab == 1) != (prov == "adversarial"):
                raise ValueError("positive labels must be exactly the adversarial rows")
        f.setflags(write=False)
        y.setflags(write=False)

    def __len__(self):
        return self.features.shape[0]


def select_kind(fm: FeatureMatrix, kind: str) -> FeatureMatrix:
    """Slice a ``combined`` matrix down to one feature kind's columns."""
    if fm.feature_kind != "combined":
        raise ValueError("can only slice a combined feature matrix")
    if kind == "combined":
        return fm
    width = fm.features.shape[1]
    depth = (width - 1) // 2
    if width != 2 * depth + 1:
        raise ShapeError("combined matrix width is not 2*depth+1")
    if kind == "lid":
        cols = list(range(depth))
    elif kind == "kd":
        cols = list(range(depth, 2 * depth))
    elif kind == "bu":
        cols = [2 * depth]
    elif kind == "kd_bu":
        cols = [depth + depth - 2, 2 * depth]  # pre-softmax KD, then BU
    else:
        raise ValueError(f"unknown feature kind {kind!r}")
    return FeatureMatrix(features=fm.features[:, cols], labels=fm.labels,
                         provenance=fm.provenance, feature_kind=kind)


def save_feature_matrix(fm: FeatureMatrix, path) -> None:
    """CSV with header feature_0..feature_{F-1}, label, provenance."""
    width = fm.features.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"feature_{i}" for i in range(width)]
                        + ["label", "provenance"])
        for row, lab, prov in zip(fm.features, fm.labels, fm.provenance):
            writer.writerow([repr(v) for v in row.tolist()] + [int(lab), prov])


def load_feature_matrix(path, feature_kind: str) -> FeatureMatrix:
    rows, labels, provenance = [], [], []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        width = len(header) - 2
        for record in reader:
            rows.append([float(v) for v in record[:width]])
            labels.append(int(record[width]))
            provenance.append(record[width + 1])
    return FeatureMatrix(features=np.array(rows, dtype=float),
                         labels=np.array(labels), provenance=tuple(provenance),
                         feature_kind=feature_kind)


# --------------------------------------------------------------------------
# feature extraction


@dataclass
class BatchArtifacts:
    """Everything about one (minibatch, attack) pair that k/sigma sweeps reuse.

    ``levels[source]`` holds per-activation-level matrices for the normal,
    adversarial, and noisy variants of the batch; ``notes`` records attacks
    that failed or raised and were kept as failures.
    """

    net: object
    batch: Minibatch
    attack_kind: str
    labels: np.ndarray
    outcomes: list
    success: np.ndarray
    noisy: np.ndarray
    levels: dict
    preds: dict
    seed: int
    notes: list
    _memo: dict


def _attack_one(net, x, label, cfg, refs):
    """Run one attack, converting expected dead-ends into failed outcomes."""
    try:
        return run_attack(net, x, label, cfg, refs=refs), None
    except ExhaustedFeaturesError as err:
        partial = np.asarray(err.partial, dtype=float)
        out = AttackOutcome(adversarial=partial, success=False,
                            iterations_used=err.iterations,
                            l2_perturbation=float(np.linalg.norm(partial - x)))
        return out, "exhausted feature pairs"
    except NoDirectionError:
        out = AttackOutcome(adversarial=np.asarray(x, dtype=float), success=False,
                            iterations_used=0, l2_perturbation=0.0)
        return out, "zero input gradient"


def prepare_batch(net, normal_batch: Minibatch, attack_cfg: AttackConfig,
                  seed: int, *, workers: int = 1) -> BatchArtifacts:
    """Attack every batch member and build the noisy counterparts.

    Per-example determinism: example j attacks with ``attack_cfg.seed + j``
    and draws its noise with ``seed + j``.  Noise magnitudes are matched to
    the example's own attack; failed attacks fall back to the smallest
    successful magnitude in the batch so their noisy counterparts stay
    comparable.
    """
    xs = normal_batch.vectors
    n = xs.shape[0]
    labels = microgradnet.predict_batch(net, xs)
    refs = normal_batch if attack_cfg.kind == "adaptive_opt" else None

    def work(j):
        cfg_j = replace(attack_cfg, seed=attack_cfg.seed + j)
        return _attack_one(net, xs[j], int(labels[j]), cfg_j, refs)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, range(n)))
    else:
        results = [work(j) for j in range(n)]
    outcomes = [r[0] for r in results]
    notes = [f"example {j}: {r[1]}" for j, r in enumerate(results)
             if r[1] is not None]
    success = np.array([o.success for o in outcomes], dtype=bool)

    style = "minmax_pixels" if attack_cfg.kind == "jsma" else "gaussian_l2"
    lo, hi = attack_cfg.clip_min, attack_cfg.clip_max
    noisy = np.empty_like(xs)
    if style == "gaussian_l2":
        mags = np.array([o.l2_perturbation for o in outcomes])
        positive = mags[mags > 0]
        if positive.size == 0:
            raise EmptyPositiveClassError("no attack moved any example")
        floor = float(positive.min())
        for j in range(n):
            mag = float(mags[j]) if mags[j] > 0 else floor
            noisy[j] = gaussian_l2_noise(xs[j], mag, seed + j,
                                         clip_min=lo, clip_max=hi)
    else:
        counts = np.array([
            int(np.count_nonzero(o.adversarial != xs[j]))
            for j, o in enumerate(outcomes)
        ])
        positive = counts[counts > 0]
        floor = int(positive.min()) if positive.size else 2
        for j in range(n):
            cnt = int(counts[j]) if counts[j] > 0 else floor
            noisy[j] = minmax_pixel_noise(xs[j], cnt, seed + j,
                                          clip_min=lo, clip_max=hi)

    adv = np.stack([o.adversarial for o in outcomes])
    levels = {
        "normal": microgradnet.activations_batch(net, xs),
        "adversarial": microgradnet.activations_batch(net, adv),
        "noisy": microgradnet.activations_batch(net, noisy),
    }
    preds = {src: np.argmax(levels[src][-1], axis=1) for src in SOURCES}
    return BatchArtifacts(net=net, batch=normal_batch,
                          attack_kind=attack_cfg.kind, labels=labels,
                          outcomes=outcomes, success=success, noisy=noisy,
                          levels=levels, preds=preds, seed=seed, notes=notes,
                          _memo={})


def _reference_levels(art: BatchArtifacts, reference):
    if reference is None:
        return art.levels["normal"], art.preds["normal"]
    levels = microgradnet.activations_batch(art.net, reference.vectors)
    return levels, np.argmax(levels[-1], axis=1)


def _lid_block(art: BatchArtifacts, k: int, reference) -> dict:
    """(n, D) LID features per source, each level against the reference batch."""
    ref_levels, _ = _reference_levels(art, reference)
    depth = art.net.depth
    blocks = {}
    for source in SOURCES:
        q_levels = art.levels[source]
        n = q_levels[0].shape[0]
        exclude = reference is None and source == "normal"
        block = np.empty((n, depth))
        for i in range(depth):
            refs_i = Minibatch(member_ids=range(ref_levels[i].shape[0]),
                               vectors=ref_levels[i], source="normal")
            for j in range(n):
                prof = knn_profile(q_levels[i][j], refs_i, k,
                                   exclude_self=exclude)
                block[j, i] = mle_lid(prof, layer_index=i).value
        blocks[source] = block
    return blocks


def _kd_block(art: BatchArtifacts, kd_cfg: KdConfig, reference) -> dict:
    """(n, D) class-conditional kernel densities per source.

    References are restricted to the query's predicted class; a query whose
    class has no reference scores 0 (the empty-neighborhood limit).  In
    training mode a normal query's own row (any reference identical to it)
    is left out, mirroring the LID self-exclusion.
    """
    ref_levels, ref_pred = _reference_levels(art, reference)
    depth = art.net.depth
    blocks = {}
    for source in SOURCES:
        q_levels = art.levels[source]
        q_pred = art.preds[source]
        n = q_levels[0].shape[0]
        exclude = reference is None and source == "normal"
        block = np.zeros((n, depth))
        for i in range(depth):
            refs_i = ref_levels[i]
            for j in range(n):
                q = q_levels[i][j]
                mask = ref_pred == q_pred[j]
                if exclude:
                    mask = mask & ~np.all(refs_i == q, axis=1)
                if not mask.any():
                    continue  # no same-class reference: density 0
                block[j, i] = kernel_density(q, refs_i[mask], kd_cfg)
        blocks[source] = block
    return blocks


def _bu_column(art: BatchArtifacts, bu_cfg: BuConfig) -> dict:
    key = ("bu", bu_cfg.num_runs, bu_cfg.base_seed)
    if key not in art._memo:
        inputs = {"normal": art.batch.vectors,
                  "adversarial": np.stack([o.adversarial for o in art.outcomes]),
                  "noisy": art.noisy}
        art._memo[key] = {
            src: characteristics.bayes_uncertainty_batch(art.net, inputs[src],
                                                         bu_cfg)[:, None]
            for src in SOURCES
        }
    return art._memo[key]


def features_from(art: BatchArtifacts, feature_kind: str, k: int, *,
                  kd: KdConfig | None = None, bu: BuConfig | None = None,
                  reference: Minibatch | None = None) -> FeatureMatrix:
    """Assemble a FeatureMatrix from prepared artifacts.

    With ``reference=None`` the batch itself is the reference (the training
    phase, where normal queries leave themselves out); otherwise all queries
    are profiled against the given minibatch with no self-exclusion, which is
    how held-out examples are scored.  Rows are ordered normal, noisy, then
    the successful adversarials.
    """
    if feature_kind not in FEATURE_KINDS:
        raise ValueError(f"unknown feature kind {feature_kind!r}")
    need_lid = feature_kind in ("lid", "combined")
    need_kd = feature_kind in ("kd", "kd_bu", "combined")
    need_bu = feature_kind in ("bu", "kd_bu", "combined")
    if not art.success.any():
        raise EmptyPositiveClassError(
            f"every {art.attack_kind} attack failed on this batch")
    kd = kd or KdConfig(bandwidth_sigma=1.0)
    bu = bu or BuConfig(num_runs=50, base_seed=art.seed + _BU_SEED_OFFSET)
    parts = []
    if need_lid:
        parts.append(_lid_block(art, k, reference))
    if need_kd:
        kd_blocks = _kd_block(art, kd, reference)
        if feature_kind == "kd_bu":
            pre_softmax = art.net.depth - 2
            kd_blocks = {s: b[:, [pre_softmax]] for s, b in kd_blocks.items()}
        parts.append(kd_blocks)
    if need_bu:
        parts.append(_bu_column(art, bu))
    per_source = {
        src: np.hstack([p[src] for p in parts]) for src in SOURCES
    }
    keep = np.flatnonzero(art.success)
    features = np.vstack([
        per_source["normal"],
        per_source["noisy"],
        per_source["adversarial"][keep],
    ])
    n = len(art.batch)
    labels = np.concatenate([np.zeros(2 * n, dtype=int),
                             np.ones(keep.size, dtype=int)])
    provenance = (("normal",) * n + ("noisy",) * n
                  + ("adversarial",) * keep.size)
    return FeatureMatrix(features=features, labels=labels,
                         provenance=provenance, feature_kind=feature_kind)


def extract_features(net, normal_batch: Minibatch, attack_cfg: AttackConfig,
                     k: int, feature_kind: str, seed: int, *,
                     kd: KdConfig | None = None, bu: BuConfig | None = None,
                     reference: Minibatch | None = None,
                     workers: int = 1) -> FeatureMatrix:
    """One-shot feature extraction: prepare_batch + features_from."""
    art = prepare_batch(net, normal_batch, attack_cfg, seed, workers=workers)
    return features_from(art, feature_kind, k, kd=kd, bu=bu,
                         reference=reference)


def lid_feature_row(net, x, reference: Minibatch, k: int) -> np.ndarray:
    """All-level LID features of a single example against a reference batch."""
    stack = microgradnet.forward_capture(net, x)
    ref_levels = microgradnet.activations_batch(net, reference.vectors)
    row = np.empty(net.depth)
    for i in range(net.depth):
        refs_i = Minibatch(member_ids=range(ref_levels[i].shape[0]),
                           vectors=ref_levels[i], source="normal")
        prof = knn_profile(stack.per_layer[i], refs_i, k)
        row[i] = mle_lid(prof, layer_index=i).value
    return row


# --------------------------------------------------------------------------
# logistic-regression detector


@dataclass(frozen=True)
class DetectorModel:
    """Logistic regression with the training scaler frozen inside.

    ``kept_features`` lists the original column indices that survived the
    zero-variance drop; ``feature_mean``/``feature_std`` refer to those
    columns only.
    """

    weights: np.ndarray
    bias: float
    feature_mean: np.ndarray
    feature_std: np.ndarray
    kept_features: tuple
    feature_kind: str
    training_attack: str


def _sigmoid(t):
    return 1.0 / (1.0 + np.exp(-np.clip(t, -35.0, 35.0)))


def train_detector(features: FeatureMatrix, *, epochs: int = 5000,
                   lr: float = 0.1, seed: int = 0,
                   training_attack: str = "unknown") -> DetectorModel:
    """Fit logistic regression by full-batch gradient descent.

    Features are standardized to zero mean and unit variance; zero-variance
    columns are dropped with a warning and recorded.  Descent starts from
    zero weights and stops when the loss decrease falls below 1e-8 or the
    epoch cap is hit.  The procedure is deterministic; ``seed`` is recorded
    for interface symmetry only.
    """
    del seed  # deterministic fit; accepted so call sites can thread one seed
    y = features.labels
    if y.min() == y.max():
        raise ValueError("detector training needs both classes present")
    raw = features.features
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)
    kept = np.flatnonzero(std > 0.0)
    if kept.size < raw.shape[1]:
        dropped = sorted(set(range(raw.shape[1])) - set(kept.tolist()))
        warnings.warn(f"dropping zero-variance feature columns {dropped}")
    if kept.size == 0:
        raise ValueError("all features have zero variance")
    z = (raw[:, kept] - mean[kept]) / std[kept]
    n = z.shape[0]
    w = np.zeros(kept.size)
    b = 0.0
    prev_loss = np.inf
    for _ in range(epochs):
        p = _sigmoid(z @ w + b)
        eps = 1e-12
        loss = -float(np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)))
        if prev_loss - loss < 1e-8:
            break
        prev_loss = loss
        g = p - y
        w -= lr * (z.T @ g) / n
        b -= lr * float(g.mean())
    w.setflags(write=False)
    return DetectorModel(weights=w, bias=b, feature_mean=mean[kept],
                         feature_std=std[kept], kept_features=tuple(kept.tolist()),
                         feature_kind=features.feature_kind,
                         training_attack=training_attack)


def score(model: DetectorModel, features) -> np.ndarray:
    """Detection probabilities in (0,1), standardized by the frozen scaler."""
    raw = features.features if isinstance(features, FeatureMatrix) else \
        np.asarray(features, dtype=float)
    if raw.ndim != 2:
        raise ShapeError("expected a (n, F) feature array")
    cols = list(model.kept_features)
    if raw.shape[1] <= max(cols):
        raise ShapeError("feature matrix is narrower than the model expects")
    z = (raw[:, cols] - model.feature_mean) / model.feature_std
    return _sigmoid(z @ model.weights + model.bias)


def save_detector(model: DetectorModel, path) -> None:
    payload = {
        "format": "lidkit-detector-v1",
        "weights": model.weights.tolist(),
        "bias": model.bias,
        "scaler": {"mean": model.feature_mean.tolist(),
                   "std": model.feature_std.tolist(),
                   "kept_features": list(model.kept_features)},
        "feature_kind": model.feature_kind,
        "training_attack": model.training_attack,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_detector(path) -> DetectorModel:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if data.get("format") != "lidkit-detector-v1":
        raise ValueError("not a serialized detector")
    return DetectorModel(
        weights=np.array(data["weights"], dtype=float),
        bias=float(data["bias"]),
        feature_mean=np.array(data["scaler"]["mean"], dtype=float),
        feature_std=np.array(data["scaler"]["std"], dtype=float),
        kept_features=tuple(data["scaler"]["kept_features"]),
        feature_kind=data["feature_kind"],
        training_attack=data["training_attack"],
    )


# --------------------------------------------------------------------------
# evaluation


def auc(scores_pos, scores_neg) -> float:
    """Mann-Whitney statistic: P(pos > neg) with ties counting one half.

    Computed from average ranks, which is exact (half-integer rank sums stay
    exact in floating point at these sizes).
    """
    pos = np.asarray(scores_pos, dtype=float)
    neg = np.asarray(scores_neg, dtype=float)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("both score lists must be nonempty")
    combined = np.concatenate([pos, neg])
    _, inverse, counts = np.unique(combined, return_inverse=True,
                                   return_counts=True)
    cum = np.cumsum(counts)
    avg_rank = cum - (counts - 1) / 2.0
    ranks = avg_rank[inverse]
    u = ranks[:pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def held_out_auc(model: DetectorModel, features: FeatureMatrix) -> float:
    s = score(model, features)
    return auc(s[features.labels == 1], s[features.labels == 0])


def transfer_evaluate(model: DetectorModel, features: FeatureMatrix) -> float:
    """AUC of a frozen model (weights and scaler) on another attack's features."""
    if model.feature_kind != features.feature_kind:
        raise ValueError(
            f"feature kinds differ: model {model.feature_kind}, "
            f"features {features.feature_kind}"
        )
    return held_out_auc(model, features)


def layerwise_auc(features: FeatureMatrix) -> list:
    """Per-column AUC of raw feature values, no trained model involved.

    Meant for per-level single-feature matrices (the lid kind); returns
    (level_index, auc) pairs of length equal to the feature-layer count.
    """
    pos = features.features[features.labels == 1]
    neg = features.features[features.labels == 0]
    return [(i, auc(pos[:, i], neg[:, i]))
            for i in range(features.features.shape[1])]


# --------------------------------------------------------------------------
# parameter tuning


@dataclass(frozen=True)
class TuningResult:
    grid: tuple
    mean_auc: tuple
    per_attack_auc: dict
    selected: float


def _cv_auc(features: FeatureMatrix, folds: int, seed: int) -> float:
    """Mean validation AUC over simple shuffled folds."""
    n = len(features)
    order = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=int)
    assignment[order] = np.arange(n) % folds
    scores = []
    for f in range(folds):
        val = assignment == f
        for part in (val, ~val):
            if features.labels[part].min() == features.labels[part].max():
                raise ValueError("degenerate folds: a split lost one class")
        train_fm = FeatureMatrix(features=features.features[~val],
                                 labels=features.labels[~val],
                                 provenance=tuple(np.array(features.provenance)[~val]),
                                 feature_kind=features.feature_kind)
        model = train_detector(train_fm)
        s = score(model, features.features[val])
        y = features.labels[val]
        scores.append(auc(s[y == 1], s[y == 0]))
    return float(np.mean(scores))


def tune_parameter(net, batches, grid, feature_kind: str, attack_cfgs, *,
                   folds: int = 3, k: int = 20, seed: int = 0,
                   bu: BuConfig | None = None) -> TuningResult:
    """Grid-search k (lid) or the bandwidth sigma (kd) by internal CV.

    For every grid value, features are built for each attack over all batches
    (attacks and activations computed once and shared across the grid), the
    mean cross-validated AUC per attack is taken, and the value with the
    highest mean across attacks wins; ties go to the smaller value.
    """
    if feature_kind not in ("lid", "kd"):
        raise ValueError("only the lid (k) and kd (sigma) parameters are tunable")
    grid = sorted(grid)
    if not grid:
        raise ValueError("grid must be nonempty")
    artifacts = [
        [prepare_batch(net, b, cfg, seed + 101 * ai + 7919 * bi)
         for bi, b in enumerate(batches)]
        for ai, cfg in enumerate(attack_cfgs)
    ]
    per_attack = {cfg.kind: [] for cfg in attack_cfgs}
    means = []
    for value in grid:
        cell = []
        for arts, cfg in zip(artifacts, attack_cfgs):
            matrices = []
            for art in arts:
                if feature_kind == "lid":
                    fm = features_from(art, "lid", int(value), bu=bu)
                else:
                    fm = features_from(art, "kd", k,
                                       kd=KdConfig(bandwidth_sigma=float(value)),
                                       bu=bu)
                matrices.append(fm)
            joined = FeatureMatrix(
                features=np.vstack([m.features for m in matrices]),
                labels=np.concatenate([m.labels for m in matrices]),
                provenance=tuple(p for m in matrices for p in m.provenance),
                feature_kind=feature_kind,
            )
            cell_auc = _cv_auc(joined, folds, seed)
            per_attack[cfg.kind].append(cell_auc)
            cell.append(cell_auc)
        means.append(float(np.mean(cell)))
    best = int(np.argmax(means))  # first max on an ascending grid = smallest
    return TuningResult(grid=tuple(grid), mean_auc=tuple(means),
                        per_attack_auc={a: tuple(v) for a, v in per_attack.items()},
                        selected=grid[best])


# --------------------------------------------------------------------------
# adaptive-attack evaluation


def adaptive_failure_rate(net, detectors: dict, inputs, labels,
                          refs: Minibatch, attack_cfg: AttackConfig, *,
                          k: int = 20, threshold: float = 0.5) -> dict:
    """Failure rates of the detector-aware attack under both knowledge scenarios.

    ``detectors`` maps "scenario1" (all feature layers) and "scenario2"
    (pre-softmax level only) to trained lid-kind models.  An attack on an
    input fails a scenario if it cannot flip the prediction or if that
    scenario's detector flags the crafted example at the given score
    threshold.  Returns both rates plus per-input records.
    """
    if set(detectors) != {"scenario1", "scenario2"}:
        raise ValueError("need exactly the scenario1 and scenario2 detectors")
    cfg = replace(attack_cfg, kind="adaptive_opt", adaptive_k=k)
    pre_softmax = net.depth - 2
    records = []
    failures = {"scenario1": 0, "scenario2": 0}
    for j, (x, label) in enumerate(zip(inputs, labels)):
        out = run_attack(net, x, int(label),
                         replace(cfg, seed=cfg.seed + j), refs=refs)
        record = {"index": j, "success": bool(out.success),
                  "l2": out.l2_perturbation}
        if out.success:
            row = lid_feature_row(net, out.adversarial, refs, k)
            s1 = float(score(detectors["scenario1"], row[None, :])[0])
            s2 = float(score(detectors["scenario2"],
                             row[None, [pre_softmax]])[0])
            record["score_scenario1"] = s1
            record["score_scenario2"] = s2
            flagged = {"scenario1": s1 >= threshold, "scenario2": s2 >= threshold}
        else:
            flagged = {"scenario1": True, "scenario2": True}
        for scen in failures:
            if not out.success or flagged[scen]:
                failures[scen] += 1
            record[f"failed_{scen}"] = (not out.success) or flagged[scen]
        records.append(record)
    n = len(records)
    return {
        "scenario1_failure_rate": failures["scenario1"] / n,
        "scenario2_failure_rate": failures["scenario2"] / n,
        "per_input": records,
    }
