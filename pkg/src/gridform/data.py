"""Curve corpora, per-point sequence datasets, curve-level folds and scaling."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .frame import default_curvature_cap
from .geom import (
    GeometryError, NurbsCurve, NurbsSurface, clamped_knots, curvatures_and_tangents, isocurve, sample_curve,
    sample_params,
)

FEATURES = ("x", "y", "z", "u")
TARGETS = ("curvature", "tangent_x", "tangent_y", "tangent_z")
CSV_HEADER = ("curve_id", "point_index") + FEATURES + TARGETS
STD_FLOOR = 1e-8


class DatasetError(ValueError):
    pass


class PointRecord(NamedTuple):
    curve_id: int
    point_index: int
    x: float
    y: float
    z: float
    u: float
    curvature: float
    tangent_x: float
    tangent_y: float
    tangent_z: float


@dataclass(frozen=True)
class Stats:
    feature_mean: np.ndarray
    feature_std: np.ndarray
    target_mean: np.ndarray
    target_std: np.ndarray

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("feature_mean", "feature_std", "target_mean", "target_std")}

    @classmethod
    def from_dict(cls, d):
        return cls(*(np.asarray(d[k], float) for k in ("feature_mean", "feature_std", "target_mean", "target_std")))


@dataclass(eq=False)
class SequenceDataset:
    """Equal-length per-curve sequences.

    ``features[k, s]`` is ``(x, y, z, u)`` and ``targets[k, s]`` is
    ``(curvature, tx, ty, tz)`` for point ``s`` of curve ``curve_ids[k]``.
    """
    curve_ids: np.ndarray
    features: np.ndarray
    targets: np.ndarray
    stats: Stats | None = None

    def __post_init__(self):
        self.curve_ids = np.asarray(self.curve_ids, dtype=int).reshape(-1)
        n = len(self.curve_ids)
        self.features = np.asarray(self.features, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if n:
            self.features = self.features.reshape(n, -1, 4)
            self.targets = self.targets.reshape(n, -1, 4)
        else:
            self.features = self.targets = np.zeros((0, 0, 4))
        if self.features.shape != self.targets.shape:
            raise DatasetError("features and targets differ in shape")
        if len(set(self.curve_ids.tolist())) != n:
            raise DatasetError("curve ids must be unique")

    @property
    def n_curves(self) -> int:
        return len(self.curve_ids)

    @property
    def seq_len(self) -> int:
        return self.features.shape[1]

    @property
    def n_records(self) -> int:
        return self.n_curves * self.seq_len

    def records(self):
        for cid, f, t in zip(self.curve_ids, self.features, self.targets):
            for s in range(len(f)):
                yield PointRecord(int(cid), s, *map(float, f[s]), *map(float, t[s]))

    @property
    def sequences(self) -> list[list[PointRecord]]:
        recs = list(self.records())
        L = self.seq_len
        return [recs[k * L:(k + 1) * L] for k in range(self.n_curves)]

    def subset(self, ids) -> "SequenceDataset":
        pos = self.positions(ids)
        return SequenceDataset(self.curve_ids[pos], self.features[pos], self.targets[pos], self.stats)

    def positions(self, ids) -> np.ndarray:
        lookup = {int(c): k for k, c in enumerate(self.curve_ids)}
        try:
            return np.array([lookup[int(c)] for c in ids], dtype=int)
        except KeyError as exc:
            raise DatasetError(f"unknown curve id {exc.args[0]}") from None


def curves_to_dataset(curves: Sequence[NurbsCurve], n_segments: int = 20, curve_ids=None) -> SequenceDataset:
    """Sample each curve at ``n_segments + 1`` stations; ``u`` is rescaled to [0, 1]."""
    if not curves:
        raise DatasetError("no curves given")
    ids = list(range(len(curves))) if curve_ids is None else list(curve_ids)
    feats, targs = [], []
    for cid, curve in zip(ids, curves):
        try:
            samples = sample_curve(curve, n_segments)
        except GeometryError as exc:
            raise DatasetError(f"curve {cid}: {exc}") from exc
        a, b = curve.domain
        feats.append([(*s.position, (s.u - a) / (b - a)) for s in samples])
        targs.append([(s.curvature, *s.tangent) for s in samples])
    return SequenceDataset(ids, feats, targs)


# ---------------------------------------------------------------------------
# folds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldSpec:
    folds: tuple[tuple[int, ...], ...]
    seed: int | None = None

    def __post_init__(self):
        flat = [c for f in self.folds for c in f]
        if len(flat) != len(set(flat)):
            raise DatasetError("folds overlap")

    def all_ids(self):
        return sorted(c for f in self.folds for c in f)

    def train_ids(self, holdout: int) -> list[int]:
        return [c for k, f in enumerate(self.folds) if k != holdout % len(self.folds) for c in f]

    def to_dict(self):
        return {"seed": self.seed, "folds": [list(f) for f in self.folds]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(tuple(int(c) for c in f) for f in d["folds"]), d.get("seed"))


def kfold_split(dataset, fold_sizes: Sequence[int] = (3, 3, 3, 3, 4), seed: int = 0) -> FoldSpec:
    """Assign whole curves to folds of the given sizes after a seeded shuffle."""
    ids = list(dataset.curve_ids) if isinstance(dataset, SequenceDataset) else list(dataset)
    sizes = [int(s) for s in fold_sizes]
    if any(s < 1 for s in sizes) or sum(sizes) != len(ids):
        raise DatasetError(f"fold sizes {sizes} do not partition {len(ids)} curves")
    order = np.random.default_rng(seed).permutation(len(ids))
    folds, start = [], 0
    for s in sizes:
        folds.append(tuple(int(ids[k]) for k in order[start:start + s]))
        start += s
    return FoldSpec(tuple(folds), seed)


# ---------------------------------------------------------------------------
# scaling
# ---------------------------------------------------------------------------

def compute_stats(dataset: SequenceDataset, train_ids) -> Stats:
    train = dataset.subset(train_ids)
    if train.n_curves == 0:
        raise DatasetError("training portion is empty")
    f = train.features.reshape(-1, 4)
    t = train.targets.reshape(-1, 4)
    fm, fs = f.mean(axis=0), np.maximum(f.std(axis=0), STD_FLOOR)
    # the position parameter is already on [0, 1]
    fm[3], fs[3] = 0.0, 1.0
    return Stats(fm, fs, t.mean(axis=0), np.maximum(t.std(axis=0), STD_FLOOR))


def normalize(dataset: SequenceDataset, train_ids, stats: Stats | None = None):
    """Standardize every channel except ``u`` with training-portion statistics.

    Returns ``(normalized_dataset, stats)``.
    """
    if stats is None:
        stats = compute_stats(dataset, train_ids)
    out = SequenceDataset(dataset.curve_ids,
                          (dataset.features - stats.feature_mean) / stats.feature_std,
                          (dataset.targets - stats.target_mean) / stats.target_std, stats)
    return out, stats


def normalize_features(features, stats: Stats):
    return (np.asarray(features, float) - stats.feature_mean) / stats.feature_std


def denormalize_targets(targets, stats: Stats):
    return np.asarray(targets, float) * stats.target_std + stats.target_mean


def denormalize(dataset: SequenceDataset, stats: Stats | None = None) -> SequenceDataset:
    stats = stats or dataset.stats
    return SequenceDataset(dataset.curve_ids, dataset.features * stats.feature_std + stats.feature_mean,
                           denormalize_targets(dataset.targets, stats))


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(x, ".17g")


def dataset_to_csv(dataset: SequenceDataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in dataset.records():
        w.writerow([r.curve_id, r.point_index] + [_fmt(v) for v in r[2:]])
    return buf.getvalue()


def write_dataset_csv(dataset: SequenceDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(dataset_to_csv(dataset))


def dataset_from_csv(text: str) -> SequenceDataset:
    rows = csv.reader(io.StringIO(text))
    header = next(rows, None)
    if header is None or tuple(header) != CSV_HEADER:
        raise DatasetError(f"line 1: expected header {','.join(CSV_HEADER)}")
    order, feats, targs = [], {}, {}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(CSV_HEADER):
            raise DatasetError(f"line {lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
        try:
            cid, idx = int(row[0]), int(row[1])
            vals = [float(v) for v in row[2:]]
        except ValueError as exc:
            raise DatasetError(f"line {lineno}: {exc}") from None
        if cid not in feats:
            order.append(cid)
            feats[cid], targs[cid] = [], []
        if idx != len(feats[cid]):
            raise DatasetError(f"line {lineno}: point_index {idx} out of sequence for curve {cid}")
        feats[cid].append(vals[:4])
        targs[cid].append(vals[4:])
    if not order:
        return SequenceDataset(np.zeros(0, int), np.zeros((0, 0, 4)), np.zeros((0, 0, 4)))
    lengths = {len(feats[c]) for c in order}
    if len(lengths) != 1:
        raise DatasetError(f"sequences have unequal lengths {sorted(lengths)}")
    return SequenceDataset(order, [feats[c] for c in order], [targs[c] for c in order])


def read_dataset_csv(path) -> SequenceDataset:
    with open(path, newline="") as fh:
        return dataset_from_csv(fh.read())


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

def _max_curvature(curve: NurbsCurve, n: int = 200) -> float:
    return float(curvatures_and_tangents(curve, sample_params(curve.domain, n))[1].max())


def roof_deviation(rng, span: float = 36.0, n_net: int = 6):
    """Flat regular bicubic net plus random deviations (plan jitter, heights, weights)."""
    g = np.linspace(0.0, span, n_net)
    X, Y = np.meshgrid(g, g, indexing="ij")
    flat = np.stack([X, Y, np.zeros_like(X)], axis=-1)
    jitter = 0.1 * span / n_net
    dev = np.stack([rng.uniform(-jitter, jitter, X.shape),
                    rng.uniform(-jitter, jitter, X.shape),
                    rng.normal(0.0, 0.3 * span / n_net, X.shape)], axis=-1)
    dw = rng.uniform(0.8, 1.25, X.shape) - 1.0
    return flat, dev, dw


def synth_corpus(seed: int, n_curves: int = 16, curvature_cap: float | None = None) -> list[NurbsCurve]:
    """Deterministic stand-in for a case-study beam corpus.

    The curves are iso-lines of one random free-form roof, running in both
    grid directions like the members of a woven grid shell, and returned in
    shuffled order.  The roof's deviation from a flat regular net is shrunk
    until every curve's dense-sampled curvature is below ``curvature_cap``
    (default: the glulam bending cap for the default section).
    """
    if n_curves < 1:
        raise ValueError("n_curves must be >= 1")
    cap = default_curvature_cap() if curvature_cap is None else float(curvature_cap)
    if cap <= 0:
        raise ValueError("curvature cap must be positive")
    rng = np.random.default_rng(seed)
    flat, dev, dw = roof_deviation(rng)
    knots = clamped_knots(flat.shape[0], 3)
    n_u, n_v = (n_curves + 1) // 2, n_curves // 2
    stations = [((k + 0.5) / n_u, "u") for k in range(n_u)] + [((k + 0.5) / n_v, "v") for k in range(n_v)]
    scale = 1.0
    while True:
        surf = NurbsSurface(3, 3, flat + scale * dev, 1.0 + scale * dw, knots, knots)
        curves = [isocurve(surf, t, d) for t, d in stations]
        # dense probe with margin so coarser samples stay under the cap too
        kmax = max(_max_curvature(c) for c in curves)
        if kmax <= 0.98 * cap:
            break
        # curvature shrinks roughly linearly with the deviation
        scale *= min(0.95, 0.9 * cap / kmax)
    order = rng.permutation(len(curves))
    return [curves[k] for k in order]


def corpus_to_dict(curves, seed=None, curvature_cap=None) -> dict:
    return {"seed": seed, "curvature_cap": curvature_cap, "curves": [c.to_dict() for c in curves]}


def corpus_from_dict(d) -> list[NurbsCurve]:
    if not isinstance(d, dict) or not isinstance(d.get("curves"), list) or not d["curves"]:
        raise DatasetError("corpus document needs a non-empty 'curves' list")
    return [NurbsCurve.from_dict(c) for c in d["curves"]]
