"""Set-pooling network scoring query pairs by containment rate.

Each side of a pair is its own set of feature vectors; a per-side one-layer
network transforms every vector and the transformed vectors are averaged
into one representative vector per query. The two representatives are
combined (concatenation, absolute difference, elementwise product) and a
two-layer head with a sigmoid output produces the rate estimate in (0, 1).

Training minimizes the mean q-error of the batch (ratio of estimated to
true rate, or its inverse) with exact hand-derived gradients and Adam-style
moment updates, plus early stopping on the validation mean q-error.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import json

import numpy as np

from .exceptions import ContainmentDomainError, DataError, NumericError, ShapeError
from .featurizer import FeatureSpace, featurize, space_from_dict, space_to_dict
from .querymodel import Query, same_from
from .seeding import substream

PARAM_FIELDS = ("set1_w", "set1_b", "set2_w", "set2_b",
                "hid_w", "hid_b", "out_w", "out_b")

DEFAULT_LABEL_FLOOR = 1e-3

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class NetParams:
    """All learned weights. Input width L, hidden width H; the two set
    encoders are L x H, the head is 4H x 2H then 2H x 1."""
    width: int
    hidden: int
    set1_w: np.ndarray
    set1_b: np.ndarray
    set2_w: np.ndarray
    set2_b: np.ndarray
    hid_w: np.ndarray
    hid_b: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, f) for f in PARAM_FIELDS]

    def count(self) -> int:
        return sum(a.size for a in self.arrays())


def expected_param_count(width: int, hidden: int) -> int:
    """2LH + 8H^2 + 6H + 1, the closed-form size of the network."""
    return 2 * width * hidden + 8 * hidden * hidden + 6 * hidden + 1


@dataclass
class TrainConfig:
    hidden: int = 64
    batch_size: int = 128
    learning_rate: float = 1e-3
    max_epochs: int = 100
    patience: int = 10
    label_floor: float = DEFAULT_LABEL_FLOOR
    seed: int = 0

    def validate(self) -> None:
        if min(self.hidden, self.batch_size, self.max_epochs) < 1:
            raise ValueError("hidden, batch_size and max_epochs must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if not (0.0 < self.label_floor <= 0.01):
            raise ValueError("label_floor must lie in (0, 0.01]")


@dataclass
class TrainReport:
    val_curve: list[float] = field(default_factory=list)  # mean q-error per epoch
    best_epoch: int = 0                                   # 1-based index into val_curve
    initial_val: float = float("nan")                     # untrained validation mean q-error
    wall_time_s: float = 0.0


def write_train_report_csv(path: str | Path, report: TrainReport) -> None:
    """Epoch-by-epoch validation curve; epoch 0 is the untrained model.
    Wall time is deliberately left out so reruns are byte-identical."""
    lines = ["epoch,val_mean_qerror", f"0,{report.initial_val!r}"]
    for i, v in enumerate(report.val_curve, start=1):
        lines.append(f"{i},{v!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def init_params(space: FeatureSpace, hidden: int, seed: int) -> NetParams:
    """Scaled-uniform weights (half-width 1/sqrt(fan-in)), zero biases."""
    if hidden < 1:
        raise ValueError("hidden width must be >= 1")
    rng = substream(seed, "init")
    L, H = space.width, hidden

    def mat(rows, cols):
        s = 1.0 / np.sqrt(rows)
        return rng.uniform(-s, s, size=(rows, cols))

    return NetParams(
        width=L, hidden=H,
        set1_w=mat(L, H), set1_b=np.zeros(H),
        set2_w=mat(L, H), set2_b=np.zeros(H),
        hid_w=mat(4 * H, 2 * H), hid_b=np.zeros(2 * H),
        out_w=mat(2 * H, 1), out_b=np.zeros(1),
    )


def _canonical_row_order(vs: np.ndarray) -> np.ndarray:
    """Rows sorted lexicographically, fixing the summation order."""
    if len(vs) <= 1:
        return vs
    order = np.lexsort(vs.T[::-1])
    return vs[order]


def pool_set(vs: np.ndarray | Sequence, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Average of ReLU(v @ w + b) over the set; the empty set pools to the
    zero vector. Rows are summed in canonical sorted order so the result is
    bit-identical under any permutation of the input."""
    vs = np.asarray(vs, dtype=float)
    if vs.size == 0:
        return np.zeros(w.shape[1])
    if vs.ndim != 2 or vs.shape[1] != w.shape[0]:
        raise ShapeError(f"vector width {vs.shape} incompatible with weights {w.shape}")
    vs = _canonical_row_order(vs)
    a = np.maximum(vs @ w + b, 0.0)
    return a.sum(axis=0) / len(vs)


def expand(v1: np.ndarray, v2: np.ndarray) -> np.ndarray:
    """[v1, v2, |v1 - v2|, v1 * v2] concatenated; width 4H."""
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    if v1.shape != v2.shape:
        raise ShapeError(f"expand width mismatch: {v1.shape} vs {v2.shape}")
    return np.concatenate([v1, v2, np.abs(v1 - v2), v1 * v2])


def _sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(params: NetParams, v1: np.ndarray, v2: np.ndarray) -> float:
    """Rate estimate for one pair of vector sets; strictly inside (0, 1) for
    finite inputs of sane magnitude."""
    qv1 = pool_set(v1, params.set1_w, params.set1_b)
    qv2 = pool_set(v2, params.set2_w, params.set2_b)
    e = expand(qv1, qv2)
    h = np.maximum(e @ params.hid_w + params.hid_b, 0.0)
    z = float(h @ params.out_w[:, 0] + params.out_b[0])
    return float(_sigmoid(z))


def qerror(y: float, y_hat: float, eps_y: float = DEFAULT_LABEL_FLOOR) -> float:
    """max ratio between estimate and floored truth; >= 1, equal to 1 iff
    y_hat == max(y, eps_y)."""
    y_floored = max(y, eps_y)
    return y_hat / y_floored if y_hat > y_floored else y_floored / y_hat


# ---------------------------------------------------------------------------
# batched forward/backward

@dataclass
class _Padded:
    """Zero-padded vector sets plus masks; counts floored at 1 so empty sets
    average to zero without dividing by zero."""
    vp: np.ndarray      # (N, S, L)
    mask: np.ndarray    # (N, S, 1)
    counts: np.ndarray  # (N, 1)


def _pad(sets: list[np.ndarray], width: int) -> _Padded:
    n = len(sets)
    s = max((len(v) for v in sets), default=0) or 1
    vp = np.zeros((n, s, width))
    mask = np.zeros((n, s, 1))
    counts = np.ones((n, 1))
    for i, v in enumerate(sets):
        if len(v) == 0:
            continue
        if v.shape[1] != width:
            raise ShapeError(f"vector width {v.shape[1]} != expected {width}")
        v = _canonical_row_order(np.asarray(v, dtype=float))
        vp[i, :len(v)] = v
        mask[i, :len(v), 0] = 1.0
        counts[i, 0] = len(v)
    return _Padded(vp, mask, counts)


@dataclass
class _Batch:
    side1: _Padded
    side2: _Padded
    y: np.ndarray

    def take(self, idx: np.ndarray) -> "_Batch":
        return _Batch(
            _Padded(self.side1.vp[idx], self.side1.mask[idx], self.side1.counts[idx]),
            _Padded(self.side2.vp[idx], self.side2.mask[idx], self.side2.counts[idx]),
            self.y[idx],
        )

    def __len__(self) -> int:
        return len(self.y)


def _prepare(samples: Sequence[tuple[np.ndarray, np.ndarray, float]], width: int) -> _Batch:
    if not samples:
        raise ValueError("empty batch")
    v1 = [np.asarray(s[0], dtype=float) for s in samples]
    v2 = [np.asarray(s[1], dtype=float) for s in samples]
    y = np.asarray([float(s[2]) for s in samples])
    return _Batch(_pad(v1, width), _pad(v2, width), y)


def _forward_batch(params: NetParams, batch: _Batch) -> dict:
    p1, p2 = batch.side1, batch.side2
    pre1 = p1.vp @ params.set1_w + params.set1_b
    a1 = np.maximum(pre1, 0.0) * p1.mask
    qv1 = a1.sum(axis=1) / p1.counts
    pre2 = p2.vp @ params.set2_w + params.set2_b
    a2 = np.maximum(pre2, 0.0) * p2.mask
    qv2 = a2.sum(axis=1) / p2.counts
    diff = qv1 - qv2
    e = np.concatenate([qv1, qv2, np.abs(diff), qv1 * qv2], axis=1)
    hpre = e @ params.hid_w + params.hid_b
    h = np.maximum(hpre, 0.0)
    z = h @ params.out_w[:, 0] + params.out_b[0]
    yhat = _sigmoid(z)
    return {"pre1": pre1, "pre2": pre2, "qv1": qv1, "qv2": qv2, "diff": diff,
            "e": e, "hpre": hpre, "h": h, "yhat": yhat}


def _batch_qerrors(yhat: np.ndarray, y: np.ndarray, eps_y: float) -> np.ndarray:
    yp = np.maximum(y, eps_y)
    safe = np.maximum(yhat, 1e-300)  # guards sigmoid underflow
    return np.where(yhat > yp, yhat / yp, yp / safe)


def loss_and_grad(params: NetParams,
                  batch: Sequence[tuple[np.ndarray, np.ndarray, float]] | _Batch,
                  eps_y: float = DEFAULT_LABEL_FLOOR) -> tuple[float, NetParams]:
    """Mean q-error of the batch and its exact gradient.

    The loss is piecewise differentiable; at the kink (estimate equal to the
    floored label) the subgradient 0 is used, as it is for the ReLU and
    absolute-value kinks.
    """
    if not isinstance(batch, _Batch):
        batch = _prepare(batch, params.width)
    p1, p2, y = batch.side1, batch.side2, batch.y
    f = _forward_batch(params, batch)
    yhat = f["yhat"]
    q = _batch_qerrors(yhat, y, eps_y)
    loss = float(q.mean())
    if not np.isfinite(loss):
        raise NumericError("non-finite loss")

    n = len(y)
    yp = np.maximum(y, eps_y)
    dq = np.where(yhat > yp, 1.0 / yp,
                  np.where(yhat < yp, -yp / np.maximum(yhat, 1e-300) ** 2, 0.0)) / n
    dz = dq * yhat * (1.0 - yhat)

    h = f["h"]
    d_out_w = (h.T @ dz)[:, None]
    d_out_b = np.array([dz.sum()])
    dh = dz[:, None] * params.out_w[:, 0][None, :]
    dhpre = dh * (f["hpre"] > 0)
    d_hid_w = f["e"].T @ dhpre
    d_hid_b = dhpre.sum(axis=0)
    de = dhpre @ params.hid_w.T

    H = params.hidden
    g1, g2, g3, g4 = de[:, :H], de[:, H:2 * H], de[:, 2 * H:3 * H], de[:, 3 * H:]
    sgn = np.sign(f["diff"])
    dqv1 = g1 + g3 * sgn + g4 * f["qv2"]
    dqv2 = g2 - g3 * sgn + g4 * f["qv1"]

    da1 = (dqv1 / p1.counts)[:, None, :] * p1.mask * (f["pre1"] > 0)
    d_set1_w = np.einsum("bsl,bsh->lh", p1.vp, da1)
    d_set1_b = da1.sum(axis=(0, 1))
    da2 = (dqv2 / p2.counts)[:, None, :] * p2.mask * (f["pre2"] > 0)
    d_set2_w = np.einsum("bsl,bsh->lh", p2.vp, da2)
    d_set2_b = da2.sum(axis=(0, 1))

    grads = NetParams(params.width, params.hidden,
                      d_set1_w, d_set1_b, d_set2_w, d_set2_b,
                      d_hid_w, d_hid_b, d_out_w, d_out_b)
    return loss, grads


def _mean_qerror(params: NetParams, batch: _Batch, eps_y: float,
                 chunk: int = 2048) -> float:
    total = 0.0
    for start in range(0, len(batch), chunk):
        sub = batch.take(np.arange(start, min(start + chunk, len(batch))))
        q = _batch_qerrors(_forward_batch(params, sub)["yhat"], sub.y, eps_y)
        total += float(q.sum())
    return total / len(batch)


# ---------------------------------------------------------------------------
# training

def train_on_samples(train_samples: Sequence[tuple[np.ndarray, np.ndarray, float]],
                     val_samples: Sequence[tuple[np.ndarray, np.ndarray, float]],
                     space: FeatureSpace,
                     cfg: TrainConfig) -> tuple[NetParams, TrainReport]:
    """Minibatch Adam training with early stopping.

    Returns the parameters of the best validation epoch. Deterministic per
    seed: initialization and the per-epoch shuffle use named substreams of
    ``cfg.seed``.
    """
    cfg.validate()
    if not train_samples or not val_samples:
        raise ValueError("train and validation sets must be nonempty")
    t0 = time.perf_counter()
    train_batch = _prepare(train_samples, space.width)
    val_batch = _prepare(val_samples, space.width)

    params = init_params(space, cfg.hidden, cfg.seed)
    report = TrainReport()
    report.initial_val = _mean_qerror(params, val_batch, cfg.label_floor)

    m = [np.zeros_like(a) for a in params.arrays()]
    v = [np.zeros_like(a) for a in params.arrays()]
    step = 0
    shuffle_rng = substream(cfg.seed, "shuffle")
    best_val = np.inf
    best_params = copy.deepcopy(params)
    bad_epochs = 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(len(train_batch))
        for start in range(0, len(order), cfg.batch_size):
            sub = train_batch.take(order[start:start + cfg.batch_size])
            try:
                _, grads = loss_and_grad(params, sub, cfg.label_floor)
            except NumericError as exc:
                raise NumericError(f"training diverged at epoch {epoch}") from exc
            step += 1
            b1c = 1.0 - ADAM_BETA1 ** step
            b2c = 1.0 - ADAM_BETA2 ** step
            for i, name in enumerate(PARAM_FIELDS):
                g = getattr(grads, name)
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g
                update = cfg.learning_rate * (m[i] / b1c) / (np.sqrt(v[i] / b2c) + ADAM_EPS)
                setattr(params, name, getattr(params, name) - update)

        val_q = _mean_qerror(params, val_batch, cfg.label_floor)
        if not np.isfinite(val_q):
            raise NumericError(f"training diverged at epoch {epoch}")
        report.val_curve.append(val_q)
        if val_q < best_val:
            best_val = val_q
            best_params = copy.deepcopy(params)
            report.best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > cfg.patience:
                break

    report.wall_time_s = time.perf_counter() - t0
    return best_params, report


def train(train_pairs, val_pairs, space: FeatureSpace,
          cfg: TrainConfig) -> tuple[NetParams, TrainReport]:
    """Train from labeled query pairs (objects with q1, q2 and rate)."""
    def to_samples(pairs):
        return [(featurize(p.q1, space), featurize(p.q2, space), p.rate) for p in pairs]
    return train_on_samples(to_samples(train_pairs), to_samples(val_pairs), space, cfg)


def predict(params: NetParams, space: FeatureSpace, q1: Query, q2: Query) -> float:
    """Estimated rate at which q1's result is contained in q2's."""
    if not same_from(q1, q2):
        raise ContainmentDomainError("containment prediction requires identical FROM clauses")
    return forward(params, featurize(q1, space), featurize(q2, space))


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path: str | Path, params: NetParams, space: FeatureSpace,
                    meta: dict | None = None) -> None:
    blob = {
        "format": 1,
        "schema_hash": space.schema_hash,
        "feature_space": space_to_dict(space),
        "width": params.width,
        "hidden": params.hidden,
        "params": {name: getattr(params, name).tolist() for name in PARAM_FIELDS},
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(blob, sort_keys=True, separators=(",", ":")) + "\n")


def load_checkpoint(path: str | Path) -> tuple[NetParams, FeatureSpace, dict]:
    try:
        blob = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        space = space_from_dict(blob["feature_space"])
        L, H = int(blob["width"]), int(blob["hidden"])
        raw = {name: np.asarray(blob["params"][name], dtype=float) for name in PARAM_FIELDS}
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed checkpoint {path}: {exc}") from exc
    params = NetParams(L, H, **raw)
    shapes = {"set1_w": (L, H), "set1_b": (H,), "set2_w": (L, H), "set2_b": (H,),
              "hid_w": (4 * H, 2 * H), "hid_b": (2 * H,), "out_w": (2 * H, 1), "out_b": (1,)}
    for name, shape in shapes.items():
        if getattr(params, name).shape != shape:
            raise DataError(f"checkpoint {path}: {name} has shape "
                            f"{getattr(params, name).shape}, expected {shape}")
    if space.width != L:
        raise DataError(f"checkpoint {path}: feature space width {space.width} != {L}")
    if params.count() != expected_param_count(L, H):
        raise DataError(f"checkpoint {path}: parameter count {params.count()} "
                        f"!= {expected_param_count(L, H)}")
    return params, space, blob.get("meta", {})
