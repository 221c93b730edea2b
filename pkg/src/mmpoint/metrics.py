"""Region/mask IoU, positioning error, segmentation losses and confusion matrices."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from mmpoint.errors import DomainError

EPS = 1e-7
MASK_THRESHOLD = 0.5


# -------------------------------------------------------------------- regions


def _shoelace(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True, eq=False)
class Region2D:
    """Convex polygon in the (x, y) plane, stored counter-clockwise."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise DomainError(f"need at least 3 vertices as (n, 2), got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("vertices must be finite")
        if _shoelace(v) < 0:
            v = v[::-1]
        edges = np.roll(v, -1, axis=0) - v
        turns = edges[:, 0] * np.roll(edges[:, 1], -1) - edges[:, 1] * np.roll(edges[:, 0], -1)
        if np.any(turns < -1e-12 * max(1.0, float(np.abs(v).max()) ** 2)):
            raise DomainError("vertices must form a convex polygon in consistent winding order")
        if not _shoelace(v) > 0:
            raise DomainError("region has zero area")
        object.__setattr__(self, "vertices", v)

    @classmethod
    def box(cls, xmin: float, ymin: float, xmax: float, ymax: float) -> "Region2D":
        if not (xmax > xmin and ymax > ymin):
            raise DomainError("box must have positive width and height")
        return cls(np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]]))

    @classmethod
    def quad(cls, corners: Sequence[Sequence[float]]) -> "Region2D":
        if len(corners) != 4:
            raise DomainError("a quadrilateral needs exactly 4 corners")
        return cls(np.asarray(corners, dtype=float))

    @classmethod
    def hull(cls, points) -> "Region2D":
        """Convex hull of a 2-D point set."""
        pts = np.asarray(points, dtype=float)
        try:
            h = ConvexHull(pts)
        except (QhullError, ValueError) as exc:
            raise DomainError(f"degenerate point set: {exc}") from exc
        return cls(pts[h.vertices])

    @property
    def area(self) -> float:
        return _shoelace(self.vertices)

    def contains(self, x, y) -> np.ndarray:
        """Boolean mask of points inside or on the boundary."""
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        inside = np.ones(np.broadcast(x, y).shape, dtype=bool)
        v = self.vertices
        for (ax, ay), (bx, by) in zip(v, np.roll(v, -1, axis=0)):
            inside &= (bx - ax) * (y - ay) - (by - ay) * (x - ax) >= 0
        return inside


def _clip(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of a polygon by a convex CCW polygon."""
    out = list(map(tuple, subject))
    for a, b in zip(clipper, np.roll(clipper, -1, axis=0)):
        if not out:
            break
        ex, ey = b - a

        def side(p):
            return ex * (p[1] - a[1]) - ey * (p[0] - a[0])

        src, out = out, []
        for i, cur in enumerate(src):
            prev = src[i - 1]
            sc, sp = side(cur), side(prev)
            if sc >= 0:
                if sp < 0:
                    t = sp / (sp - sc)
                    out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
                out.append(cur)
            elif sp >= 0:
                t = sp / (sp - sc)
                out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
    return np.asarray(out, dtype=float).reshape(-1, 2)


def intersection_area(a: Region2D, b: Region2D) -> float:
    # Canonical argument order makes the result bit-identical under swapping.
    if tuple(a.vertices.ravel()) > tuple(b.vertices.ravel()):
        a, b = b, a
    poly = _clip(a.vertices, b.vertices)
    return max(_shoelace(poly), 0.0) if len(poly) >= 3 else 0.0


# ---------------------------------------------------------------------- masks


@dataclass(frozen=True, eq=False)
class MaskGrid:
    values: np.ndarray  # [y, x]
    x_axis: np.ndarray
    y_axis: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        x = np.asarray(self.x_axis, dtype=float)
        y = np.asarray(self.y_axis, dtype=float)
        if v.shape != (len(y), len(x)):
            raise DomainError(f"mask shape {v.shape} does not match axes ({len(y)}, {len(x)})")
        if v.size and (np.nanmin(v) < 0 or np.nanmax(v) > 1 or np.isnan(v).any()):
            raise DomainError("mask values must lie in [0, 1]")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "x_axis", x)
        object.__setattr__(self, "y_axis", y)

    def binary(self) -> np.ndarray:
        return self.values >= MASK_THRESHOLD

    def same_grid(self, other: "MaskGrid") -> bool:
        return (
            self.values.shape == other.values.shape
            and np.array_equal(self.x_axis, other.x_axis)
            and np.array_equal(self.y_axis, other.y_axis)
        )


def rasterize(region: Region2D, x_axis, y_axis) -> MaskGrid:
    """Cells whose centre lies inside ``region`` are set to 1."""
    xx, yy = np.meshgrid(np.asarray(x_axis, dtype=float), np.asarray(y_axis, dtype=float))
    return MaskGrid(region.contains(xx, yy).astype(float), x_axis, y_axis)


def iou(a: Region2D | MaskGrid, b: Region2D | MaskGrid) -> float:
    """Intersection over union of two regions (by area) or two masks (by cell count)."""
    if isinstance(a, Region2D) and isinstance(b, Region2D):
        inter = intersection_area(a, b)
        return inter / (a.area + b.area - inter)
    if isinstance(a, MaskGrid) and isinstance(b, MaskGrid):
        if not a.same_grid(b):
            raise DomainError("masks are on different grids")
        ma, mb = a.binary(), b.binary()
        union = int(np.count_nonzero(ma | mb))
        if union == 0:
            raise DomainError("both masks are empty; IoU is undefined")
        return int(np.count_nonzero(ma & mb)) / union
    raise DomainError("iou needs two regions or two masks")


# ----------------------------------------------------------------- positioning


def positioning_error(extracted: float, reference: float) -> float:
    """Signed relative error ``(extracted - reference) / reference``."""
    if not reference > 0:
        raise DomainError("reference must be > 0")
    return (extracted - reference) / reference


def positioning_table(rows: Sequence[Sequence[float]], references: Sequence[float]) -> dict:
    """Per-row signed errors and column means for columns of measured distances."""
    data = np.asarray(rows, dtype=float)
    if data.ndim != 2 or data.shape[1] != len(references):
        raise DomainError("each row needs one value per reference")
    errors = [[positioning_error(v, r) for v, r in zip(row, references)] for row in data]
    return {
        "rows": [{"values": list(map(float, row)), "errors": e} for row, e in zip(data, errors)],
        "means": [math.fsum(col) / len(col) for col in data.T],
        "references": list(map(float, references)),
        "max_abs_error": float(np.max(np.abs(errors))) if errors else 0.0,
    }


# ---------------------------------------------------------------------- losses


class LossValue(NamedTuple):
    value: float
    clamped: bool  # True if any probability was clamped to avoid log(0)


def _values(m) -> np.ndarray:
    return m.values if isinstance(m, MaskGrid) else np.asarray(m, dtype=float)


def _match(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(pred, MaskGrid) and isinstance(gt, MaskGrid) and not pred.same_grid(gt):
        raise DomainError("masks are on different grids")
    p, g = _values(pred), _values(gt)
    if p.shape != g.shape:
        raise DomainError(f"shape mismatch {p.shape} vs {g.shape}")
    return p.ravel(), g.ravel()


def dice_loss(pred, gt, smooth: float = 0.0) -> float:
    """``1 - (2*sum(p*g) + s) / (sum(p^2) + sum(g^2) + s)``."""
    if smooth < 0:
        raise DomainError("smooth must be >= 0")
    p, g = _match(pred, gt)
    den = float(np.dot(p, p) + np.dot(g, g)) + smooth
    if den == 0:
        raise DomainError("dice loss undefined for two all-zero masks with smooth=0")
    return 1.0 - (2.0 * float(np.dot(p, g)) + smooth) / den


def _clamp(p: np.ndarray, lo: float, hi: float) -> tuple[np.ndarray, bool]:
    c = np.clip(p, lo, hi)
    return c, bool(np.any(c != p))


def _sample_weights(n: int, class_weights, sample_classes) -> np.ndarray:
    if class_weights is None:
        return np.ones(n)
    if sample_classes is None:
        raise DomainError("sample_classes is required with class_weights")
    w = np.asarray(class_weights, dtype=float)
    idx = np.asarray(sample_classes, dtype=int)
    if idx.shape != (n,):
        raise DomainError("sample_classes must give one class per sample")
    return w[idx]


def focal_loss(pred, alpha: float = 1.0, gamma: float = 2.0, class_weights=None, sample_classes=None, eps: float = EPS) -> LossValue:
    """Mean of ``-alpha * w * (1-p)^gamma * log(p)`` over positive-sample probabilities."""
    if not alpha > 0 or gamma < 0:
        raise DomainError("need alpha > 0 and gamma >= 0")
    p = np.asarray(pred, dtype=float).ravel()
    if p.size == 0 or np.any((p < 0) | (p > 1)):
        raise DomainError("pred must be a nonempty array in [0, 1]")
    pc, clamped = _clamp(p, eps, 1.0)
    w = _sample_weights(p.size, class_weights, sample_classes)
    terms = -alpha * w * (1.0 - pc) ** gamma * np.log(pc)
    return LossValue(float(np.mean(terms)), clamped)


def cross_entropy(y, p, eps: float = EPS) -> LossValue:
    """Binary (multi-label) cross-entropy summed over categories."""
    y = np.asarray(y, dtype=float).ravel()
    p = np.asarray(p, dtype=float).ravel()
    if y.shape != p.shape:
        raise DomainError(f"length mismatch {y.shape} vs {p.shape}")
    if np.any((y != 0) & (y != 1)):
        raise DomainError("labels must be 0 or 1")
    pc, clamped = _clamp(p, eps, 1.0 - eps)
    return LossValue(float(-np.sum(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))), clamped)


def softmax_cross_entropy(y, p, eps: float = EPS) -> LossValue:
    """Categorical variant ``-sum(y * log p)`` for one-hot ``y`` and softmax ``p``."""
    y = np.asarray(y, dtype=float).ravel()
    p = np.asarray(p, dtype=float).ravel()
    if y.shape != p.shape:
        raise DomainError(f"length mismatch {y.shape} vs {p.shape}")
    pc, clamped = _clamp(p, eps, 1.0)
    return LossValue(float(-np.sum(y * np.log(pc))), clamped)


def _pt(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    return np.where(gt >= MASK_THRESHOLD, pred, 1.0 - pred)


def composite_loss(pred, gt, dice_weight: float = 1.0, focal_weight: float = 1.0, alpha: float = 1.0, gamma: float = 2.0, smooth: float = 0.0) -> LossValue:
    """Weighted Dice + focal loss for a probability mask against a binary truth.

    The focal term scores each cell by the probability of its true class.
    """
    p, g = _match(pred, gt)
    focal = focal_loss(_pt(p, g), alpha, gamma)
    return LossValue(dice_weight * dice_loss(p, g, smooth) + focal_weight * focal.value, focal.clamped)


def loss_gradients(loss: str, **inputs) -> np.ndarray:
    """Analytic gradient of a loss with respect to its prediction argument.

    ``loss`` is one of ``dice`` (pred, gt, smooth), ``focal`` (pred, alpha,
    gamma, class_weights, sample_classes), ``cross_entropy`` (y, p) or
    ``softmax_cross_entropy`` (y, p). Clamped entries get the gradient at
    the clamp point.
    """
    if loss == "dice":
        p, g = _match(inputs["pred"], inputs["gt"])
        s = inputs.get("smooth", 0.0)
        num = 2.0 * np.dot(p, g) + s
        den = np.dot(p, p) + np.dot(g, g) + s
        if den == 0:
            raise DomainError("dice loss undefined for two all-zero masks with smooth=0")
        grad = -(2.0 * g * den - num * 2.0 * p) / den**2
        return grad.reshape(_values(inputs["pred"]).shape)
    if loss == "focal":
        p = np.asarray(inputs["pred"], dtype=float)
        alpha, gamma = inputs.get("alpha", 1.0), inputs.get("gamma", 2.0)
        pc = np.clip(p, inputs.get("eps", EPS), 1.0)
        w = _sample_weights(p.size, inputs.get("class_weights"), inputs.get("sample_classes")).reshape(p.shape)
        q = 1.0 - pc
        # gamma*q^(gamma-1)*log(p) -> 0 as p -> 1 for every gamma >= 0
        with np.errstate(divide="ignore", invalid="ignore"):
            slope = np.where(q > 0, gamma * q ** (gamma - 1.0) * np.log(pc), 0.0)
        grad = -alpha * w * (-slope + q**gamma / pc)
        return grad / p.size
    if loss == "cross_entropy":
        y = np.asarray(inputs["y"], dtype=float)
        pc = np.clip(np.asarray(inputs["p"], dtype=float), EPS, 1.0 - EPS)
        return -y / pc + (1.0 - y) / (1.0 - pc)
    if loss == "softmax_cross_entropy":
        y = np.asarray(inputs["y"], dtype=float)
        pc = np.clip(np.asarray(inputs["p"], dtype=float), EPS, 1.0)
        return -y / pc
    raise DomainError(f"unknown loss {loss!r}")


# ------------------------------------------------------------------ confusion


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    classes: tuple[str, ...]
    counts: np.ndarray  # [truth, predicted]
    matrix: np.ndarray  # row-normalised; empty rows are all zero
    empty_rows: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "counts": self.counts.tolist(),
            "matrix": self.matrix.tolist(),
            "empty_rows": list(self.empty_rows),
        }


def confusion_matrix(truth: Sequence[str], predicted: Sequence[str], classes: Sequence[str]) -> ConfusionMatrix:
    if len(truth) != len(predicted):
        raise DomainError("truth and predicted label lists differ in length")
    classes = tuple(str(c) for c in classes)
    index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=int)
    for t, p in zip(truth, predicted):
        t, p = str(getattr(t, "value", t)), str(getattr(p, "value", p))
        if t not in index or p not in index:
            raise DomainError(f"unknown label in pair ({t!r}, {p!r})")
        counts[index[t], index[p]] += 1
    totals = counts.sum(axis=1, keepdims=True)
    matrix = np.divide(counts, totals, out=np.zeros(counts.shape), where=totals > 0)
    empty = tuple(c for c, n in zip(classes, totals[:, 0]) if n == 0)
    return ConfusionMatrix(classes, counts, matrix, empty)


# -------------------------------------------------------------------- density


def density_profile(cloud, range_bin_edges) -> np.ndarray:
    """Point counts per range interval (last interval closed, as in ``np.histogram``)."""
    edges = np.asarray(range_bin_edges, dtype=float)
    if edges.ndim != 1 or len(edges) < 2 or not np.all(np.diff(edges) > 0):
        raise DomainError("range_bin_edges must be strictly increasing with at least two entries")
    ranges = cloud.column("range") if hasattr(cloud, "column") else np.asarray(cloud, dtype=float)
    counts, _ = np.histogram(ranges, bins=edges)
    return counts
