"""Sample-quality metrics over embedding sets and raw graphs."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist

from .dataset import Dataset
from .lego import LegoError, LegoGraph, canonical_key, check_validity

DEFAULT_K = 5
EIG_TOLERANCE = 1e-8


class MetricError(ValueError):
    pass


def _as_matrix(x, name: str, min_rows: int = 1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise MetricError(f"{name}: expected an N x D matrix, got shape {x.shape}")
    if x.shape[0] < min_rows:
        raise MetricError(f"{name}: need at least {min_rows} rows, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise MetricError(f"{name}: non-finite entries")
    return x


def _pair(ref, gen, min_rows=1) -> Tuple[np.ndarray, np.ndarray]:
    ref = _as_matrix(ref, "ref", min_rows)
    gen = _as_matrix(gen, "gen", min_rows)
    if ref.shape[1] != gen.shape[1]:
        raise MetricError(f"dimension mismatch: {ref.shape[1]} vs {gen.shape[1]}")
    return ref, gen


def _sym_sqrt(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((a + a.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_distance(ref, gen) -> float:
    """Frechet distance between Gaussians fitted to the two sets.

    Tr((S1 S2)^1/2) is taken as the trace of the square root of the symmetric PSD
    matrix S1^1/2 S2 S1^1/2, which has the same eigenvalues. Eigenvalues more
    negative than -1e-8 times the largest one raise; the rest are clamped to 0.
    """
    ref, gen = _pair(ref, gen, 2)
    mu1, mu2 = ref.mean(axis=0), gen.mean(axis=0)
    s1 = np.atleast_2d(np.cov(ref, rowvar=False))
    s2 = np.atleast_2d(np.cov(gen, rowvar=False))
    r1 = _sym_sqrt(s1)
    m = r1 @ s2 @ r1
    w = np.linalg.eigvalsh((m + m.T) / 2)
    scale = max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.min(initial=0.0) < -EIG_TOLERANCE * scale:
        raise MetricError(f"covariance product has a negative eigenvalue {w.min():.3e}")
    tr_sqrt = float(np.sqrt(np.clip(w, 0, None)).sum())
    diff = mu1 - mu2
    d = float(diff @ diff + np.trace(s1) + np.trace(s2) - 2.0 * tr_sqrt)
    if not math.isfinite(d):
        raise MetricError("frechet distance is not finite")
    return max(d, 0.0)


def polynomial_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return (x @ y.T / x.shape[1] + 1.0) ** 3


def kernel_distance(ref, gen) -> float:
    """Unbiased squared MMD under the cubic polynomial kernel."""
    ref, gen = _pair(ref, gen, 2)
    m, n = len(ref), len(gen)
    kxx = polynomial_kernel(ref, ref)
    kyy = polynomial_kernel(gen, gen)
    kxy = polynomial_kernel(ref, gen)
    sxx = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    syy = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    return float(sxx + syy - 2.0 * kxy.mean())


def knn_radii(x: np.ndarray, k: int) -> np.ndarray:
    """Distance from each row to its k-th nearest other row."""
    if len(x) <= k:
        raise MetricError(f"need more than k={k} points, got {len(x)}")
    d = cdist(x, x)
    # column 0 of the sorted rows is the point itself
    return np.sort(d, axis=1)[:, k]


def _inside(points: np.ndarray, centres: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Boolean matrix [i, j]: point i lies in the ball of centre j."""
    return cdist(points, centres) <= radii[None, :]


def precision_recall(ref, gen, k: int = DEFAULT_K) -> Tuple[float, float]:
    ref, gen = _pair(ref, gen)
    r_ref, r_gen = knn_radii(ref, k), knn_radii(gen, k)
    precision = _inside(gen, ref, r_ref).any(axis=1).mean()
    recall = _inside(ref, gen, r_gen).any(axis=1).mean()
    return float(precision), float(recall)


def density_coverage(ref, gen, k: int = DEFAULT_K) -> Tuple[float, float]:
    ref, gen = _pair(ref, gen)
    if len(gen) <= k:
        raise MetricError(f"need more than k={k} generated points, got {len(gen)}")
    inside = _inside(gen, ref, knn_radii(ref, k))
    density = inside.sum() / (k * len(gen))
    coverage = inside.any(axis=0).mean()
    return float(density), float(coverage)


def dc_harmonic_mean(density: float, coverage: float) -> float:
    if density < 0 or coverage < 0:
        raise MetricError("density and coverage must be non-negative")
    if density == 0 or coverage == 0:
        return 0.0
    return 2.0 * density * coverage / (density + coverage)


def pct_valid(graphs: Iterable[LegoGraph]) -> float:
    flags = [check_validity(g).valid for g in graphs]
    return 100.0 * float(np.mean(flags)) if flags else float("nan")


def _training_keys(training) -> set:
    graphs = training.graphs() if isinstance(training, Dataset) else list(training)
    return {canonical_key(g) for g in graphs}


def pct_novel(graphs: Iterable[LegoGraph], training) -> float:
    """Percentage of graphs whose physical structure matches no training record.

    Invalid graphs have no physical structure and count as novel.
    """
    keys = training if isinstance(training, (set, frozenset)) else _training_keys(training)
    if not keys:
        raise MetricError("training set is empty")
    flags = []
    for g in graphs:
        try:
            flags.append(canonical_key(g) not in keys)
        except LegoError:
            flags.append(True)
    return 100.0 * float(np.mean(flags)) if flags else float("nan")


def nearest_neighbour(query: np.ndarray, reference: np.ndarray) -> int:
    """Row of ``reference`` closest to ``query`` in Euclidean distance; lowest index on ties."""
    d = cdist(np.atleast_2d(query), np.asarray(reference))[0]
    return int(np.argmin(d))


# ---------------------------------------------------------------------------
# graph statistics


def degree_histogram(g: LegoGraph) -> np.ndarray:
    """Normalised histogram of total (undirected) node degree."""
    if g.num_nodes == 0:
        return np.array([1.0])
    deg_in, deg_out = g.degrees()
    h = np.bincount(deg_in + deg_out).astype(np.float64)
    return h / h.sum()


def wasserstein_1d(p: np.ndarray, q: np.ndarray) -> float:
    """W1 between histograms on the integer support 0, 1, 2, ..."""
    n = max(len(p), len(q))
    p = np.pad(p, (0, n - len(p)))
    q = np.pad(q, (0, n - len(q)))
    return float(np.abs(np.cumsum(p) - np.cumsum(q)).sum())


def gaussian_emd_kernel(p: np.ndarray, q: np.ndarray, sigma: float = 1.0) -> float:
    return math.exp(-wasserstein_1d(p, q) ** 2 / (2.0 * sigma ** 2))


def _hist_matrix(hists: Sequence[np.ndarray]) -> np.ndarray:
    n = max(len(h) for h in hists)
    return np.stack([np.pad(h, (0, n - len(h))) for h in hists])


def degree_mmd(ref: Sequence[LegoGraph], gen: Sequence[LegoGraph], sigma: float = 1.0) -> float:
    """Biased squared MMD between degree histograms under the Gaussian-EMD kernel."""
    if not len(ref) or not len(gen):
        raise MetricError("degree_mmd needs non-empty sets")
    hists = _hist_matrix([degree_histogram(g) for g in list(ref) + list(gen)])
    cdf = np.cumsum(hists, axis=1)
    kern = np.exp(-cdist(cdf, cdf, "cityblock") ** 2 / (2.0 * sigma ** 2))
    m = len(ref)
    return float(kern[:m, :m].mean() + kern[m:, m:].mean() - 2.0 * kern[:m, m:].mean())


# ---------------------------------------------------------------------------
# reports


@dataclass
class MetricReport:
    fd: Optional[float] = None
    kd: Optional[float] = None
    precision: Optional[float] = None
    recall: Optional[float] = None
    density: Optional[float] = None
    coverage: Optional[float] = None
    dc_harmonic_mean: Optional[float] = None
    gin_accuracy: Optional[float] = None
    pct_valid: Optional[float] = None
    pct_novel: Optional[float] = None
    degree_mmd: Optional[float] = None
    n_reference: Optional[int] = None
    n_generated: Optional[int] = None
    k: int = DEFAULT_K
    extra: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save_json(self, path: Union[str, Path]):
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    def csv_fields(self) -> List[str]:
        return [f for f in self.to_dict() if f != "extra"]

    def append_csv(self, path: Union[str, Path]):
        """Append one row; the header is written when the file is new."""
        path = Path(path)
        fields = self.csv_fields()
        new = not path.exists() or path.stat().st_size == 0
        row = self.to_dict()
        with open(path, "a", newline="") as fh:
            w = csv.writer(fh)
            if new:
                w.writerow(fields)
            w.writerow(["" if row[f] is None else _fmt(row[f]) for f in fields])


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def embedding_metrics(ref: np.ndarray, gen: np.ndarray, k: int = DEFAULT_K) -> MetricReport:
    """FD, KD, P/R and D/C between two embedding sets."""
    p, r = precision_recall(ref, gen, k)
    d, c = density_coverage(ref, gen, k)
    return MetricReport(fd=frechet_distance(ref, gen), kd=kernel_distance(ref, gen),
                        precision=p, recall=r, density=d, coverage=c,
                        dc_harmonic_mean=dc_harmonic_mean(d, c),
                        n_reference=len(ref), n_generated=len(gen), k=k)
