"""Fully constrained linear unmixing by exact active-set enumeration.

Every pixel solves  min ||x - W h||^2  subject to  h >= 0, sum(h) = 1.
For each non-empty support the equality-constrained subproblem is a
tiny KKT solve that is affine in x, so all pixels of a frame can share
63 (e = 6) or 15 (e = 4) precomputed solvers applied with matrix
products. The feasible candidate with the smallest objective is the
exact global optimum; on ties (degenerate endmember matrices) the
smallest-norm candidate wins, deterministically.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cube import HyperCube
from .endmember import EndmemberSet
from .errors import DataError, ShapeMismatchError
from .netpbm import write_ppm

SL_THRESHOLD = 0.5
MAX_ENDMEMBERS = 12  # supports grow as 2^e; beyond this enumeration is misuse

_FEAS_EPS = 1e-12
_SUM_EPS = 1e-6
_TIE_EPS = 1e-12


@dataclass
class AbundanceMap:
    """Per-pixel abundances: (rows, cols, members), simplex-feasible."""

    values: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = tuple(self.labels)
        if self.values.ndim != 3 or self.values.shape[2] != len(self.labels):
            raise ShapeMismatchError(
                f"abundance shape {self.values.shape} does not match "
                f"{len(self.labels)} labels"
            )
        if self.values.size:
            if self.values.min() < -_FEAS_EPS or self.values.max() > 1.0 + 1e-9:
                raise DataError("abundances leave [0, 1]")
            sums = self.values.sum(axis=2)
            if np.max(np.abs(sums - 1.0)) > 1e-8:
                raise DataError("abundance sums deviate from one beyond 1e-8")

    @property
    def count(self) -> int:
        return len(self.labels)

    def plane(self, label: str) -> np.ndarray:
        try:
            idx = self.labels.index(label)
        except ValueError:
            raise DataError(f"no abundance plane labelled {label!r}")
        return self.values[:, :, idx]

    def to_cube(self) -> HyperCube:
        """Persistable cube: one plane per member, units 'abundance'."""
        return HyperCube(
            data=self.values,
            wavelengths=np.arange(self.count, dtype=np.float64),
            units="abundance",
            band_labels=self.labels,
        )

    @staticmethod
    def from_cube(cube: HyperCube) -> "AbundanceMap":
        if cube.units != "abundance" or cube.band_labels is None:
            raise DataError("cube does not carry labelled abundance planes")
        return AbundanceMap(values=cube.data, labels=cube.band_labels)


def _supports(e: int):
    # all non-empty subsets, ordered by bitmask: deterministic
    for bits in range(1, 2**e):
        yield tuple(i for i in range(e) if bits >> i & 1)


class _SupportSolver:
    """Precomputed affine map from correlations t = W^T x to h on a support."""

    __slots__ = ("support", "gram", "M", "q")

    def __init__(self, support, G):
        s = len(support)
        idx = np.asarray(support)
        self.support = idx
        self.gram = G[np.ix_(idx, idx)]
        kkt = np.zeros((s + 1, s + 1))
        kkt[:s, :s] = 2.0 * self.gram
        kkt[:s, s] = 1.0
        kkt[s, :s] = 1.0
        # pinv handles rank-deficient endmember subsets: min-norm solution
        inv = np.linalg.pinv(kkt)
        self.M = 2.0 * inv[:s, :s]
        self.q = inv[:s, s]

    def solve(self, T):
        # T: (e, n) correlations; returns (s, n) candidate abundances
        return self.M @ T[self.support, :] + self.q[:, None]


def _solve_block(X, W, solvers, G):
    """Exact per-pixel solves for a (bands, n) block; returns (h, objective)."""
    e = W.shape[1]
    n = X.shape[1]
    T = W.T @ X
    best_obj = np.full(n, np.inf)
    best_norm = np.full(n, np.inf)
    best_h = np.zeros((e, n))
    for solver in solvers:
        H = solver.solve(T)
        feasible = (H.min(axis=0) >= -_FEAS_EPS) & (
            np.abs(H.sum(axis=0) - 1.0) <= _SUM_EPS
        )
        if not feasible.any():
            continue
        # objective without the ||x||^2 constant, shared by all supports
        obj = np.einsum("ij,ij->j", H, solver.gram @ H) - 2.0 * np.einsum(
            "ij,ij->j", H, T[solver.support, :]
        )
        norm = np.einsum("ij,ij->j", H, H)
        # pixels not yet assigned carry an infinite best: any feasible
        # candidate wins, and the tie band must stay finite
        tie = _TIE_EPS * (1.0 + np.where(np.isfinite(best_obj), np.abs(best_obj), 0.0))
        better = feasible & (
            (obj < best_obj - tie) | ((obj <= best_obj + tie) & (norm < best_norm))
        )
        if better.any():
            cols = np.flatnonzero(better)
            best_obj[cols] = obj[cols]
            best_norm[cols] = norm[cols]
            best_h[:, cols] = 0.0
            best_h[np.ix_(solver.support, cols)] = np.clip(H[:, cols], 0.0, None)
    sq = np.einsum("ij,ij->j", X, X)
    return best_h, np.maximum(sq + best_obj, 0.0)


def unmix_pixel(W: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, float]:
    """Exact simplex-constrained least squares for a single spectrum.

    Returns (abundances, squared residual).
    """
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    _check_W(W, x.shape[0])
    G = W.T @ W
    solvers = [_SupportSolver(s, G) for s in _supports(W.shape[1])]
    h, obj = _solve_block(x, W, solvers, G)
    return h[:, 0], float(obj[0])


def _check_W(W, bands):
    if W.ndim != 2:
        raise ShapeMismatchError("endmember matrix must be (bands, members)")
    if W.shape[0] != bands:
        raise ShapeMismatchError(
            f"endmember matrix has {W.shape[0]} bands, spectra have {bands}"
        )
    if W.shape[1] < 1:
        raise ShapeMismatchError("need at least one endmember")
    if W.shape[1] > MAX_ENDMEMBERS:
        raise ShapeMismatchError(
            f"{W.shape[1]} endmembers: support enumeration is limited to "
            f"{MAX_ENDMEMBERS}"
        )
    if not np.all(np.isfinite(W)):
        raise DataError("endmember matrix contains non-finite values")


def unmix_cube(
    cube: HyperCube,
    endmembers: EndmemberSet,
    threads: int = 1,
    chunk: int = 65536,
) -> tuple[AbundanceMap, float]:
    """Unmix every pixel of a cube against the endmember set.

    Returns the abundance map and the Frobenius residual ||X - W H||_F.
    Pixels are independent; the fixed chunk grid makes the result
    byte-identical for any thread count.
    """
    wl_diff = (
        np.inf
        if endmembers.wavelengths.size != cube.bands
        else float(np.max(np.abs(endmembers.wavelengths - cube.wavelengths)))
    )
    if wl_diff > 0.05:
        raise ShapeMismatchError(
            "endmember wavelength grid does not match the cube "
            f"({endmembers.wavelengths.size} vs {cube.bands} bands)"
        )
    W = endmembers.spectra
    _check_W(W, cube.bands)
    e = W.shape[1]
    G = W.T @ W
    solvers = [_SupportSolver(s, G) for s in _supports(e)]

    X = cube.data.reshape(-1, cube.bands).T
    n = X.shape[1]
    out = np.empty((e, n))
    sq_resid = np.empty(n)
    starts = range(0, n, chunk)

    def run(start):
        stop = min(start + chunk, n)
        block = X[:, start:stop].astype(np.float64)
        h, obj = _solve_block(block, W, solvers, G)
        out[:, start:stop] = h
        sq_resid[start:stop] = obj

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, starts))
    else:
        for start in starts:
            run(start)

    values = out.T.reshape(cube.rows, cube.cols, e)
    return (
        AbundanceMap(values=values, labels=endmembers.labels),
        float(np.sqrt(sq_resid.sum())),
    )


def kkt_residual(W: np.ndarray, x: np.ndarray, h: np.ndarray) -> float:
    """Max violation of the KKT conditions at h; 0 means exactly optimal.

    Checks primal feasibility, complementary slackness against the
    support-averaged multiplier, and dual feasibility off the support.
    """
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    g = 2.0 * W.T @ (W @ h - x)
    support = h > 1e-10
    resid = abs(float(h.sum() - 1.0))
    resid = max(resid, float(-h.min()) if h.min() < 0 else 0.0)
    if support.any():
        lam = -g[support].mean()
        resid = max(resid, float(np.max(np.abs(g[support] + lam))))
        off = ~support
        if off.any():
            resid = max(resid, float(max(0.0, -np.min(g[off] + lam))))
    return resid


# ---------------------------------------------------------------------------
# spike+leaf mask


@dataclass
class SlMask:
    """Spike-plus-leaf score plane and its thresholded mask."""

    score: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.score = np.asarray(self.score, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.score.shape != self.mask.shape:
            raise ShapeMismatchError("score and mask shapes differ")


def sl_mask(
    abund: AbundanceMap,
    spike_label: str = "spike",
    leaf_label: str = "leaf",
    threshold: float = SL_THRESHOLD,
) -> SlMask:
    """Foreground where spike + leaf abundance strictly exceeds the threshold.

    With exact sum-to-one abundances and four members this is the same
    rule as 'more spike+leaf than soil+shadow'; a pixel at exactly the
    threshold is background.
    """
    score = abund.plane(spike_label) + abund.plane(leaf_label)
    return SlMask(score=score, mask=score > threshold)


# ---------------------------------------------------------------------------
# score colormap exports

_RAMP_INDEX = np.arange(256)
COLOR_RAMP = np.stack(
    [
        _RAMP_INDEX,  # red rises with the score: identity channel
        255 - np.abs(2 * _RAMP_INDEX - 255),  # green peaks mid-scale
        255 - _RAMP_INDEX,  # blue falls with the score
    ],
    axis=1,
).astype(np.uint8)


def score_to_rgb(score: np.ndarray) -> np.ndarray:
    """Map scores in [0, 1] through the 256-entry ramp (clipping outside)."""
    score = np.asarray(score, dtype=np.float64)
    idx = np.clip(np.round(score * 255.0), 0, 255).astype(np.intp)
    return COLOR_RAMP[idx]


def rgb_to_score(rgb: np.ndarray) -> np.ndarray:
    """Invert the ramp: the red channel is the scaled score."""
    rgb = np.asarray(rgb)
    return rgb[..., 0].astype(np.float64) / 255.0


def write_score_ppm(path: str | os.PathLike, source) -> None:
    """Export an SlMask score plane (or bare score array) as a PPM colormap."""
    score = source.score if isinstance(source, SlMask) else np.asarray(source)
    if score.ndim != 2:
        raise ShapeMismatchError("score plane must be 2-d")
    write_ppm(path, score_to_rgb(score))
