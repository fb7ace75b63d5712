"""Brute-force grid posterior for tiny univariate problems with known variances.

Used to validate the Gibbs sampler.  The likelihood is evaluated here
directly with ``scipy.stats`` rather than through :mod:`jointps.model`, so
the two computations share no code.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .model import Family, ModelSpec, ObservedDataset

AXES = ("pi_c", "mu_c0", "mu_n0", "mu_c1", "mu_n1")
MAX_NODES = 10**7
MAX_UNITS = 30


@dataclass(frozen=True)
class GridSpec:
    """Grid nodes per axis plus the known cell variances ``var[s, z]``."""

    nodes: dict
    var: np.ndarray

    @classmethod
    def from_ranges(cls, ranges: dict, var) -> "GridSpec":
        nodes = {}
        for name in AXES:
            lo, hi, k = ranges[name]
            if k < 3:
                raise ValueError(f"axis {name}: need at least 3 points")
            if not lo < hi:
                raise ValueError(f"axis {name}: need lo < hi")
            nodes[name] = np.linspace(lo, hi, int(k))
        return cls._checked(nodes, var)

    @classmethod
    def from_nodes(cls, nodes: dict, var) -> "GridSpec":
        """Arbitrary strictly increasing nodes; uneven spacing is handled by
        quadrature weights."""
        nodes = {k: np.atleast_1d(np.asarray(nodes[k], float)) for k in AXES}
        for k, v in nodes.items():
            if v.size > 1 and np.any(np.diff(v) <= 0):
                raise ValueError(f"axis {k}: nodes must be strictly increasing")
        return cls._checked(nodes, var)

    @classmethod
    def _checked(cls, nodes, var):
        size = _evaluated_size(nodes)
        if size > MAX_NODES:
            raise ValueError(f"grid has {size} nodes, limit is {MAX_NODES}")
        pi = nodes["pi_c"]
        if np.any((pi <= 0) | (pi >= 1)):
            raise ValueError("pi_c nodes must lie in (0, 1)")
        return cls(nodes, np.asarray(var, dtype=float).reshape(2, 2))

    @property
    def size(self) -> int:
        return _evaluated_size(self.nodes)

    def log_weights(self, axis: str) -> np.ndarray:
        """Log quadrature weight (node cell width) for each node of ``axis``."""
        v = self.nodes[axis]
        if v.size == 1:
            return np.zeros(1)
        return np.log(np.gradient(v))


def _evaluated_size(nodes) -> int:
    # nodes at which the log posterior is actually evaluated (see GridPosterior)
    k = {a: nodes[a].size for a in AXES}
    return k["pi_c"] * k["mu_c0"] * k["mu_n0"] + k["mu_c1"] + k["mu_n1"]


def padded_axis(lo: float, hi: float, core: int, outer: float, tail: int) -> np.ndarray:
    """``core`` even nodes on ``[lo, hi]`` plus ``tail`` sparser nodes on each
    side reaching out to ``lo - outer`` and ``hi + outer``."""
    mid = np.linspace(lo, hi, core)
    left = np.linspace(lo - outer, lo, tail + 1)[:-1]
    right = np.linspace(hi, hi + outer, tail + 1)[1:]
    return np.concatenate([left, mid, right])


def default_grid(data: ObservedDataset, var, pi_points: int = 41, mu_points: int = 81,
                 n_sd: float = 3.0, outer: float = 50.0, tail_points: int = 40) -> GridSpec:
    """Default grid for ``data``.

    ``pi_c`` spans (0.02, 0.98).  Each mean's core spans the range of the
    units that can belong to its cell, padded by ``n_sd`` sample SDs.  The
    control-arm means can drift into the prior when a mixture component
    empties, so their axes also get ``tail_points`` sparse nodes reaching
    ``outer`` beyond the core on each side.
    """
    var = np.asarray(var, dtype=float).reshape(2, 2)
    z, d, y = data.z, data.d, data.y1
    groups = {
        "mu_c0": z == 0,
        "mu_n0": z == 0,
        "mu_c1": (z == 1) & (d == 1),
        "mu_n1": (z == 1) & (d == 0),
    }
    cell_var = {"mu_c0": var[0, 0], "mu_n0": var[1, 0], "mu_c1": var[0, 1], "mu_n1": var[1, 1]}
    nodes = {"pi_c": np.linspace(0.02, 0.98, pi_points)}
    for name, g in groups.items():
        if g.sum() == 0:
            raise ValueError(f"no units can inform {name}; the grid would not cover its posterior")
        vals = y[g]
        sd = vals.std(ddof=1) if vals.size > 1 else np.sqrt(cell_var[name])
        lo, hi = vals.min() - n_sd * sd, vals.max() + n_sd * sd
        if name in ("mu_c0", "mu_n0") and tail_points > 0:
            nodes[name] = padded_axis(lo, hi, mu_points, outer, tail_points)
        else:
            nodes[name] = np.linspace(lo, hi, mu_points)
    return GridSpec.from_nodes(nodes, var)


@dataclass
class GridPosterior:
    """Posterior over the grid, stored as its three independent factors.

    Given the variances, the posterior factorises exactly into a
    ``(pi_c, mu_c0, mu_n0)`` block (control arm plus treated-arm stratum
    counts), a ``mu_c1`` block and a ``mu_n1`` block.  Each block is
    normalised separately; :attr:`log_prob` multiplies them back into the
    full five-dimensional table.
    """

    grid: GridSpec
    log_control: np.ndarray  # (pi_c, mu_c0, mu_n0), normalised
    log_c1: np.ndarray
    log_n1: np.ndarray

    @property
    def log_prob(self) -> np.ndarray:
        """Full normalised table with axes in ``AXES`` order."""
        return (
            self.log_control[:, :, :, None, None]
            + self.log_c1[None, None, None, :, None]
            + self.log_n1[None, None, None, None, :]
        )

    @property
    def prob(self) -> np.ndarray:
        return np.exp(self.log_prob)

    def marginal(self, axis: str) -> np.ndarray:
        if axis == "mu_c1":
            return np.exp(self.log_c1)
        if axis == "mu_n1":
            return np.exp(self.log_n1)
        i = AXES.index(axis)
        other = tuple(j for j in range(3) if j != i)
        return np.exp(logsumexp(self.log_control, axis=other))

    def mean(self, axis: str) -> float:
        return float(self.marginal(axis) @ self.grid.nodes[axis])

    @property
    def pi_c(self) -> float:
        return self.mean("pi_c")

    @property
    def tau_c(self) -> float:
        return self.mean("mu_c1") - self.mean("mu_c0")

    @property
    def tau_n(self) -> float:
        return self.mean("mu_n1") - self.mean("mu_n0")

    def edge_ratio(self) -> dict:
        """Largest end-node density relative to the modal density, per axis."""
        out = {}
        for ax in AXES:
            dens = self.marginal(ax) / np.exp(self.grid.log_weights(ax))
            out[ax] = float(max(dens[0], dens[-1]) / dens.max()) if dens.size >= 3 else 0.0
        return out


def grid_posterior(data: ObservedDataset, spec: ModelSpec, grid: GridSpec,
                   edge_tol: float = 0.02) -> GridPosterior:
    """Normalised posterior at every grid node.

    Prior: ``Beta(pi_a, pi_b)`` on ``pi_c`` and ``N(0, mean_var)`` on each
    mean; the likelihood is the observed-data mixture likelihood with the
    variances held at ``grid.var``.  Warns when an axis still carries
    appreciable probability at its end nodes.
    """
    if spec.family is not Family.UNIVARIATE:
        raise ValueError("the grid oracle covers the univariate family only")
    if data.n > MAX_UNITS:
        raise ValueError(f"grid oracle limited to {MAX_UNITS} units, got {data.n}")
    pr = spec.priors
    nd = grid.nodes
    sd = np.sqrt(grid.var)
    y, z, d = data.y1, data.z, data.d
    pi = nd["pi_c"]
    log_pi, log_1m = np.log(pi), np.log1p(-pi)
    prior_sd = np.sqrt(pr.mean_var)

    def loglik(vals, mu_nodes, s):
        # (units, nodes)
        return stats.norm.logpdf(vals[:, None], mu_nodes[None, :], s)

    y11 = y[(z == 1) & (d == 1)]
    y10 = y[(z == 1) & (d == 0)]
    y0 = y[z == 0]

    # treated arm, labels known
    lw = {ax: grid.log_weights(ax) for ax in AXES}
    lc1 = loglik(y11, nd["mu_c1"], sd[0, 1]).sum(axis=0) + stats.norm.logpdf(nd["mu_c1"], 0.0, prior_sd) + lw["mu_c1"]
    ln1 = loglik(y10, nd["mu_n1"], sd[1, 1]).sum(axis=0) + stats.norm.logpdf(nd["mu_n1"], 0.0, prior_sd) + lw["mu_n1"]

    # control arm: per-unit two-component mixture over (pi, mu_c0, mu_n0)
    fc = loglik(y0, nd["mu_c0"], sd[0, 0])
    fn = loglik(y0, nd["mu_n0"], sd[1, 0])
    lpi = stats.beta.logpdf(pi, pr.pi_a, pr.pi_b) + y11.size * log_pi + y10.size * log_1m + lw["pi_c"]
    block = (
        lpi[:, None, None]
        + (stats.norm.logpdf(nd["mu_c0"], 0.0, prior_sd) + lw["mu_c0"])[None, :, None]
        + (stats.norm.logpdf(nd["mu_n0"], 0.0, prior_sd) + lw["mu_n0"])[None, None, :]
    )
    for i in range(y0.size):
        block += np.logaddexp(
            log_pi[:, None, None] + fc[i][None, :, None],
            log_1m[:, None, None] + fn[i][None, None, :],
        )
    post = GridPosterior(grid, block - logsumexp(block), lc1 - logsumexp(lc1), ln1 - logsumexp(ln1))
    edge = {k: v for k, v in post.edge_ratio().items() if v > edge_tol}
    if edge:
        warnings.warn(f"posterior not negligible at grid edge (grid too narrow?): {edge}", stacklevel=2)
    return post
