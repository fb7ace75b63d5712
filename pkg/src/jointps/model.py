"""Data model, model families, restrictions and likelihoods.

Strata are indexed ``0`` (complier) and ``1`` (never-taker); arms by the
assignment ``z``.  Cell parameters are stored as dense arrays so that a
whole parameter vector can be copied and compared cheaply:

* ``mu``    has shape ``(2, 2, p)``, indexed ``[stratum, arm]``
* ``sigma`` has shape ``(2, 2, p, p)``

with ``p = 1`` for the univariate family and ``p = 2`` otherwise.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import special, stats

COMPLIER = 0
NEVER_TAKER = 1
STRATUM_NAMES = ("c", "n")

_LOG_2PI = np.log(2.0 * np.pi)


class Family(str, enum.Enum):
    UNIVARIATE = "univariate"
    CONTINUOUS_BINARY = "continuous-binary"
    CONTINUOUS_CONTINUOUS = "continuous-continuous"

    @property
    def dim(self) -> int:
        return 1 if self is Family.UNIVARIATE else 2


class Restriction(str, enum.Enum):
    NONE = "none"
    ER = "er"
    PER = "per"


class ValidationError(ValueError):
    """Raised when a dataset or parameter vector breaks a model invariant."""


@dataclass(frozen=True)
class ObservedDataset:
    """Per-unit ``(z, d_obs, y1, y2)`` records of a one-sided noncompliance study."""

    z: np.ndarray
    d: np.ndarray
    y1: np.ndarray
    y2: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "z", np.asarray(self.z, dtype=np.int8))
        object.__setattr__(self, "d", np.asarray(self.d, dtype=np.int8))
        object.__setattr__(self, "y1", np.asarray(self.y1, dtype=float))
        if self.y2 is not None:
            object.__setattr__(self, "y2", np.asarray(self.y2, dtype=float))

    @property
    def n(self) -> int:
        return int(self.z.shape[0])

    @property
    def latent(self) -> np.ndarray:
        """Mask of units whose stratum is not determined by ``(z, d)``."""
        return self.z == 0

    def outcomes(self) -> np.ndarray:
        """Outcome matrix of shape ``(n, p)``."""
        if self.y2 is None:
            return self.y1[:, None]
        return np.column_stack([self.y1, self.y2])

    def drop_secondary(self) -> "ObservedDataset":
        return ObservedDataset(self.z, self.d, self.y1, None)

    def subset(self, idx) -> "ObservedDataset":
        y2 = None if self.y2 is None else self.y2[idx]
        return ObservedDataset(self.z[idx], self.d[idx], self.y1[idx], y2)


@dataclass
class Priors:
    """Hyperparameters.  Every field can be overridden from a run config.

    ``fixed_sigma`` (shape ``(2, 2, p, p)``) pins all cell covariances at
    known values; the covariance update is then skipped entirely.
    """

    mean_var: float = 100.0
    pi_a: float = 1.0
    pi_b: float = 1.0
    sigma0: tuple = (1.0, 0.0)
    Sigma0: tuple = ((100.0, 0.0), (0.0, 100.0))
    ig_shape: float = 0.01
    ig_rate: float = 0.01
    iw_df: float = 4.0
    iw_scale: tuple = ((1.0, 0.0), (0.0, 1.0))
    fixed_sigma: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        out = {
            "mean_var": self.mean_var,
            "pi_a": self.pi_a,
            "pi_b": self.pi_b,
            "sigma0": list(self.sigma0),
            "Sigma0": [list(r) for r in self.Sigma0],
            "ig_shape": self.ig_shape,
            "ig_rate": self.ig_rate,
            "iw_df": self.iw_df,
            "iw_scale": [list(r) for r in self.iw_scale],
        }
        if self.fixed_sigma is not None:
            out["fixed_sigma"] = np.asarray(self.fixed_sigma).tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Priors":
        d = dict(d)
        for key in ("sigma0",):
            if key in d:
                d[key] = tuple(d[key])
        for key in ("Sigma0", "iw_scale"):
            if key in d:
                d[key] = tuple(tuple(r) for r in d[key])
        if d.get("fixed_sigma") is not None:
            d["fixed_sigma"] = np.asarray(d["fixed_sigma"], dtype=float)
        return cls(**d)


@dataclass(frozen=True)
class ModelSpec:
    family: Family
    restriction: Restriction = Restriction.NONE
    priors: Priors = field(default_factory=Priors)

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "restriction", Restriction(self.restriction))
        if self.restriction is Restriction.PER and self.family is Family.UNIVARIATE:
            raise ValidationError("PER requires a bivariate family")

    @property
    def dim(self) -> int:
        return self.family.dim


@dataclass(frozen=True)
class CellParams:
    mu: np.ndarray
    sigma: np.ndarray


@dataclass
class Theta:
    pi_c: float
    mu: np.ndarray
    sigma: np.ndarray
    family: Family

    def __post_init__(self):
        self.family = Family(self.family)
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)

    @property
    def pi_n(self) -> float:
        return 1.0 - self.pi_c

    def cell(self, s: int, z: int) -> CellParams:
        return CellParams(self.mu[s, z], self.sigma[s, z])

    def copy(self) -> "Theta":
        return Theta(float(self.pi_c), self.mu.copy(), self.sigma.copy(), self.family)

    def check(self) -> None:
        if not 0.0 < self.pi_c < 1.0:
            raise ValidationError(f"pi_c={self.pi_c} outside (0, 1)")
        for s in (0, 1):
            for z in (0, 1):
                _check_cell(self.mu[s, z], self.sigma[s, z], self.family)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.pi_c], self.mu.ravel(), self.sigma.ravel()])

    @classmethod
    def from_vector(cls, v, family) -> "Theta":
        family = Family(family)
        p = family.dim
        v = np.asarray(v, dtype=float)
        mu = v[1 : 1 + 4 * p].reshape(2, 2, p)
        sigma = v[1 + 4 * p : 1 + 4 * p + 4 * p * p].reshape(2, 2, p, p)
        return cls(float(v[0]), mu, sigma, family)


def theta_from_cells(pi_c, cells: dict, family) -> Theta:
    """Build a :class:`Theta` from ``{(s, z): (mu, sigma)}`` with ``s`` in ``{'c', 'n'}``."""
    family = Family(family)
    p = family.dim
    mu = np.zeros((2, 2, p))
    sigma = np.zeros((2, 2, p, p))
    for (s, z), (m, S) in cells.items():
        si = STRATUM_NAMES.index(s)
        mu[si, z] = np.asarray(m, dtype=float).reshape(p)
        sigma[si, z] = np.asarray(S, dtype=float).reshape(p, p)
    return Theta(float(pi_c), mu, sigma, family)


def _check_cell(mu, sigma, family: Family) -> None:
    sigma = np.asarray(sigma)
    if not np.all(np.isfinite(mu)) or not np.all(np.isfinite(sigma)):
        raise ValidationError("non-finite cell parameters")
    if not np.allclose(sigma, sigma.T, rtol=0, atol=1e-12):
        raise ValidationError("cell covariance not symmetric")
    if family is Family.CONTINUOUS_BINARY:
        if sigma[1, 1] != 1.0:
            raise ValidationError("probit family requires sigma22 == 1")
        if not sigma[0, 0] > sigma[0, 1] ** 2:
            raise ValidationError("covariance outside region sigma11 > sigma12^2")
    if np.any(np.linalg.eigvalsh(sigma) <= 0):
        raise ValidationError("cell covariance not positive definite")


# ---------------------------------------------------------------------------
# validation

def validate_dataset(data: ObservedDataset, spec: ModelSpec) -> ObservedDataset:
    """Check the dataset against the design and model family.

    Returns the dataset projected onto the outcomes the family uses (the
    secondary outcome is dropped for the univariate family).
    """
    n = data.n
    if n < 1:
        raise ValidationError("dataset is empty")
    for name, arr in (("d", data.d), ("y1", data.y1)):
        if arr.shape[0] != n:
            raise ValidationError(f"column {name} has {arr.shape[0]} rows, expected {n}")
    bad = np.flatnonzero((data.z != 0) & (data.z != 1))
    if bad.size:
        raise ValidationError(f"unit {bad[0]}: z must be 0 or 1")
    bad = np.flatnonzero((data.d != 0) & (data.d != 1))
    if bad.size:
        raise ValidationError(f"unit {bad[0]}: d must be 0 or 1")
    bad = np.flatnonzero((data.z == 0) & (data.d == 1))
    if bad.size:
        raise ValidationError(
            f"unit {bad[0]}: one-sided noncompliance violated (z=0 with d=1)"
        )
    bad = np.flatnonzero(~np.isfinite(data.y1))
    if bad.size:
        raise ValidationError(f"unit {bad[0]}: y1 is not finite")
    if not np.any(data.z == 0) or not np.any(data.z == 1):
        raise ValidationError("both arms must be non-empty")

    family = spec.family
    if family is Family.UNIVARIATE:
        return data.drop_secondary()
    if data.y2 is None:
        raise ValidationError(f"family {family.value} requires y2")
    if data.y2.shape[0] != n:
        raise ValidationError(f"column y2 has {data.y2.shape[0]} rows, expected {n}")
    bad = np.flatnonzero(~np.isfinite(data.y2))
    if bad.size:
        raise ValidationError(f"unit {bad[0]}: y2 is not finite")
    if family is Family.CONTINUOUS_BINARY:
        bad = np.flatnonzero((data.y2 != 0) & (data.y2 != 1))
        if bad.size:
            raise ValidationError(f"unit {bad[0]}: y2 must be binary for the probit family")
    return data


# ---------------------------------------------------------------------------
# densities

def _unit_log_density(y1, y2, mu, sigma, family: Family) -> np.ndarray:
    """Vectorised log density of units ``(y1, y2)`` under one cell."""
    if family is Family.UNIVARIATE:
        s11 = sigma[0, 0]
        r = y1 - mu[0]
        return -0.5 * (_LOG_2PI + np.log(s11) + r * r / s11)
    s11, s12, s22 = sigma[0, 0], sigma[0, 1], sigma[1, 1]
    r1 = y1 - mu[0]
    if family is Family.CONTINUOUS_CONTINUOUS:
        det = s11 * s22 - s12 * s12
        r2 = y2 - mu[1]
        q = (s22 * r1 * r1 - 2.0 * s12 * r1 * r2 + s11 * r2 * r2) / det
        return -0.5 * (2.0 * _LOG_2PI + np.log(det) + q)
    # probit family: N(y1; mu1, s11) * P(y2 | y1), Y2* | y1 normal with unit scale after standardising
    m = (mu[1] + (s12 / s11) * r1) / np.sqrt(1.0 - s12 * s12 / s11)
    log_p = np.where(y2 == 1, special.log_ndtr(m), special.log_ndtr(-m))
    return -0.5 * (_LOG_2PI + np.log(s11) + r1 * r1 / s11) + log_p


def cell_log_density(y, cell: CellParams, family) -> np.ndarray | float:
    """Log density of outcome point(s) ``y`` under a single ``(s, z)`` cell.

    ``y`` is either a length-``p`` point or an ``(n, p)`` array; for the
    univariate family a scalar or 1-d array of ``y1`` values is accepted.
    """
    family = Family(family)
    sigma = np.asarray(cell.sigma, dtype=float)
    mu = np.asarray(cell.mu, dtype=float)
    if np.any(np.linalg.eigvalsh(sigma) <= 0):
        raise ValidationError("cell covariance not positive definite")
    y = np.asarray(y, dtype=float)
    scalar = y.ndim == 0 or (y.ndim == 1 and family is not Family.UNIVARIATE)
    if family is Family.UNIVARIATE:
        y1 = np.atleast_1d(y) if y.ndim < 2 else y[:, 0]
        y2 = None
    else:
        y = np.atleast_2d(y)
        y1, y2 = y[:, 0], y[:, 1]
    out = _unit_log_density(y1, y2, mu, sigma, family)
    return float(out[0]) if scalar else out


def unit_log_densities(theta: Theta, data: ObservedDataset) -> np.ndarray:
    """``(2, 2, n)`` array of log densities of every unit under every cell."""
    out = np.empty((2, 2, data.n))
    for s in (0, 1):
        for z in (0, 1):
            out[s, z] = _unit_log_density(
                data.y1, data.y2, theta.mu[s, z], theta.sigma[s, z], theta.family
            )
    return out


def _log_weights(pi_c: float) -> tuple[float, float]:
    lc = np.log(pi_c) if pi_c > 0 else -np.inf
    ln = np.log1p(-pi_c) if pi_c < 1 else -np.inf
    return lc, ln


def observed_data_log_likelihood(theta: Theta, data: ObservedDataset, spec: ModelSpec) -> float:
    """Observed-data log likelihood; assigned-to-control units enter as a two-component mixture."""
    if not 0.0 <= theta.pi_c <= 1.0:
        raise ValidationError(f"pi_c={theta.pi_c} outside [0, 1]")
    lc, ln = _log_weights(theta.pi_c)
    z, d = data.z, data.d
    total = 0.0
    m11 = (z == 1) & (d == 1)
    m10 = (z == 1) & (d == 0)
    m0 = z == 0
    fam = spec.family
    if m11.any():
        total += m11.sum() * lc + _unit_log_density(
            data.y1[m11], _sel(data.y2, m11), theta.mu[0, 1], theta.sigma[0, 1], fam
        ).sum()
    if m10.any():
        total += m10.sum() * ln + _unit_log_density(
            data.y1[m10], _sel(data.y2, m10), theta.mu[1, 1], theta.sigma[1, 1], fam
        ).sum()
    if m0.any():
        fc = _unit_log_density(data.y1[m0], _sel(data.y2, m0), theta.mu[0, 0], theta.sigma[0, 0], fam)
        fn = _unit_log_density(data.y1[m0], _sel(data.y2, m0), theta.mu[1, 0], theta.sigma[1, 0], fam)
        total += np.logaddexp(lc + fc, ln + fn).sum()
    return float(total)


def _sel(arr, mask):
    return None if arr is None else arr[mask]


# ---------------------------------------------------------------------------
# priors and complete-data posterior

def free_blocks(spec: ModelSpec):
    """Cells whose mean/covariance are free parameters under the restriction.

    Returns ``(mean_entries, cov_cells)`` where ``mean_entries`` lists
    ``(s, z, k)`` mean coordinates and ``cov_cells`` lists ``(s, z)``.
    """
    p = spec.dim
    mean_entries = [(s, z, k) for s in (0, 1) for z in (0, 1) for k in range(p)]
    cov_cells = [(s, z) for s in (0, 1) for z in (0, 1)]
    if spec.restriction is Restriction.ER:
        mean_entries = [e for e in mean_entries if not (e[0] == 1 and e[1] == 1)]
        cov_cells = [c for c in cov_cells if c != (1, 1)]
    elif spec.restriction is Restriction.PER:
        mean_entries = [e for e in mean_entries if e != (1, 1, 1)]
    return mean_entries, cov_cells


def log_prior(theta: Theta, spec: ModelSpec) -> float:
    """Log prior density of the free parameters.

    The truncated-normal prior on ``(sigma11, sigma12)`` is evaluated up to
    its (constant) truncation normaliser.
    """
    pr = spec.priors
    if not 0.0 < theta.pi_c < 1.0:
        return -np.inf
    lp = stats.beta.logpdf(theta.pi_c, pr.pi_a, pr.pi_b)
    mean_entries, cov_cells = free_blocks(spec)
    vals = np.array([theta.mu[e] for e in mean_entries])
    lp += stats.norm.logpdf(vals, 0.0, np.sqrt(pr.mean_var)).sum()
    if pr.fixed_sigma is not None:
        return float(lp)
    fam = spec.family
    for s, z in cov_cells:
        S = theta.sigma[s, z]
        if fam is Family.UNIVARIATE:
            lp += stats.invgamma.logpdf(S[0, 0], pr.ig_shape, scale=pr.ig_rate)
        elif fam is Family.CONTINUOUS_CONTINUOUS:
            lp += stats.invwishart.logpdf(S, df=pr.iw_df, scale=np.asarray(pr.iw_scale))
        else:
            lp += constrained_cov_log_prior(S[0, 0], S[0, 1], pr)
    return float(lp)


def constrained_cov_log_prior(s11: float, s12: float, priors: Priors) -> float:
    if not (s11 > 0 and s11 > s12 * s12):
        return -np.inf
    return float(
        stats.multivariate_normal.logpdf(
            [s11, s12], mean=np.asarray(priors.sigma0), cov=np.asarray(priors.Sigma0)
        )
    )


@dataclass
class AugmentedState:
    """Imputed stratum labels (``True`` = complier) and probit utilities."""

    complier: np.ndarray
    y2_star: Optional[np.ndarray] = None

    def check(self, data: ObservedDataset) -> None:
        c = np.asarray(self.complier, dtype=bool)
        if c.shape[0] != data.n:
            raise ValidationError("augmentation length does not match dataset")
        treated = data.z == 1
        bad = np.flatnonzero(treated & (c != (data.d == 1)))
        if bad.size:
            raise ValidationError(f"unit {bad[0]}: label inconsistent with (z=1, d_obs)")
        if self.y2_star is not None and data.y2 is not None:
            bad = np.flatnonzero((self.y2_star > 0) != (data.y2 == 1))
            if bad.size:
                raise ValidationError(f"unit {bad[0]}: latent utility sign disagrees with y2")


def complete_data_log_posterior(
    theta: Theta, data: ObservedDataset, aug: AugmentedState, spec: ModelSpec
) -> float:
    """Unnormalised log posterior with all stratum labels known."""
    aug.check(data)
    lp = log_prior(theta, spec)
    if data.n == 0:
        return lp
    c = np.asarray(aug.complier, dtype=bool)
    lc, ln = _log_weights(theta.pi_c)
    total = lp + c.sum() * lc + (~c).sum() * ln
    for s, mask_s in ((0, c), (1, ~c)):
        for z in (0, 1):
            m = mask_s & (data.z == z)
            if m.any():
                total += _unit_log_density(
                    data.y1[m], _sel(data.y2, m), theta.mu[s, z], theta.sigma[s, z], spec.family
                ).sum()
    return float(total)


# ---------------------------------------------------------------------------
# restrictions

def apply_restriction(theta: Theta, spec: ModelSpec) -> Theta:
    """Impose the never-taker ties of the active restriction.

    The control-arm never-taker cell is canonical: its values are copied
    into the treated-arm never-taker cell.
    """
    if spec.restriction is Restriction.NONE:
        return theta
    if spec.restriction is Restriction.PER and theta.family is Family.UNIVARIATE:
        raise ValidationError("PER requires a bivariate family")
    out = theta.copy()
    if spec.restriction is Restriction.ER:
        out.mu[1, 1] = out.mu[1, 0]
        out.sigma[1, 1] = out.sigma[1, 0]
    else:
        out.mu[1, 1, 1] = out.mu[1, 0, 1]
    return out


def restriction_holds(theta: Theta, spec: ModelSpec) -> bool:
    if spec.restriction is Restriction.ER:
        return bool(
            np.array_equal(theta.mu[1, 1], theta.mu[1, 0])
            and np.array_equal(theta.sigma[1, 1], theta.sigma[1, 0])
        )
    if spec.restriction is Restriction.PER:
        return bool(theta.mu[1, 1, 1] == theta.mu[1, 0, 1])
    return True


def with_priors(spec: ModelSpec, **changes) -> ModelSpec:
    return replace(spec, priors=replace(spec.priors, **changes))


class Variant(str, enum.Enum):
    """Named model configurations compared in the analyses."""

    UNIVARIATE = "univariate"
    UNIVARIATE_ER = "univariate-er"
    BIVARIATE = "bivariate"
    BIVARIATE_PER = "bivariate-per"

    @property
    def label(self) -> str:
        return {
            "univariate": "Univariate",
            "univariate-er": "Univariate with ER",
            "bivariate": "Bivariate",
            "bivariate-per": "Bivariate with PER",
        }[self.value]

    @property
    def bivariate(self) -> bool:
        return self in (Variant.BIVARIATE, Variant.BIVARIATE_PER)


def variant_spec(variant, binary_y2: bool, priors: Optional[Priors] = None) -> ModelSpec:
    """Model spec for a variant; bivariate variants use the probit family iff ``y2`` is binary."""
    variant = Variant(variant)
    priors = priors or Priors()
    if variant.bivariate:
        fam = Family.CONTINUOUS_BINARY if binary_y2 else Family.CONTINUOUS_CONTINUOUS
    else:
        fam = Family.UNIVARIATE
    restriction = {
        Variant.UNIVARIATE: Restriction.NONE,
        Variant.UNIVARIATE_ER: Restriction.ER,
        Variant.BIVARIATE: Restriction.NONE,
        Variant.BIVARIATE_PER: Restriction.PER,
    }[variant]
    return ModelSpec(fam, restriction, priors)


def is_binary(y) -> bool:
    y = np.asarray(y)
    return bool(np.all((y == 0) | (y == 1)))
