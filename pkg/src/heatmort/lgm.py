"""Latent Gaussian model structure: design matrix, random-effect precisions, priors.

The linear predictor for area ``i`` on day ``t`` is

    log(mu_it) = X_it @ gamma + iid_i + S(area_i) + rw1_{i, year(t)}
                 + crw1_{i, month(t)} + log(population_i)

where the fixed-effect columns follow a fixed term order (intercept, heat,
humidity, pollutant categories, socioeconomic quartiles, then heat
interactions) and the four random effects are an unstructured area effect,
a Matérn spatial field evaluated at area centroids, a first-order random walk
over years replicated per area and a cyclic first-order random walk over the
summer months replicated per area.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import pdist, squareform
from scipy.special import gamma as gamma_fn
from scipy.special import kv

# Canonical fixed-effect term order (gamma_0 ... gamma_15).
TERM_ORDER = (
    "intercept",
    "heat",
    "q4_humidity",
    "pm10",
    "no2",
    "o3",
    "income",
    "gini",
    "pct65",
    "heat:no2",
    "heat:o3",
    "heat:pm10",
    "heat:q4_humidity",
    "heat:income",
    "heat:gini",
    "heat:pct65",
)
MAIN_TERMS = TERM_ORDER[:9]
INTERACTION_TERMS = TERM_ORDER[9:]
RANDOM_EFFECTS = ("iid_area", "matern_area", "rw1_year", "cyclic_rw1_month")

PANEL_COLUMN = {
    "heat": "extreme_heat_lagged",
    "q4_humidity": "q4_humidity_lagged",
    "pm10": "pm10_cat",
    "no2": "no2_cat",
    "o3": "o3_cat",
    "income": "income_q",
    "gini": "gini_q",
    "pct65": "pct65_q",
}
# Non-reference levels; level 1 is always the reference category.
LEVELS = {
    "pm10": (2, 3),
    "no2": (2, 3),
    "o3": (2, 3, 4),
    "income": (2, 3, 4),
    "gini": (2, 3, 4),
    "pct65": (2, 3, 4),
}
DEFAULT_LAG = {"extreme_max_temp": 7, "heatwave": 3}
STRATA = ("all", "65plus", "85plus")
N_SUMMER_MONTHS = 4


class DesignError(ValueError):
    """The requested design cannot be built from the panel."""


class PrecisionError(ValueError):
    """A precision structure could not be built."""


# ---------------------------------------------------------------------------
# priors and model spec
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PCPriorConfig:
    """Penalised-complexity prior calibration.

    ``kind="precision"`` uses ``P(sd > u) = alpha``; ``kind="matern"`` uses
    ``P(range < rho0) = alpha_rho`` and ``P(sd > sigma0) = alpha_sigma``.
    ``rho0=None`` means "median inter-centroid distance", resolved at fit time.
    """

    kind: str = "precision"
    u: float = 1.0
    alpha: float = 0.01
    rho0: float | None = None
    alpha_rho: float = 0.5
    sigma0: float = 1.0
    alpha_sigma: float = 0.01

    def __post_init__(self):
        if self.kind not in ("precision", "matern"):
            raise ValueError(f"unknown PC prior kind {self.kind!r}")
        for a in (self.alpha, self.alpha_rho, self.alpha_sigma):
            if not 0.0 < a < 1.0:
                raise ValueError("PC prior tail probabilities must lie in (0, 1)")
        if self.u <= 0 or self.sigma0 <= 0 or (self.rho0 is not None and self.rho0 <= 0):
            raise ValueError("PC prior thresholds must be > 0")


def default_priors() -> dict[str, PCPriorConfig]:
    return {
        "iid_area": PCPriorConfig("precision", 1.0, 0.01),
        "rw1_year": PCPriorConfig("precision", 1.0, 0.01),
        "cyclic_rw1_month": PCPriorConfig("precision", 1.0, 0.01),
        "matern_area": PCPriorConfig("matern", rho0=None, alpha_rho=0.5, sigma0=1.0, alpha_sigma=0.01),
        # frailty sd of the negative binomial, 1/sqrt(size); base model is Poisson
        "size": PCPriorConfig("precision", 1.0, 0.5),
    }


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of one model fit."""

    outcome_stratum: str = "all"
    heat_kind: str = "extreme_max_temp"
    lag: int | None = None
    fixed_terms: tuple[str, ...] = TERM_ORDER
    random_effects: tuple[str, ...] = RANDOM_EFFECTS
    family: str = "zinb1"
    priors: dict = field(default_factory=default_priors)
    offset: bool = True
    matern_nu: float = 1.0
    fixed_precision: float = 1e-3
    # logit-normal prior on the zero-inflation weight (mean, precision)
    zero_weight_prior: tuple[float, float] = (-1.0, 0.2)

    def __post_init__(self):
        if self.outcome_stratum not in STRATA:
            raise ValueError(f"outcome_stratum must be one of {STRATA}")
        if self.heat_kind not in DEFAULT_LAG:
            raise ValueError(f"heat_kind must be one of {tuple(DEFAULT_LAG)}")
        if self.lag is None:
            object.__setattr__(self, "lag", DEFAULT_LAG[self.heat_kind])
        if int(self.lag) != self.lag or self.lag < 1:
            raise ValueError(f"lag must be a positive integer, got {self.lag!r}")
        object.__setattr__(self, "lag", int(self.lag))
        terms = tuple(self.fixed_terms)
        unknown = [t for t in terms if t not in TERM_ORDER]
        if unknown:
            raise ValueError(f"unknown fixed terms: {unknown}")
        if len(set(terms)) != len(terms):
            raise ValueError("duplicate fixed terms")
        for t in terms:
            if ":" in t:
                parent = t.split(":")[1]
                if "heat" not in terms or parent not in terms:
                    raise ValueError(f"interaction {t} requires main effects heat and {parent}")
        object.__setattr__(self, "fixed_terms", tuple(t for t in TERM_ORDER if t in terms))
        res = tuple(self.random_effects)
        bad = [r for r in res if r not in RANDOM_EFFECTS]
        if bad:
            raise ValueError(f"unknown random effects: {bad}")
        object.__setattr__(self, "random_effects", tuple(r for r in RANDOM_EFFECTS if r in res))
        priors = default_priors()
        priors.update(self.priors or {})
        object.__setattr__(self, "priors", priors)
        if self.family not in ("poisson", "negbin", "zinb1", "gaussian"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.matern_nu <= 0:
            raise ValueError("matern_nu must be > 0")

    def with_terms(self, terms) -> "ModelSpec":
        return replace(self, fixed_terms=tuple(terms))

    # -- plain-text key/value round trip ------------------------------------

    def to_config(self) -> str:
        cp = configparser.ConfigParser()
        cp["model"] = {
            "outcome_stratum": self.outcome_stratum,
            "heat_kind": self.heat_kind,
            "lag": str(self.lag),
            "fixed_terms": ", ".join(self.fixed_terms),
            "random_effects": ", ".join(self.random_effects),
            "family": self.family,
            "offset": str(self.offset).lower(),
            "matern_nu": repr(self.matern_nu),
            "fixed_precision": repr(self.fixed_precision),
            "zero_weight_prior": f"{self.zero_weight_prior[0]!r} {self.zero_weight_prior[1]!r}",
        }
        cp["priors"] = {name: _prior_to_text(p) for name, p in self.priors.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_config(cls, text: str) -> "ModelSpec":
        cp = configparser.ConfigParser()
        cp.read_string(text)
        return cls.from_sections(
            dict(cp["model"]) if cp.has_section("model") else {},
            dict(cp["priors"]) if cp.has_section("priors") else {},
        )

    @classmethod
    def from_sections(cls, model: dict, priors: dict | None = None) -> "ModelSpec":
        known = {
            "outcome_stratum", "heat_kind", "lag", "fixed_terms", "random_effects",
            "family", "offset", "matern_nu", "fixed_precision", "zero_weight_prior",
        }
        unknown = set(model) - known
        if unknown:
            raise ValueError(f"unknown model keys: {sorted(unknown)}")
        kw = {}
        for key in ("outcome_stratum", "heat_kind", "family"):
            if key in model:
                kw[key] = model[key].strip()
        if "lag" in model:
            kw["lag"] = int(model["lag"])
        for key in ("fixed_terms", "random_effects"):
            if key in model:
                kw[key] = tuple(t.strip() for t in model[key].split(",") if t.strip())
        if "offset" in model:
            kw["offset"] = model["offset"].strip().lower() in ("1", "true", "yes", "on")
        for key in ("matern_nu", "fixed_precision"):
            if key in model:
                kw[key] = float(model[key])
        if "zero_weight_prior" in model:
            m, p = model["zero_weight_prior"].split()
            kw["zero_weight_prior"] = (float(m), float(p))
        if priors:
            unknown = set(priors) - set(default_priors())
            if unknown:
                raise ValueError(f"unknown prior keys: {sorted(unknown)}")
            kw["priors"] = {name: _prior_from_text(v) for name, v in priors.items()}
        return cls(**kw)


def _prior_to_text(p: PCPriorConfig) -> str:
    if p.kind == "precision":
        return f"precision {p.u!r} {p.alpha!r}"
    rho0 = "auto" if p.rho0 is None else repr(p.rho0)
    return f"matern {rho0} {p.alpha_rho!r} {p.sigma0!r} {p.alpha_sigma!r}"


def _prior_from_text(text: str) -> PCPriorConfig:
    parts = text.split()
    if parts[0] == "precision" and len(parts) == 3:
        return PCPriorConfig("precision", float(parts[1]), float(parts[2]))
    if parts[0] == "matern" and len(parts) == 5:
        rho0 = None if parts[1] == "auto" else float(parts[1])
        return PCPriorConfig("matern", rho0=rho0, alpha_rho=float(parts[2]),
                             sigma0=float(parts[3]), alpha_sigma=float(parts[4]))
    raise ValueError(f"cannot parse prior {text!r}")


# ---------------------------------------------------------------------------
# design matrix
# ---------------------------------------------------------------------------


def term_columns(spec: ModelSpec) -> list[str]:
    """Column names implied by ``spec``, in canonical order."""
    names = []
    for t in spec.fixed_terms:
        base = t.split(":")[-1]
        if base in LEVELS:
            names.extend(f"{t}[{k}]" for k in LEVELS[base])
        else:
            names.append(t)
    return names


def build_design(panel, spec: ModelSpec):
    """Dummy-coded design matrix, column names and offset vector.

    ``panel`` is a :class:`heatmort.data_model.Panel` or a DataFrame with the
    panel columns. Reference categories are dropped; interaction columns are
    products of the heat indicator and each non-reference dummy.
    """
    frame = getattr(panel, "frame", panel)
    n = len(frame)
    cols, names, empty = [], [], []
    heat = frame[PANEL_COLUMN["heat"]].to_numpy(dtype=float) if "heat" in spec.fixed_terms else None
    for t in spec.fixed_terms:
        if t == "intercept":
            cols.append(np.ones(n))
            names.append(t)
            continue
        base = t.split(":")[-1]
        values = frame[PANEL_COLUMN[base]].to_numpy(dtype=float)
        if base in LEVELS:
            raw = [(f"{t}[{k}]", (values == k).astype(float), f"{PANEL_COLUMN[base]}={k}") for k in LEVELS[base]]
        else:
            raw = [(t, values.astype(float), f"{PANEL_COLUMN[base]}=1")]
        for name, col, cell in raw:
            if ":" in t:
                col = col * heat
                cell = f"heat:{cell}"
            if not np.any(col != 0):
                empty.append(cell)
            cols.append(col)
            names.append(name)
    if empty:
        raise DesignError(f"design has empty cells: {', '.join(empty)}")
    X = np.column_stack(cols) if cols else np.zeros((n, 0))
    if X.shape[1] and np.linalg.matrix_rank(X) < X.shape[1]:
        raise DesignError(f"design is rank deficient ({np.linalg.matrix_rank(X)} < {X.shape[1]} columns)")
    if spec.offset:
        offset = frame["log_offset"].to_numpy(dtype=float)
    else:
        offset = np.zeros(n)
    return X, names, offset


# ---------------------------------------------------------------------------
# precision structures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PrecisionBlock:
    """Structure matrix of one random effect (hyperparameter scale factored out
    for the intrinsic blocks)."""

    kind: str
    dimension: int
    matrix: object  # scipy sparse or dense ndarray
    rank_deficiency: int
    constraints: np.ndarray | None
    replicate_count: int = 1

    def dense(self) -> np.ndarray:
        m = self.matrix
        return m.toarray() if sparse.issparse(m) else np.asarray(m)

    def quadratic_form(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(v @ (self.matrix @ v))


def _replicate(R, replicate_count):
    return sparse.kron(sparse.identity(replicate_count, format="csr"), sparse.csr_matrix(R), format="csr")


def _sum_to_zero_rows(n, replicate_count):
    return np.kron(np.eye(replicate_count), np.ones((1, n)))


def rw1_structure(n: int) -> np.ndarray:
    if n < 2:
        raise PrecisionError(f"RW1 needs at least 2 nodes, got {n}")
    R = np.zeros((n, n))
    for k in range(n - 1):
        R[k, k] += 1
        R[k + 1, k + 1] += 1
        R[k, k + 1] -= 1
        R[k + 1, k] -= 1
    return R


def cyclic_rw1_structure(n: int) -> np.ndarray:
    if n < 3:
        raise PrecisionError(f"cyclic RW1 needs at least 3 nodes, got {n}")
    R = 2.0 * np.eye(n)
    for k in range(n):
        R[k, (k + 1) % n] -= 1
        R[(k + 1) % n, k] -= 1
    return R


def rw1_precision(n: int, replicate_count: int = 1) -> PrecisionBlock:
    R = rw1_structure(n)
    return PrecisionBlock("rw1", n * replicate_count, _replicate(R, replicate_count),
                          replicate_count, _sum_to_zero_rows(n, replicate_count), replicate_count)


def cyclic_rw1_precision(n: int, replicate_count: int = 1) -> PrecisionBlock:
    R = cyclic_rw1_structure(n)
    return PrecisionBlock("cyclic_rw1", n * replicate_count, _replicate(R, replicate_count),
                          replicate_count, _sum_to_zero_rows(n, replicate_count), replicate_count)


def sum_to_zero_basis(n: int) -> np.ndarray:
    """Orthonormal ``n x (n-1)`` basis of the vectors summing to zero."""
    centering = np.eye(n) - 1.0 / n
    q, _ = np.linalg.qr(centering[:, : n - 1])
    return q


# ---------------------------------------------------------------------------
# Matérn
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MaternParams:
    """Marginal sd, range (distance of roughly 0.1 correlation, km) and smoothness."""

    sigma: float
    rho_km: float
    nu: float = 1.0

    def __post_init__(self):
        if not (self.sigma > 0 and self.rho_km > 0 and self.nu > 0):
            raise ValueError(f"Matérn parameters must be > 0: {self}")

    @property
    def kappa(self) -> float:
        return np.sqrt(8.0 * self.nu) / self.rho_km


def matern_cov(d_km, params: MaternParams):
    """Matérn covariance at distance ``d_km`` (vectorised)."""
    d = np.asarray(d_km, dtype=float)
    nu = params.nu
    x = params.kappa * d
    with np.errstate(invalid="ignore", over="ignore"):
        val = params.sigma**2 * 2.0 ** (1.0 - nu) / gamma_fn(nu) * x**nu * kv(nu, x)
    val = np.where(x == 0, params.sigma**2, val)
    # kv underflows to 0 far away; x**nu*kv can be nan when kv is exactly 0 and x huge
    val = np.where(np.isnan(val), 0.0, val)
    return val if val.ndim else float(val)


def matern_covariance_matrix(centroids, params: MaternParams) -> np.ndarray:
    pts = np.asarray(centroids, dtype=float).reshape(-1, 2)
    if len(pts) > 1 and np.min(pdist(pts)) == 0:
        raise PrecisionError("duplicate centroids")
    return matern_cov(squareform(pdist(pts)) if len(pts) > 1 else np.zeros((1, 1)), params)


def stable_cholesky(C: np.ndarray, scale: float):
    """Cholesky factor of ``C`` with escalating diagonal jitter."""
    n = len(C)
    try:
        return cho_factor(C, lower=True), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-10 * scale
    while jitter <= 1e-2 * scale:
        try:
            return cho_factor(C + jitter * np.eye(n), lower=True), jitter
        except np.linalg.LinAlgError:
            jitter *= 10
    raise PrecisionError("covariance is not positive definite even after jitter")


def matern_field_precision(centroids, params: MaternParams) -> PrecisionBlock:
    C = matern_covariance_matrix(centroids, params)
    factor, _ = stable_cholesky(C, params.sigma**2)
    Q = cho_solve(factor, np.eye(len(C)))
    Q = 0.5 * (Q + Q.T)
    return PrecisionBlock("matern", len(C), Q, 0, None)


def median_distance(centroids) -> float:
    pts = np.asarray(centroids, dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        return 1.0
    return float(np.median(pdist(pts)))


# ---------------------------------------------------------------------------
# PC priors
# ---------------------------------------------------------------------------


def pc_prior_logdensity(value, config: PCPriorConfig, *, spatial_dim: int = 2) -> float:
    """Log PC-prior density on the internal log scale.

    For ``kind="precision"`` ``value`` is a precision ``tau``; the returned
    density is that of ``log(tau)`` with ``sd = tau**-0.5 ~ Exp(lambda)``,
    ``lambda = -log(alpha) / u``.

    For ``kind="matern"`` ``value`` is ``(range, sd)``; the returned density is
    the joint density of ``(log(range), log(sd))``.
    """
    if config.kind == "precision":
        tau = float(value)
        if not (tau > 0 and np.isfinite(tau)):
            raise ValueError(f"precision must be finite and > 0, got {value!r}")
        lam = -np.log(config.alpha) / config.u
        sd = tau**-0.5
        return float(np.log(lam) - lam * sd + np.log(sd / 2.0))
    rho, sigma = (float(v) for v in value)
    if not (rho > 0 and sigma > 0):
        raise ValueError(f"Matérn range and sd must be > 0, got {value!r}")
    if config.rho0 is None:
        raise ValueError("Matérn PC prior needs a resolved rho0")
    half = spatial_dim / 2.0
    lam1 = -np.log(config.alpha_rho) * config.rho0**half
    lam2 = -np.log(config.alpha_sigma) / config.sigma0
    # density of log(rho): half * lam1 * rho^-half * exp(-lam1 * rho^-half)
    log_rho = np.log(half * lam1) - half * np.log(rho) - lam1 * rho**-half
    log_sigma = np.log(lam2) + np.log(sigma) - lam2 * sigma
    return float(log_rho + log_sigma)


def pc_precision_rate(config: PCPriorConfig) -> float:
    return float(-np.log(config.alpha) / config.u)


def resolve_priors(spec: ModelSpec, centroids) -> dict[str, PCPriorConfig]:
    priors = dict(spec.priors)
    mp = priors["matern_area"]
    if mp.rho0 is None:
        priors["matern_area"] = replace(mp, rho0=median_distance(centroids))
    return priors


def panel_frame(panel) -> pd.DataFrame:
    return getattr(panel, "frame", panel)
