"""Laplace-approximation inference for the latent Gaussian model.

The latent vector stacks the fixed effects and every random-effect block.
Intrinsic random walks are represented in an orthonormal basis of their
sum-to-zero subspace, which imposes the constraints exactly and leaves a
proper Gaussian prior. For fixed hyperparameters the latent posterior is
approximated by a Gaussian at its mode (Newton iterations); hyperparameters
are set to the mode of the Laplace-approximate marginal posterior
(empirical Bayes), optionally mixed over a central composite design.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.special import expit, gammaln, logit, logsumexp
from scipy.stats import norm

from . import lgm
from .likelihoods import ObservationModel, dloglik_deta, log_pmf
from .lgm import ModelSpec, build_design, panel_frame

log = logging.getLogger(__name__)

HYPER_ORDER = (
    "log_size",
    "logit_zero_weight",
    "log_prec_obs",
    "log_prec_iid",
    "log_sigma_matern",
    "log_range_matern",
    "log_prec_rw1",
    "log_prec_crw1",
)
NATURAL_NAME = {
    "log_size": "size",
    "logit_zero_weight": "zero_weight",
    "log_prec_obs": "prec_obs",
    "log_prec_iid": "prec_iid",
    "log_sigma_matern": "sigma_matern",
    "log_range_matern": "range_matern",
    "log_prec_rw1": "prec_rw1",
    "log_prec_crw1": "prec_crw1",
}
THETA_BOUNDS = (-12.0, 14.0)


class InferenceError(RuntimeError):
    """Numerical failure in the inference engine."""


class ConvergenceError(InferenceError):
    def __init__(self, message, trace=None, best=None):
        super().__init__(message)
        self.trace = trace or []
        self.best = best


def to_internal(name: str, value: float) -> float:
    return float(logit(value) if name.startswith("logit") else np.log(value))


def to_natural(name: str, value: float) -> float:
    return float(expit(value) if name.startswith("logit") else np.exp(value))


def _one_hot(index, n):
    index = np.asarray(index, dtype=int)
    return sparse.csr_matrix((np.ones(len(index)), (np.arange(len(index)), index)), shape=(len(index), n))


def _generalised_variance(R):
    # geometric mean of the marginal variances under the sum-to-zero constraint
    return float(np.exp(np.mean(np.log(np.diag(np.linalg.pinv(R))))))


@dataclass
class _Intrinsic:
    name: str
    slice: slice
    n: int
    replicates: int
    basis: np.ndarray  # n x (n - 1)
    reduced: np.ndarray  # scaled V' R V
    logdet_reduced: float


class LatentModel:
    """Data, design and prior structure of one model, independent of hyperparameters."""

    def __init__(self, panel, spec: ModelSpec):
        frame = panel_frame(panel)
        if len(frame) == 0:
            raise InferenceError("empty panel")
        self.spec = spec
        X, names, offset = build_design(frame, spec)
        self.term_names = names
        self.p = X.shape[1]
        self.y = frame["outcome"].to_numpy(dtype=float)
        self.offset = offset
        self.n = len(self.y)
        area = frame["area_index"].to_numpy(dtype=int)
        n_a = int(area.max()) + 1
        self.n_areas = n_a
        cols = [sparse.csr_matrix(X)]
        self.blocks: dict[str, slice] = {"fixed": slice(0, self.p)}
        self.intrinsic: dict[str, _Intrinsic] = {}
        start = self.p
        self.centroids = None
        for re in spec.random_effects:
            if re in ("iid_area", "matern_area"):
                cols.append(_one_hot(area, n_a))
                self.blocks[re] = slice(start, start + n_a)
                start += n_a
                if re == "matern_area":
                    cent = frame.groupby("area_index")[["x_km", "y_km"]].first().reindex(range(n_a))
                    if cent.isna().any().any():
                        raise InferenceError("every area needs a centroid for the Matérn field")
                    self.centroids = cent.to_numpy(dtype=float)
            else:
                if re == "rw1_year":
                    idx = frame["year_index"].to_numpy(dtype=int)
                    n = int(idx.max()) + 1
                    R = lgm.rw1_structure(n)
                else:
                    idx = frame["month_index"].to_numpy(dtype=int)
                    n = lgm.N_SUMMER_MONTHS
                    R = lgm.cyclic_rw1_structure(n)
                V = lgm.sum_to_zero_basis(n)
                R = R * _generalised_variance(R)
                Rr = V.T @ R @ V
                Rr = 0.5 * (Rr + Rr.T)
                Z = _one_hot(area * n + idx, n_a * n) @ sparse.kron(sparse.identity(n_a), sparse.csr_matrix(V))
                cols.append(sparse.csr_matrix(Z))
                k = n_a * (n - 1)
                self.blocks[re] = slice(start, start + k)
                self.intrinsic[re] = _Intrinsic(re, slice(start, start + k), n, n_a, V, Rr,
                                                float(np.linalg.slogdet(Rr)[1]))
                start += k
        self.dim = start
        self.A = sparse.hstack(cols, format="csr")
        self.At = self.A.T.tocsr()
        self._setup_cells(frame, X)
        self.priors = lgm.resolve_priors(spec, self.centroids if self.centroids is not None else np.zeros((1, 2)))
        names = []
        if spec.family in ("negbin", "zinb1"):
            names.append("log_size")
        if spec.family == "zinb1":
            names.append("logit_zero_weight")
        if spec.family == "gaussian":
            names.append("log_prec_obs")
        if "iid_area" in spec.random_effects:
            names.append("log_prec_iid")
        if "matern_area" in spec.random_effects:
            names += ["log_sigma_matern", "log_range_matern"]
        if "rw1_year" in spec.random_effects:
            names.append("log_prec_rw1")
        if "cyclic_rw1_month" in spec.random_effects:
            names.append("log_prec_crw1")
        self.hyper_names = tuple(names)

    def _setup_cells(self, frame, X):
        # random-effect rows only depend on the (area, year, month) cell, so
        # A'WA is assembled from per-cell weight sums instead of a sparse product
        self.X = np.ascontiguousarray(X, dtype=float)
        if self.dim == self.p:
            self.cell_of = None
            return
        key = (frame["area_index"].to_numpy(dtype=np.int64) * 10_000
               + frame["year_index"].to_numpy(dtype=np.int64) * 10 + frame["month_index"].to_numpy(dtype=np.int64))
        uniq, first, inv = np.unique(key, return_index=True, return_inverse=True)
        self.cell_of = inv.ravel()
        self.G = _one_hot(self.cell_of, len(uniq)).T.tocsr()
        re = self.A[:, self.p:]
        self.B = re[first].toarray()
        if abs(re - sparse.csr_matrix(self.B)[self.cell_of]).max() > 0:
            raise InferenceError("random-effect design is not constant within cells")

    def data_hessian(self, w) -> np.ndarray:
        """``A' diag(w) A`` as a dense matrix."""
        Xw = self.X * w[:, None]
        if self.cell_of is None:
            return self.X.T @ Xw
        p = self.p
        H = np.empty((self.dim, self.dim))
        H[:p, :p] = self.X.T @ Xw
        cross = (self.G @ Xw).T @ self.B
        H[:p, p:] = cross
        H[p:, :p] = cross.T
        wc = np.bincount(self.cell_of, weights=w, minlength=self.B.shape[0])
        H[p:, p:] = (self.B.T * wc) @ self.B
        return H

    # -- hyperparameters -------------------------------------------------

    def default_theta(self) -> np.ndarray:
        start = {
            "log_size": np.log(2.0),
            "logit_zero_weight": logit(0.75),
            "log_prec_obs": 0.0,
            "log_prec_iid": np.log(25.0),
            "log_sigma_matern": np.log(0.2),
            "log_range_matern": np.log(lgm.median_distance(self.centroids) if self.centroids is not None else 1.0),
            "log_prec_rw1": np.log(25.0),
            "log_prec_crw1": np.log(25.0),
        }
        return np.array([start[n] for n in self.hyper_names])

    def theta_from_natural(self, values: dict) -> np.ndarray:
        return np.array([to_internal(n, values[NATURAL_NAME[n]]) for n in self.hyper_names])

    def natural(self, theta) -> dict:
        return {NATURAL_NAME[n]: to_natural(n, v) for n, v in zip(self.hyper_names, theta)}

    def observation_model(self, theta) -> ObservationModel:
        h = dict(zip(self.hyper_names, theta))
        fam = self.spec.family
        if fam == "poisson":
            return ObservationModel("poisson")
        if fam == "gaussian":
            return ObservationModel("gaussian", precision=float(np.exp(h["log_prec_obs"])))
        size = float(np.exp(h["log_size"]))
        if fam == "negbin":
            return ObservationModel("negbin", size=size)
        return ObservationModel("zinb1", size=size, zero_weight=float(expit(h["logit_zero_weight"])))

    def log_hyperprior(self, theta) -> float:
        h = dict(zip(self.hyper_names, theta))
        total = 0.0
        pri = self.priors
        for name, value in h.items():
            if name == "log_size":
                total += lgm.pc_prior_logdensity(np.exp(value), pri["size"])
            elif name == "logit_zero_weight":
                m, prec = self.spec.zero_weight_prior
                total += 0.5 * np.log(prec / (2 * np.pi)) - 0.5 * prec * (value - m) ** 2
            elif name == "log_prec_obs":
                total += lgm.pc_prior_logdensity(np.exp(value), lgm.PCPriorConfig("precision", 1.0, 0.01))
            elif name == "log_prec_iid":
                total += lgm.pc_prior_logdensity(np.exp(value), pri["iid_area"])
            elif name == "log_prec_rw1":
                total += lgm.pc_prior_logdensity(np.exp(value), pri["rw1_year"])
            elif name == "log_prec_crw1":
                total += lgm.pc_prior_logdensity(np.exp(value), pri["cyclic_rw1_month"])
        if "log_sigma_matern" in h:
            total += lgm.pc_prior_logdensity((np.exp(h["log_range_matern"]), np.exp(h["log_sigma_matern"])),
                                             pri["matern_area"])
        return float(total)

    def prior_precision(self, theta) -> tuple[np.ndarray, float]:
        """Dense joint prior precision of the latent vector and its log-determinant."""
        h = dict(zip(self.hyper_names, theta))
        Q = np.zeros((self.dim, self.dim))
        fp = self.spec.fixed_precision
        Q[: self.p, : self.p] = fp * np.eye(self.p)
        logdet = self.p * np.log(fp)
        if "iid_area" in self.blocks:
            s = self.blocks["iid_area"]
            tau = np.exp(h["log_prec_iid"])
            Q[s, s] = tau * np.eye(self.n_areas)
            logdet += self.n_areas * np.log(tau)
        if "matern_area" in self.blocks:
            s = self.blocks["matern_area"]
            params = lgm.MaternParams(np.exp(h["log_sigma_matern"]), np.exp(h["log_range_matern"]),
                                      self.spec.matern_nu)
            C = lgm.matern_covariance_matrix(self.centroids, params)
            (L, lower), jitter = lgm.stable_cholesky(C, params.sigma**2)
            L = np.tril(L)
            Linv = solve_triangular(L, np.eye(len(C)), lower=True)
            Q[s, s] = Linv.T @ Linv
            logdet -= 2.0 * np.sum(np.log(np.diag(L)))
        for name, key in (("rw1_year", "log_prec_rw1"), ("cyclic_rw1_month", "log_prec_crw1")):
            if name in self.intrinsic:
                b = self.intrinsic[name]
                tau = np.exp(h[key])
                Q[b.slice, b.slice] = tau * np.kron(np.eye(b.replicates), b.reduced)
                k = b.n - 1
                logdet += b.replicates * (k * np.log(tau) + b.logdet_reduced)
        return Q, float(logdet)

    # -- likelihood pieces ------------------------------------------------

    def loglik(self, eta, obs: ObservationModel) -> float:
        return float(np.sum(log_pmf(self.y, np.exp(eta + self.offset), obs) if obs.family != "gaussian"
                            else log_pmf(self.y, eta + self.offset, obs)))

    def expand(self, x) -> dict[str, np.ndarray]:
        """Latent vector split into named blocks on the original (constrained) scale."""
        out = {"fixed": x[self.blocks["fixed"]]}
        for name, s in self.blocks.items():
            if name == "fixed":
                continue
            if name in self.intrinsic:
                b = self.intrinsic[name]
                z = x[s].reshape(b.replicates, b.n - 1)
                out[name] = z @ b.basis.T
            else:
                out[name] = x[s]
        return out


@dataclass
class LatentState:
    """Gaussian approximation of the latent posterior at fixed hyperparameters."""

    theta: np.ndarray
    mode: np.ndarray
    chol: np.ndarray  # lower Cholesky factor of the posterior precision
    logdet_precision: float
    logdet_prior: float
    loglik: float
    log_marginal: float
    iterations: int
    grad_norm: float
    trace: list = field(default_factory=list)

    def covariance_diag(self) -> np.ndarray:
        Linv = solve_triangular(self.chol, np.eye(len(self.mode)), lower=True)
        return np.sum(Linv**2, axis=0)

    def covariance(self) -> np.ndarray:
        return cho_solve((self.chol, True), np.eye(len(self.mode)))


def _data_hessian(model: LatentModel, w) -> np.ndarray:
    return model.data_hessian(w)


def laplace_state(model: LatentModel, theta, x0=None, max_iter: int = 100, step_tol: float = 1e-8,
                  grad_tol: float = 1e-6) -> LatentState:
    """Newton iterations to the latent mode at ``theta`` plus the Laplace
    approximation of the log marginal posterior of ``theta``."""
    theta = np.asarray(theta, dtype=float)
    obs = model.observation_model(theta)
    Q, logdet_Q = model.prior_precision(theta)
    x = np.zeros(model.dim) if x0 is None else np.array(x0, dtype=float)
    A = model.A

    def objective(xv):
        eta = A @ xv
        with np.errstate(over="ignore"):
            try:
                ll = model.loglik(eta, obs)
            except ValueError:
                return -np.inf, eta, -np.inf
        return ll - 0.5 * xv @ Q @ xv, eta, ll

    f, eta, ll = objective(x)
    if not np.isfinite(f):
        x = np.zeros(model.dim)
        f, eta, ll = objective(x)
    trace = []
    last_step = np.inf
    for it in range(max_iter + 1):
        d1, d2 = dloglik_deta(model.y, eta, model.offset, obs)
        g = model.At @ d1 - Q @ x
        gnorm = float(np.linalg.norm(g))
        H = Q + _data_hessian(model, -d2)
        trace.append((it, f, gnorm, last_step))
        if gnorm < grad_tol or last_step < step_tol:
            break
        if it == max_iter:
            raise ConvergenceError(f"Newton did not converge in {max_iter} iterations", trace)
        try:
            L = cholesky(H, lower=True)
        except np.linalg.LinAlgError as e:
            raise InferenceError(f"posterior precision factorisation failed: {e}") from e
        step = cho_solve((L, True), g)
        slope = g @ step
        t = 1.0
        while True:
            xn = x + t * step
            fn, etan, lln = objective(xn)
            if fn >= f + 1e-4 * t * slope or t * np.max(np.abs(step)) < step_tol:
                break
            t *= 0.5
        last_step = float(t * np.max(np.abs(step)))
        if fn < f and t * np.max(np.abs(step)) < step_tol:
            # roundoff-level change; keep the current point
            last_step = 0.0
        else:
            x, f, eta, ll = xn, fn, etan, lln
    try:
        L = cholesky(H, lower=True)
    except np.linalg.LinAlgError as e:
        raise InferenceError(f"posterior precision factorisation failed: {e}") from e
    logdet_H = 2.0 * float(np.sum(np.log(np.diag(L))))
    log_marg = model.log_hyperprior(theta) + 0.5 * logdet_Q - 0.5 * x @ Q @ x + ll - 0.5 * logdet_H
    return LatentState(theta, x, L, logdet_H, logdet_Q, ll, float(log_marg), it, gnorm, trace)


def gaussian_approximation(panel, spec: ModelSpec, hyperparameters: dict, x0=None) -> LatentState:
    """Gaussian approximation of the latent field for given natural-scale
    hyperparameters (keys as in :data:`NATURAL_NAME` values)."""
    model = LatentModel(panel, spec)
    return laplace_state(model, model.theta_from_natural(hyperparameters), x0=x0)


# ---------------------------------------------------------------------------
# hyperparameter optimisation
# ---------------------------------------------------------------------------


@dataclass
class HyperFit:
    names: tuple
    theta: np.ndarray
    hessian: np.ndarray | None
    cov: np.ndarray | None
    log_posterior: float
    state: LatentState
    iterations: int
    grad_norm: float
    evaluations: int
    ccd_points: list = field(default_factory=list)  # (weight, LatentState)

    @property
    def sd(self):
        if self.cov is None:
            return np.full(len(self.theta), np.nan)
        return np.sqrt(np.maximum(np.diag(self.cov), 0.0))


class _Objective:
    def __init__(self, model):
        self.model = model
        self.cache = {}
        self.x = None
        self.best = (np.inf, None)
        self.evaluations = 0

    def state(self, theta) -> LatentState:
        theta = np.asarray(theta, dtype=float)
        key = theta.tobytes()
        if key in self.cache:
            return self.cache[key]
        self.evaluations += 1
        st = laplace_state(self.model, theta, x0=self.x)
        self.x = st.mode
        self.cache[key] = st
        if -st.log_marginal < self.best[0]:
            self.best = (-st.log_marginal, theta.copy())
        return st

    def __call__(self, theta) -> float:
        try:
            return -self.state(theta).log_marginal
        except InferenceError:
            return 1e300

    def grad(self, theta, h=1e-5):
        theta = np.asarray(theta, dtype=float)
        f0 = self(theta)
        g = np.empty(len(theta))
        for i in range(len(theta)):
            e = np.zeros(len(theta))
            e[i] = h
            g[i] = (self(theta + e) - f0) / h
        return g


def fd_hessian(fun, theta, h=1e-2) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    m = len(theta)
    H = np.empty((m, m))
    f0 = fun(theta)
    E = np.eye(m) * h
    for i in range(m):
        H[i, i] = (fun(theta + E[i]) - 2 * f0 + fun(theta - E[i])) / h**2
        for j in range(i):
            v = (fun(theta + E[i] + E[j]) - fun(theta + E[i] - E[j])
                 - fun(theta - E[i] + E[j]) + fun(theta - E[i] - E[j])) / (4 * h**2)
            H[i, j] = H[j, i] = v
    return H


def _ccd_design(m: int, f0: float = 1.1):
    pts = [np.zeros(m)]
    if m <= 5:
        corners = np.array(np.meshgrid(*[[-1.0, 1.0]] * m, indexing="ij")).reshape(m, -1).T
        pts.extend(corners * f0)
    for i in range(m):
        for s in (-1.0, 1.0):
            z = np.zeros(m)
            z[i] = s * f0 * np.sqrt(m)
            pts.append(z)
    return pts


def optimize_hyperparameters(model: LatentModel, theta0=None, *, hessian: bool = True, ccd: bool = False,
                             maxiter: int = 200, gtol: float = 5e-3) -> HyperFit:
    """Mode of the Laplace-approximate hyperparameter posterior.

    Quasi-Newton (L-BFGS-B) on internal log/logit scales with forward
    finite-difference gradients; the curvature at the mode is a central
    finite-difference Hessian.
    """
    obj = _Objective(model)
    theta0 = model.default_theta() if theta0 is None else np.asarray(theta0, dtype=float)
    m = len(theta0)
    if m == 0:
        st = laplace_state(model, theta0)
        return HyperFit((), theta0, None, None, st.log_marginal, st, 0, 0.0, 1)
    res = minimize(obj, theta0, jac=obj.grad, method="L-BFGS-B", bounds=[THETA_BOUNDS] * m,
                   options={"maxiter": maxiter, "ftol": 1e-12, "gtol": gtol})
    theta = np.asarray(res.x, dtype=float)
    g = obj.grad(theta)
    at_bound = (np.isclose(theta, THETA_BOUNDS[0]) & (g > 0)) | (np.isclose(theta, THETA_BOUNDS[1]) & (g < 0))
    gnorm = float(np.linalg.norm(np.where(at_bound, 0.0, g)))
    if not res.success and gnorm > 10 * gtol * max(1.0, abs(res.fun)) ** 0.5:
        raise ConvergenceError(f"hyperparameter optimisation failed: {res.message}", best=obj.best)
    st = obj.state(theta)
    H = cov = None
    if hessian:
        H = fd_hessian(obj, theta)
        w, V = np.linalg.eigh(H)
        w = np.maximum(w, 1e-8)
        cov = (V / w) @ V.T
    fit = HyperFit(model.hyper_names, theta, H, cov, st.log_marginal, st, int(res.nit), gnorm, obj.evaluations)
    if ccd:
        if H is None:
            raise ValueError("CCD integration needs the Hessian")
        w, V = np.linalg.eigh(H)
        w = np.maximum(w, 1e-8)
        scale = V / np.sqrt(w)
        points = []
        for z in _ccd_design(m):
            th = theta + scale @ z
            try:
                s = obj.state(th)
            except InferenceError:
                continue
            points.append((s.log_marginal, s))
        lw = np.array([p[0] for p in points])
        wts = np.exp(lw - logsumexp(lw))
        fit.ccd_points = [(float(wt), s) for wt, (_, s) in zip(wts, points)]
    return fit


# ---------------------------------------------------------------------------
# marginals and reporting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Marginal:
    term: str
    mean: float
    sd: float


@dataclass(frozen=True)
class RRRow:
    term: str
    rr: float
    cri_lower: float
    cri_upper: float
    probs: float
    degenerate: bool = False


def coefficient_marginals(model: LatentModel, state: LatentState, mixing=None) -> list[Marginal]:
    """Gaussian marginals of the fixed effects.

    With ``mixing`` (a list of ``(weight, LatentState)``) the marginal is the
    moment-matched mixture over hyperparameter points.
    """
    p = model.p
    if not mixing:
        sd = np.sqrt(state.covariance_diag()[:p])
        return [Marginal(t, float(m), float(s)) for t, m, s in zip(model.term_names, state.mode[:p], sd)]
    w = np.array([wt for wt, _ in mixing])
    w = w / w.sum()
    means = np.array([s.mode[:p] for _, s in mixing])
    vars_ = np.array([s.covariance_diag()[:p] for _, s in mixing])
    mean = w @ means
    var = w @ (vars_ + means**2) - mean**2
    return [Marginal(t, float(m), float(np.sqrt(max(v, 0.0)))) for t, m, v in zip(model.term_names, mean, var)]


def z_value(level: float) -> float:
    return float(norm.ppf(0.5 + level / 2.0))


def rr_report(marginals, level: float = 0.95) -> list[RRRow]:
    """Relative risks, credible intervals and one-tailed probabilities."""
    z = z_value(level)
    rows = []
    for m in marginals:
        if not (np.isfinite(m.mean) and np.isfinite(m.sd)):
            raise ValueError(f"non-finite marginal for {m.term}")
        if m.sd == 0:
            rr = float(np.exp(m.mean))
            rows.append(RRRow(m.term, rr, rr, rr, 1.0, True))
            continue
        rows.append(RRRow(
            m.term,
            float(np.exp(m.mean)),
            float(np.exp(m.mean - z * m.sd)),
            float(np.exp(m.mean + z * m.sd)),
            float(norm.cdf(abs(m.mean) / m.sd)),
        ))
    return rows


def probs_from_interval(rr: float, lower: float, upper: float, level: float = 0.95) -> float:
    """One-tailed probability implied by a published RR and its credible interval."""
    sd = (np.log(upper) - np.log(lower)) / (2.0 * z_value(level))
    return float(norm.cdf(abs(np.log(rr)) / sd))


# Row order of the published result tables; intercept last.
TABLE_GROUPS = ("heat", "o3", "no2", "pm10", "q4_humidity", "income", "gini", "pct65",
                "heat:o3", "heat:no2", "heat:pm10", "heat:q4_humidity", "heat:income", "heat:gini",
                "heat:pct65", "intercept")


def table_order(terms) -> list[str]:
    def key(t):
        base = t.split("[")[0]
        return (TABLE_GROUPS.index(base), t)
    return sorted(terms, key=key)


def rr_frame(rows: list[RRRow]) -> pd.DataFrame:
    by = {r.term: r for r in rows}
    ordered = [by[t] for t in table_order(by)]
    return pd.DataFrame([(r.term, r.rr, r.cri_lower, r.cri_upper, r.probs) for r in ordered],
                        columns=["term", "rr", "cri_lower", "cri_upper", "probs"])


# ---------------------------------------------------------------------------
# WAIC draws and the full fit
# ---------------------------------------------------------------------------


def pointwise_loglik(y, lin, obs: ObservationModel) -> np.ndarray:
    """Log-likelihood of each row of ``lin`` (rows = observations, columns = draws).
    ``lin`` already includes the offset."""
    y = np.asarray(y, dtype=float)[:, None]
    if obs.family == "gaussian":
        return log_pmf(y, lin, obs)
    if obs.family == "poisson":
        return y * lin - np.exp(lin) - gammaln(y + 1.0)
    s = obs.size
    const = gammaln(y + s) - gammaln(s) - gammaln(y + 1.0) + s * np.log(s)
    nb = const - (s + y) * np.logaddexp(np.log(s), lin) + y * lin
    if obs.family == "negbin" or obs.zero_weight == 1.0:
        return nb
    pi = obs.zero_weight
    out = np.log(pi) + nb
    return np.where(y == 0, np.logaddexp(np.log1p(-pi), out), out)


def latent_draws(state: LatentState, n_draws: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((len(state.mode), n_draws))
    return state.mode[:, None] + solve_triangular(state.chol.T, z, lower=False)


def waic_from_state(model: LatentModel, state: LatentState, n_draws: int = 1000, seed: int = 0,
                    chunk: int = 2000):
    """WAIC from draws of the Gaussian approximation (hyperparameters at the mode)."""
    from .selection import waic

    obs = model.observation_model(state.theta)
    X = latent_draws(state, n_draws, seed)
    lppd = p_waic = 0.0
    for start in range(0, model.n, chunk):
        rows = slice(start, min(start + chunk, model.n))
        lin = model.A[rows] @ X + model.offset[rows, None]
        ll = pointwise_loglik(model.y[rows], lin, obs)
        _, p, l = waic(ll)
        lppd += l
        p_waic += p
    return -2.0 * (lppd - p_waic), p_waic, lppd


@dataclass
class FitResult:
    spec: ModelSpec
    hyper_names: tuple
    theta: np.ndarray
    theta_sd: np.ndarray
    hyperparameters: dict
    marginals: list
    rr_table: list
    waic: float | None
    p_waic: float | None
    lppd: float | None
    log_marginal: float
    diagnostics: dict
    random_effects: dict
    n_obs: int

    def rr_frame(self) -> pd.DataFrame:
        return rr_frame(self.rr_table)

    def marginal(self, term: str) -> Marginal:
        for m in self.marginals:
            if m.term == term:
                return m
        raise KeyError(term)

    def row(self, term: str) -> RRRow:
        for r in self.rr_table:
            if r.term == term:
                return r
        raise KeyError(term)

    def summary(self) -> dict:
        return {
            "spec": {
                "outcome_stratum": self.spec.outcome_stratum,
                "heat_kind": self.spec.heat_kind,
                "lag": self.spec.lag,
                "family": self.spec.family,
                "fixed_terms": list(self.spec.fixed_terms),
                "random_effects": list(self.spec.random_effects),
            },
            "n_obs": self.n_obs,
            "hyperparameters": {
                NATURAL_NAME[n]: {"estimate": to_natural(n, t), "internal": float(t), "internal_sd": float(s)}
                for n, t, s in zip(self.hyper_names, self.theta, self.theta_sd)
            },
            "coefficients": [{"term": m.term, "mean": m.mean, "sd": m.sd} for m in self.marginals],
            "rr_table": [asdict(r) for r in self.rr_table],
            "waic": self.waic,
            "p_waic": self.p_waic,
            "lppd": self.lppd,
            "log_marginal": self.log_marginal,
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, default=float)


def fit_model(panel, spec: ModelSpec, *, theta0=None, waic_draws: int | None = 1000, seed: int = 0,
              hessian: bool = True, ccd: bool = False, level: float = 0.95,
              model: LatentModel | None = None) -> FitResult:
    """Empirical-Bayes Laplace fit of one model."""
    model = LatentModel(panel, spec) if model is None else model
    hfit = optimize_hyperparameters(model, theta0, hessian=hessian or ccd, ccd=ccd)
    state = hfit.state
    marg = coefficient_marginals(model, state, hfit.ccd_points if ccd else None)
    rr = rr_report(marg, level)
    w = p = l = None
    if waic_draws:
        w, p, l = waic_from_state(model, state, waic_draws, seed)
    diag = {
        "outer_iterations": hfit.iterations,
        "outer_grad_norm": hfit.grad_norm,
        "evaluations": hfit.evaluations,
        "newton_iterations": state.iterations,
        "newton_grad_norm": state.grad_norm,
    }
    return FitResult(spec, model.hyper_names, hfit.theta, hfit.sd, model.natural(hfit.theta), marg, rr,
                     w, p, l, hfit.log_posterior, diag, model.expand(state.mode), model.n)
