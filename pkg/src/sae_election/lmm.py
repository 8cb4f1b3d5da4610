"""REML fitting of the polling-bias mixed models.

Model I::

    y = b0 + b1 * I_rep + v_ik + e,      v_i ~ N(0, G),  e ~ N(0, tau^2)

Model III adds a pollster intercept ``u_j ~ N(0, sigma_u^2)``.

``G = [[sd^2, rho*sd*sr], [rho*sd*sr, sr^2]]``. The REML criterion is
evaluated without forming the N x N marginal covariance: Model I reduces to
per-state 2x2 algebra on sufficient statistics, Model III goes through the
penalized normal equations written with the relative covariance factor
``Lambda`` (``G_full = Lambda Lambda^T``), which stays well conditioned as
variance components approach zero.
"""

from __future__ import annotations

import json
import math
import warnings
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import linalg, optimize

from .data import DEM, REP, ResponseRecord

MODEL_I = "ModelI"
MODEL_III = "ModelIII"
VARIANTS = (MODEL_I, MODEL_III)

PARAM_NAMES = {
    MODEL_I: ("beta0", "beta1", "sigma_d", "rho", "sigma_r", "tau"),
    MODEL_III: ("beta0", "beta1", "sigma_u", "sigma_d", "rho", "sigma_r", "tau"),
}

# Box for the unconstrained parameters: log-scales and atanh(rho).
LOG_BOUNDS = (-20.0, 5.0)
ATANH_BOUNDS = (-7.0, 7.0)

# X = Z_i @ _C within each state: DEM row (1, 0), REP row (1, 1).
_C = np.array([[1.0, 0.0], [1.0, 1.0]])


class ModelError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    variant: str = MODEL_I

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    @property
    def has_pollster(self) -> bool:
        return self.variant == MODEL_III


@dataclass(frozen=True)
class VarianceComponents:
    sigma_d: float
    sigma_r: float
    rho: float
    tau: float
    sigma_u: float | None = None

    def __post_init__(self):
        if self.sigma_d < 0 or self.sigma_r < 0:
            raise ValueError("state standard deviations must be nonnegative")
        if not -1.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (-1, 1), got {self.rho}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.sigma_u is not None and self.sigma_u < 0:
            raise ValueError("sigma_u must be nonnegative")

    @property
    def G(self) -> np.ndarray:
        c = self.rho * self.sigma_d * self.sigma_r
        return np.array([[self.sigma_d**2, c], [c, self.sigma_r**2]])

    @property
    def G_chol(self) -> np.ndarray:
        """Lower-triangular ``L`` with ``L @ L.T == G`` (valid on the boundary)."""
        return np.array([
            [self.sigma_d, 0.0],
            [self.rho * self.sigma_r, self.sigma_r * math.sqrt(1.0 - self.rho**2)],
        ])

    def to_theta(self) -> np.ndarray:
        th = [math.log(self.sigma_d), math.log(self.sigma_r), math.atanh(self.rho), math.log(self.tau)]
        if self.sigma_u is not None:
            th.append(math.log(self.sigma_u))
        return np.array(th)

    @classmethod
    def from_theta(cls, theta) -> VarianceComponents:
        th = np.asarray(theta, dtype=float)
        sigma_u = float(np.exp(th[4])) if th.size == 5 else None
        return cls(float(np.exp(th[0])), float(np.exp(th[1])), float(np.tanh(th[2])),
                   float(np.exp(th[3])), sigma_u)


@dataclass
class DesignMatrices:
    """Response vector plus the index maps that define X and Z."""

    y: np.ndarray
    state_idx: np.ndarray
    cand_idx: np.ndarray
    states: tuple[str, ...]
    pollster_idx: np.ndarray | None = None
    pollsters: tuple[str, ...] = ()
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.state_idx = np.asarray(self.state_idx, dtype=np.intp)
        self.cand_idx = np.asarray(self.cand_idx, dtype=np.intp)
        if self.pollster_idx is not None:
            self.pollster_idx = np.asarray(self.pollster_idx, dtype=np.intp)
        n = self.y.size
        if self.state_idx.size != n or self.cand_idx.size != n:
            raise ValueError("index maps must match the response length")
        if not np.isin(self.cand_idx, (0, 1)).all():
            raise ValueError("candidate indicator must be 0 or 1")

    @classmethod
    def from_responses(cls, records: Sequence[ResponseRecord], with_pollster: bool = True) -> DesignMatrices:
        states = tuple(sorted({r.state for r in records}))
        s_pos = {s: i for i, s in enumerate(states)}
        y = np.array([r.y for r in records])
        si = np.array([s_pos[r.state] for r in records], dtype=np.intp)
        ci = np.array([r.candidate_indicator for r in records], dtype=np.intp)
        if with_pollster:
            pollsters = tuple(sorted({r.pollster for r in records}))
            p_pos = {p: j for j, p in enumerate(pollsters)}
            pi = np.array([p_pos[r.pollster] for r in records], dtype=np.intp)
        else:
            pollsters, pi = (), None
        return cls(y, si, ci, states, pi, pollsters)

    @property
    def n_obs(self) -> int:
        return self.y.size

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def X(self) -> np.ndarray:
        return np.column_stack([np.ones(self.n_obs), self.cand_idx.astype(float)])

    def Z_state(self) -> np.ndarray:
        Z = np.zeros((self.n_obs, 2 * self.n_states))
        Z[np.arange(self.n_obs), 2 * self.state_idx + self.cand_idx] = 1.0
        return Z

    def Z_pollster(self) -> np.ndarray:
        if self.pollster_idx is None:
            raise ModelError("design has no pollster map")
        Z = np.zeros((self.n_obs, len(self.pollsters)))
        Z[np.arange(self.n_obs), self.pollster_idx] = 1.0
        return Z

    def with_y(self, y) -> DesignMatrices:
        """Same design, new response; structural caches are carried over."""
        out = replace(self, y=np.asarray(y, dtype=float), _cache={})
        for key in ("counts", "lcp", "mme_struct"):
            if key in self._cache:
                out._cache[key] = self._cache[key]
        return out

    def counts(self) -> np.ndarray:
        """Per-state observation counts, shape (S, 2) for (DEM, REP)."""
        if "counts" not in self._cache:
            n = np.zeros((self.n_states, 2))
            np.add.at(n, (self.state_idx, self.cand_idx), 1.0)
            self._cache["counts"] = n
        return self._cache["counts"]

    def cell_sums(self) -> np.ndarray:
        if "sums" not in self._cache:
            s = np.zeros((self.n_states, 2))
            np.add.at(s, (self.state_idx, self.cand_idx), self.y)
            self._cache["sums"] = s
        return self._cache["sums"]

    def cell_means(self) -> np.ndarray:
        if "means" not in self._cache:
            self._cache["means"] = self.cell_sums() / self.counts()
        return self._cache["means"]

    def within_ss(self) -> float:
        """Sum of squared deviations from the (state, candidate) cell means."""
        if "wss" not in self._cache:
            r = self.y - self.cell_means()[self.state_idx, self.cand_idx]
            self._cache["wss"] = float(r @ r)
        return self._cache["wss"]

    def log_count_prod(self) -> float:
        if "lcp" not in self._cache:
            self._cache["lcp"] = float(np.log(self.counts()).sum())
        return self._cache["lcp"]

    def validate(self, spec: ModelSpec) -> None:
        if self.n_obs <= 2:
            raise ModelError("need more than two observations")
        n = self.counts()
        bad = [self.states[i] for i in np.flatnonzero((n == 0).any(axis=1))]
        if bad:
            raise ModelError(f"states lacking an observation for both candidates: {', '.join(bad)}")
        if spec.has_pollster and self.pollster_idx is None:
            raise ModelError("Model III needs a pollster map")


# ---------------------------------------------------------------------------
# Model I: per-state closed forms

def _block_terms(vc: VarianceComponents, design: DesignMatrices):
    """Per-state cell-mean covariance ``M_i = G + tau^2 D_i^{-1}`` and its determinant.

    ``Z_i^T V_i^{-1} Z_i = M_i^{-1}``, so every Model I quantity reduces to 2x2
    algebra on the cell means. Working with within-cell sums of squares instead
    of ``y^T y`` keeps the quadratic form accurate as tau shrinks.
    """
    n = design.counts()
    t2 = vc.tau**2
    g01 = vc.rho * vc.sigma_d * vc.sigma_r
    m00 = vc.sigma_d**2 + t2 / n[:, 0]
    m11 = vc.sigma_r**2 + t2 / n[:, 1]
    det = m00 * m11 - g01 * g01
    return t2, g01, m00, m11, det


def _block_objective(vc, design):
    t2, g01, m00, m11, det = _block_terms(vc, design)
    if np.any(det <= 0):
        return math.inf, None
    n = design.counts()
    ybar = design.cell_means()
    y0, y1 = ybar[:, 0], ybar[:, 1]
    logdet_v = ((design.n_obs - 2 * n.shape[0]) * math.log(t2) + design.log_count_prod()
                + np.log(det).sum())
    # M^{-1} = [[m11, -g01], [-g01, m00]] / det, summed over states
    a00, a01, a11 = m11 / det, -g01 / det, m00 / det
    w00, w01, w11 = a00.sum(), a01.sum(), a11.sum()
    my0 = a00 * y0 + a01 * y1
    my1 = a01 * y0 + a11 * y1
    w0, w1 = my0.sum(), my1.sum()
    yvy = design.within_ss() / t2 + (y0 * my0).sum() + (y1 * my1).sum()
    # X = Z C with C = [[1, 0], [1, 1]]
    xvx = np.array([[w00 + 2 * w01 + w11, w01 + w11], [w01 + w11, w11]])
    xvy = np.array([w0 + w1, w1])
    return _finish(logdet_v, xvx, xvy, yvy)


def _finish(logdet_v, xvx, xvy, yvy):
    if not (np.isfinite(logdet_v) and np.isfinite(xvx).all() and np.isfinite(xvy).all() and np.isfinite(yvy)):
        return math.inf, None
    # X^T V^-1 X is 2x2; solve it in closed form
    a, b, d = float(xvx[0, 0]), float(0.5 * (xvx[0, 1] + xvx[1, 0])), float(xvx[1, 1])
    det = a * d - b * b
    if not (a > 0 and det > 0 and det > 1e-14 * a * d):
        raise ModelError("X^T V^-1 X is singular")
    beta = np.array([d * xvy[0] - b * xvy[1], a * xvy[1] - b * xvy[0]]) / det
    quad = yvy - beta @ xvy
    return logdet_v + math.log(det) + quad, beta


def _block_blups(vc, design, beta):
    t2, g01, m00, m11, det = _block_terms(vc, design)
    ybar = design.cell_means()
    r0 = ybar[:, 0] - beta[0]
    r1 = ybar[:, 1] - (beta[0] + beta[1])
    # v = G M^{-1} r
    q0 = (m11 * r0 - g01 * r1) / det
    q1 = (m00 * r1 - g01 * r0) / det
    g00, g11 = vc.sigma_d**2, vc.sigma_r**2
    return np.column_stack([g00 * q0 + g01 * q1, g01 * q0 + g11 * q1])


# ---------------------------------------------------------------------------
# General path: penalized normal equations in Lambda form

def _mme_struct(design: DesignMatrices, with_pollster: bool):
    key = ("mme_struct", with_pollster)
    cache = design._cache.setdefault("mme_struct", {})
    if key not in cache:
        Z = design.Z_state()
        if with_pollster:
            Z = np.hstack([Z, design.Z_pollster()])
        X = design.X
        cache[key] = (Z, X, Z.T @ Z, Z.T @ X, X.T @ X)
    return cache[key]


def _lambda(vc: VarianceComponents, n_states: int, n_pollsters: int) -> np.ndarray:
    q = 2 * n_states + n_pollsters
    lam = np.zeros((q, q))
    L = vc.G_chol
    for i in range(n_states):
        lam[2 * i:2 * i + 2, 2 * i:2 * i + 2] = L
    if n_pollsters:
        idx = np.arange(2 * n_states, q)
        lam[idx, idx] = vc.sigma_u
    return lam


def _mme_terms(vc, design, with_pollster):
    Z, X, ZtZ, ZtX, XtX = _mme_struct(design, with_pollster)
    y = design.y
    n_p = len(design.pollsters) if with_pollster else 0
    lam = _lambda(vc, design.n_states, n_p)
    t2 = vc.tau**2
    A = t2 * np.eye(lam.shape[0]) + lam.T @ ZtZ @ lam
    cf = linalg.cho_factor(A, lower=True)
    Zty = Z.T @ y
    lzx = lam.T @ ZtX
    lzy = lam.T @ Zty
    sol = linalg.cho_solve(cf, np.column_stack([lzx, lzy]))
    xvx = (XtX - lzx.T @ sol[:, :2]) / t2
    xvy = (X.T @ y - lzx.T @ sol[:, 2]) / t2
    yvy = (y @ y - lzy @ sol[:, 2]) / t2
    logdet_v = (design.n_obs - lam.shape[0]) * math.log(t2) + 2.0 * np.log(np.diag(cf[0])).sum()
    return lam, cf, Zty, ZtX, logdet_v, xvx, xvy, yvy


def _mme_objective(vc, design, with_pollster):
    try:
        _, _, _, _, logdet_v, xvx, xvy, yvy = _mme_terms(vc, design, with_pollster)
    except (linalg.LinAlgError, ValueError):
        return math.inf, None
    return _finish(logdet_v, xvx, xvy, yvy)


def _mme_blups(vc, design, beta, with_pollster):
    lam, cf, Zty, ZtX, *_ = _mme_terms(vc, design, with_pollster)
    return lam @ linalg.cho_solve(cf, lam.T @ (Zty - ZtX @ beta))


# ---------------------------------------------------------------------------

def _objective_and_beta(vc, design, spec, method="auto"):
    if method == "auto":
        method = "mme" if spec.has_pollster else "block"
    if method == "block":
        if spec.has_pollster:
            raise ValueError("block evaluation only applies to Model I")
        return _block_objective(vc, design)
    return _mme_objective(vc, design, spec.has_pollster)


def reml_objective(vc: VarianceComponents, design: DesignMatrices, spec: ModelSpec | None = None,
                   method: str = "auto") -> float:
    """-2 x restricted log-likelihood, without the 2*pi constant.

    ``log|V| + log|X^T V^-1 X| + r^T V^-1 r`` with ``r = y - X beta_GLS``.
    Returns ``inf`` when the value is not finite.
    """
    if spec is None:
        spec = ModelSpec(MODEL_III if vc.sigma_u is not None else MODEL_I)
    with np.errstate(all="ignore"):
        val, _ = _objective_and_beta(vc, design, spec, method)
    return float(val) if np.isfinite(val) else math.inf


def gls_beta(vc, design, spec) -> np.ndarray:
    _, beta = _objective_and_beta(vc, design, spec)
    if beta is None:
        raise ModelError("objective not finite at these variance components")
    return beta


def compute_blups(beta, vc: VarianceComponents, design: DesignMatrices, spec: ModelSpec | None = None,
                  method: str = "auto"):
    """BLUPs of the state effects (S, 2) and pollster effects (J,) at fixed parameters.

    Pollster effects are an empty array for Model I.
    """
    if spec is None:
        spec = ModelSpec(MODEL_III if vc.sigma_u is not None else MODEL_I)
    beta = np.asarray(beta, dtype=float)
    if method == "auto":
        method = "mme" if spec.has_pollster else "block"
    if method == "block":
        v = _block_blups(vc, design, beta)
        return v, np.zeros(0)
    try:
        b = _mme_blups(vc, design, beta, spec.has_pollster)
    except linalg.LinAlgError as exc:
        raise ModelError(f"mixed-model equations singular: {exc}") from None
    k = 2 * design.n_states
    return b[:k].reshape(-1, 2), b[k:]


# ---------------------------------------------------------------------------
# Fitting

@dataclass(frozen=True)
class FitOptions:
    restarts: int = 3
    max_evals: int = 2000
    xatol: float = 1e-6
    fatol: float = 1e-9
    seed: int = 0
    restart_scale: float = 0.5
    initial_step: float = 0.5


@dataclass
class ModelFit:
    variant: str
    beta: tuple[float, float]
    vc: VarianceComponents
    v_hat: dict[str, tuple[float, float]]
    u_hat: dict[str, float]
    reml_objective: float
    converged: bool
    n_obs: int
    optimizer_trace: list[dict]
    options: FitOptions = FitOptions()
    fingerprint: str | None = None

    @property
    def reml_loglik(self) -> float:
        return -0.5 * self.reml_objective

    @property
    def beta0(self) -> float:
        return self.beta[0]

    @property
    def beta1(self) -> float:
        return self.beta[1]

    @property
    def theta(self) -> np.ndarray:
        return self.vc.to_theta()

    def params(self) -> dict[str, float]:
        """Estimates in reporting order for this variant."""
        vals = {"beta0": self.beta[0], "beta1": self.beta[1], "sigma_d": self.vc.sigma_d,
                "rho": self.vc.rho, "sigma_r": self.vc.sigma_r, "tau": self.vc.tau}
        if self.variant == MODEL_III:
            vals["sigma_u"] = self.vc.sigma_u
        return {k: vals[k] for k in PARAM_NAMES[self.variant]}

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "beta0": self.beta[0],
            "beta1": self.beta[1],
            "vc": asdict(self.vc),
            "v_hat": {k: list(v) for k, v in self.v_hat.items()},
            "u_hat": dict(self.u_hat),
            "reml_objective": self.reml_objective,
            "reml_loglik": self.reml_loglik,
            "converged": self.converged,
            "n_obs": self.n_obs,
            "optimizer_trace": self.optimizer_trace,
            "options": asdict(self.options),
            "fingerprint": self.fingerprint,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> ModelFit:
        return cls(
            variant=d["variant"],
            beta=(d["beta0"], d["beta1"]),
            vc=VarianceComponents(**d["vc"]),
            v_hat={k: tuple(v) for k, v in d["v_hat"].items()},
            u_hat=dict(d["u_hat"]),
            reml_objective=d["reml_objective"],
            converged=d["converged"],
            n_obs=d["n_obs"],
            optimizer_trace=d["optimizer_trace"],
            options=FitOptions(**d["options"]),
            fingerprint=d.get("fingerprint"),
        )

    @classmethod
    def from_json(cls, text: str) -> ModelFit:
        return cls.from_dict(json.loads(text))


def _bounds(p: int):
    b = [LOG_BOUNDS, LOG_BOUNDS, ATANH_BOUNDS, LOG_BOUNDS]
    if p == 5:
        b.append(LOG_BOUNDS)
    return b


def _clip(theta, bounds):
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    return np.clip(theta, lo, hi)


def moment_start(design: DesignMatrices, spec: ModelSpec) -> np.ndarray:
    """Crude starting point from cell means and within-cell spread."""
    y = design.y
    X = design.X
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    r = y - X @ beta
    n = design.counts()
    sums = np.zeros_like(n)
    np.add.at(sums, (design.state_idx, design.cand_idx), r)
    means = sums / np.maximum(n, 1.0)
    within = r - means[design.state_idx, design.cand_idx]
    dof = design.n_obs - np.count_nonzero(n)
    scale = max(float(np.std(y)), 1e-8)
    tau2 = float(within @ within) / dof if dof > 0 else 0.5 * float(r @ r) / design.n_obs
    tau2 = max(tau2, (1e-3 * scale) ** 2)
    hm = np.mean(1.0 / np.maximum(n, 1.0), axis=0)
    var_k = np.maximum(means.var(axis=0) - tau2 * hm, (0.05 * scale) ** 2)
    if design.n_states > 2 and np.std(means[:, 0]) > 0 and np.std(means[:, 1]) > 0:
        rho = float(np.clip(np.corrcoef(means[:, 0], means[:, 1])[0, 1], -0.9, 0.9))
    else:
        rho = 0.0
    th = [0.5 * math.log(var_k[0]), 0.5 * math.log(var_k[1]), math.atanh(rho), 0.5 * math.log(tau2)]
    if spec.has_pollster:
        th.append(0.5 * math.log(0.25 * tau2))
    return _clip(np.array(th), _bounds(len(th)))


def _nelder_mead(fun, x0, bounds, opts: FitOptions):
    p = x0.size
    simplex = np.vstack([x0] + [x0 + opts.initial_step * np.eye(p)[i] for i in range(p)])
    simplex = np.vstack([_clip(row, bounds) for row in simplex])
    # Clipping can collapse two vertices onto one another; step inward instead.
    for i in range(1, p + 1):
        if np.allclose(simplex[i], x0):
            simplex[i] = _clip(x0 - opts.initial_step * np.eye(p)[i - 1], bounds)
    return optimize.minimize(
        fun, x0, method="Nelder-Mead", bounds=bounds,
        options={"initial_simplex": simplex, "maxfev": opts.max_evals, "maxiter": 10 * opts.max_evals,
                 "xatol": opts.xatol, "fatol": opts.fatol, "adaptive": False},
    )


def fit_reml(spec: ModelSpec, design: DesignMatrices, options: FitOptions | None = None,
             start=None, fingerprint: str | None = None) -> ModelFit:
    """Minimise the REML criterion over (log sd, log sr, atanh rho, log tau[, log su]).

    The simplex search runs from ``start`` (default: moment estimates) and is
    then restarted ``options.restarts`` times from seeded perturbations of the
    best point so far. ``converged`` reports whether the winning run met both
    the parameter and objective tolerances before the evaluation cap.
    """
    opts = options or FitOptions()
    design.validate(spec)
    p = 5 if spec.has_pollster else 4
    bounds = _bounds(p)

    def fun(theta):
        try:
            vc = VarianceComponents.from_theta(theta)
        except ValueError:
            return math.inf
        try:
            return reml_objective(vc, design, spec)
        except ModelError:
            return math.inf

    x0 = moment_start(design, spec) if start is None else _clip(np.asarray(start, float), bounds)
    trace = []
    best = None
    for r in range(opts.restarts + 1):
        if r == 0:
            xs = x0
        else:
            rng = np.random.default_rng([opts.seed, r])
            xs = _clip(best.x + rng.normal(0.0, opts.restart_scale, p), bounds)
        res = _nelder_mead(fun, xs, bounds, opts)
        trace.append({"run": r, "start": [float(v) for v in xs], "x": [float(v) for v in res.x],
                      "objective": float(res.fun), "nfev": int(res.nfev), "status": int(res.status)})
        if best is None or res.fun < best.fun:
            best = res
    if not np.isfinite(best.fun):
        raise ModelError("REML objective was not finite anywhere along the search")

    vc = VarianceComponents.from_theta(best.x)
    beta = gls_beta(vc, design, spec)
    v, u = compute_blups(beta, vc, design, spec)
    return ModelFit(
        variant=spec.variant,
        beta=(float(beta[0]), float(beta[1])),
        vc=vc,
        v_hat={s: (float(v[i, 0]), float(v[i, 1])) for i, s in enumerate(design.states)},
        u_hat={pj: float(u[j]) for j, pj in enumerate(design.pollsters)} if spec.has_pollster else {},
        reml_objective=float(best.fun),
        converged=bool(best.status == 0),
        n_obs=design.n_obs,
        optimizer_trace=trace,
        options=opts,
        fingerprint=fingerprint,
    )


def eblup_theta(fit: ModelFit, state: str, candidate: str, pollsters: Iterable[str] | None = None) -> float:
    """Small-area mean of log poll bias for (state, candidate).

    For Model III the pollster term is averaged over ``pollsters``; a pollster
    absent from training contributes its prior mean, zero.
    """
    if state not in fit.v_hat:
        raise KeyError(f"state {state} has no random-effect prediction")
    k = 1 if candidate == REP else 0
    base = fit.beta[0] + fit.beta[1] * k + fit.v_hat[state][k]
    if fit.variant == MODEL_III and pollsters is not None:
        ps = list(pollsters)
        if ps:
            base += sum(fit.u_hat.get(p, 0.0) for p in ps) / len(ps)
    return base


def fitted_means(fit: ModelFit, design: DesignMatrices) -> np.ndarray:
    """Per-row EBLUP ``X beta + Z v (+ Z u)`` on the training design."""
    v = np.array([fit.v_hat[s] for s in design.states])
    theta = fit.beta[0] + fit.beta[1] * design.cand_idx + v[design.state_idx, design.cand_idx]
    if fit.variant == MODEL_III:
        u = np.array([fit.u_hat[p] for p in design.pollsters])
        theta = theta + u[design.pollster_idx]
    return theta


def simulate_response(design: DesignMatrices, beta, vc: VarianceComponents, rng) -> np.ndarray:
    """Draw ``y ~ N(X beta, V)`` for the given design."""
    v = rng.multivariate_normal(np.zeros(2), vc.G, size=design.n_states, method="cholesky")
    y = beta[0] + beta[1] * design.cand_idx + v[design.state_idx, design.cand_idx]
    if vc.sigma_u is not None and design.pollster_idx is not None:
        u = rng.normal(0.0, vc.sigma_u, size=len(design.pollsters))
        y = y + u[design.pollster_idx]
    return y + rng.normal(0.0, vc.tau, size=design.n_obs)


@dataclass
class ParamBootstrap:
    names: tuple[str, ...]
    estimates: dict[str, float]
    replicates: np.ndarray
    n_dropped: int

    @property
    def se(self) -> dict[str, float]:
        sd = self.replicates.std(axis=0, ddof=1)
        return {k: float(v) for k, v in zip(self.names, sd)}

    @property
    def t(self) -> dict[str, float]:
        se = self.se
        return {k: self.estimates[k] / se[k] if se[k] > 0 else math.copysign(math.inf, self.estimates[k])
                for k in self.names}


def bootstrap_param_se(fit: ModelFit, design: DesignMatrices, B: int, seed: int,
                       options: FitOptions | None = None, max_drop: float = 0.10) -> ParamBootstrap:
    """Parametric bootstrap standard errors for every fixed and variance parameter.

    Replicate ``b`` draws ``y ~ N(X beta_hat, V(vc_hat))`` from a generator keyed
    by ``(seed, b)`` and refits from the original estimate.
    """
    if B < 2:
        raise ValueError("need B >= 2 replicates")
    if not fit.converged:
        raise ModelError("cannot bootstrap a fit that did not converge")
    spec = ModelSpec(fit.variant)
    opts = options or replace(fit.options, restarts=1)
    names = PARAM_NAMES[fit.variant]
    rows, dropped = [], 0
    for b in range(B):
        rng = np.random.default_rng([seed, b])
        yb = simulate_response(design, fit.beta, fit.vc, rng)
        try:
            fb = fit_reml(spec, design.with_y(yb), opts, start=fit.theta)
        except ModelError:
            dropped += 1
            continue
        if not fb.converged:
            dropped += 1
            continue
        p = fb.params()
        rows.append([p[k] for k in names])
    if dropped > max_drop * B:
        raise ModelError(f"{dropped} of {B} bootstrap refits failed")
    if dropped:
        warnings.warn(f"dropped {dropped} of {B} non-converged bootstrap refits", stacklevel=2)
    return ParamBootstrap(names, fit.params(), np.array(rows), dropped)
