"""Semi-parametric marginals: empirical body with generalized Pareto tails.

A marginal is stitched from three pieces. Below the lower threshold and
above the upper one the law is a GPD fitted by maximum likelihood to the
exceedances; in between it is the linearly interpolated empirical CDF. The
stitch points carry probability exactly ``k/n`` where ``k`` is the number
of samples beyond the threshold, so the three pieces join continuously.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, stats
from scipy.special import ndtr, ndtri

from .errors import DegenerateDistributionError, DomainError, FitError

EPS = 1e-12
DEFAULT_TAIL_FRACTION = 0.15
MIN_SAMPLES = 30
MIN_EXCEEDANCES = 3
XI_BOUNDS = (-0.9, 2.0)
_XI_ZERO = 1e-9
_PENALTY = 1e12


# --------------------------------------------------------------------------
# GPD primitives on excesses y >= 0


def gpd_survival(y, xi, beta):
    y = np.maximum(np.asarray(y, dtype=float), 0.0)
    if abs(xi) < _XI_ZERO:
        return np.exp(-y / beta)
    z = 1.0 + xi * y / beta
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(z > 0, np.exp(-np.log(np.where(z > 0, z, 1.0)) / xi), 0.0)
    return out


def gpd_excess_quantile(q, xi, beta):
    """Excess ``y`` with survival ``q`` (0 < q <= 1)."""
    q = np.asarray(q, dtype=float)
    if abs(xi) < _XI_ZERO:
        return -beta * np.log(q)
    return beta * np.expm1(-xi * np.log(q)) / xi


def gpd_nll(params, y):
    """Negative log-likelihood in (xi, log beta) and its gradient."""
    xi, log_beta = params
    beta = math.exp(log_beta)
    t = y / beta
    n = y.size
    z = 1.0 + xi * t
    if np.any(z <= 0):
        # outside the support: steep penalty pointing back inside
        i = int(np.argmin(z))
        viol = 1e-3 - z[i]
        f = _PENALTY * (1.0 + viol)
        grad = -_PENALTY * np.array([t[i], -xi * t[i]])
        return f, grad
    if abs(xi) < _XI_ZERO:
        f = n * log_beta + t.sum()
        grad = np.array([np.sum(t - 0.5 * t * t), n - t.sum()])
        return f, grad
    log_z = np.log1p(xi * t)
    ratio = t / z
    f = n * log_beta + (1.0 + 1.0 / xi) * log_z.sum()
    d_xi = -log_z.sum() / (xi * xi) + (1.0 + 1.0 / xi) * ratio.sum()
    d_lb = n - (1.0 + xi) * ratio.sum()
    return f, np.array([d_xi, d_lb])


def gpd_pwm(y):
    """Probability-weighted-moment estimates (Hosking and Wallis)."""
    y = np.sort(np.asarray(y, dtype=float))
    n = y.size
    a0 = y.mean()
    a1 = np.sum(y * (n - 1 - np.arange(n)) / (n - 1)) / n
    xi = 2.0 - a0 / (a0 - 2.0 * a1)
    beta = 2.0 * a0 * a1 / (a0 - 2.0 * a1)
    return float(xi), float(beta)


def fit_gpd(excesses) -> tuple[float, float, str, dict]:
    """Fit a GPD to non-negative excesses.

    Bounded L-BFGS-B on (xi, log beta) started from PWM estimates. Falls
    back to the PWM estimates when the optimizer fails. Returns
    ``(xi, beta, method, diagnostics)``.
    """
    y = np.asarray(excesses, dtype=float)
    if y.size < MIN_EXCEEDANCES:
        raise FitError(f"need at least {MIN_EXCEEDANCES} excesses, got {y.size}", {"n": y.size})
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise FitError("excesses must be finite and non-negative", {"min": float(np.min(y))})
    if y.max() <= 0:
        raise DegenerateDistributionError("all excesses are zero", {"n": y.size})

    xi0, beta0 = gpd_pwm(y)
    diag = {"n": int(y.size), "pwm": (xi0, beta0)}
    pwm_ok = np.isfinite(xi0) and np.isfinite(beta0) and beta0 > 0
    if pwm_ok:
        start_xi = float(np.clip(xi0, XI_BOUNDS[0] + 0.05, XI_BOUNDS[1] - 0.05))
        start_beta = beta0
        if start_xi < 0:
            # keep the start inside the support
            start_beta = max(beta0, -start_xi * y.max() * 1.05)
    else:
        start_xi, start_beta = 0.1, float(y.mean())

    res = optimize.minimize(
        gpd_nll,
        x0=np.array([start_xi, math.log(start_beta)]),
        args=(y,),
        jac=True,
        method="L-BFGS-B",
        bounds=[XI_BOUNDS, (math.log(y.max()) - 30, math.log(y.max()) + 30)],
        options={"maxiter": 500, "gtol": 1e-10, "ftol": 1e-14},
    )
    diag.update(mle_success=bool(res.success), mle_message=str(res.message), nit=int(res.nit), nll=float(res.fun))
    xi, beta = float(res.x[0]), float(math.exp(res.x[1]))
    feasible = res.fun < _PENALTY and np.isfinite(res.fun)
    if feasible and (res.success or np.linalg.norm(res.jac) < 1e-4 * y.size):
        return xi, beta, "mle", diag

    # line search can stall against the support edge when xi < 0
    nm = optimize.minimize(
        lambda p: gpd_nll(p, y)[0],
        x0=res.x if feasible else np.array([start_xi, math.log(start_beta)]),
        method="Nelder-Mead",
        bounds=[XI_BOUNDS, (math.log(y.max()) - 30, math.log(y.max()) + 30)],
        options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000},
    )
    diag.update(nm_success=bool(nm.success), nm_message=str(nm.message), nll=float(nm.fun))
    if nm.success and nm.fun < _PENALTY:
        return float(nm.x[0]), float(math.exp(nm.x[1])), "mle", diag
    if pwm_ok and (xi0 >= 0 or beta0 + xi0 * y.max() > 0):
        warnings.warn(f"GPD MLE failed ({res.message}); using PWM estimates", RuntimeWarning, stacklevel=2)
        return xi0, beta0, "pwm", diag
    raise FitError("GPD fit failed by MLE and PWM", diag)


@dataclass(frozen=True)
class GpdTail:
    side: str  # "upper" | "lower"
    threshold: float
    shape: float
    scale: float
    tail_fraction: float
    n_exceed: int = 0
    method: str = "mle"

    def __post_init__(self):
        if self.side not in ("upper", "lower"):
            raise ValueError(f"bad tail side {self.side!r}")
        if not self.scale > 0:
            raise FitError(f"{self.side} tail scale must be positive", {"scale": self.scale})

    @property
    def endpoint(self) -> float:
        """Finite end of the support when the shape is negative, else +-inf."""
        if self.shape >= 0:
            return math.inf if self.side == "upper" else -math.inf
        reach = -self.scale / self.shape
        return self.threshold + reach if self.side == "upper" else self.threshold - reach

    def prob_beyond(self, x):
        """P(X beyond x) for x beyond the threshold, in whole-distribution units."""
        x = np.asarray(x, dtype=float)
        y = x - self.threshold if self.side == "upper" else self.threshold - x
        return self.tail_fraction * gpd_survival(y, self.shape, self.scale)

    def point_at(self, q):
        """Value whose whole-distribution tail probability is ``q`` (<= tail_fraction)."""
        y = gpd_excess_quantile(np.asarray(q, dtype=float) / self.tail_fraction, self.shape, self.scale)
        return self.threshold + y if self.side == "upper" else self.threshold - y


@dataclass(frozen=True)
class SemiParametricMarginal:
    knots_x: np.ndarray
    knots_p: np.ndarray
    lower: GpdTail
    upper: GpdTail
    n: int
    hour: int | None = None
    body: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("knots_x", "knots_p", "body"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.array(arr, dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    # cdf and survival are evaluated together so that deep upper-tail
    # probabilities keep full precision through the normal quantile
    def _cdf_sf(self, x):
        x = np.asarray(x, dtype=float)
        lo, up = self.lower, self.upper
        cdf = np.interp(x, self.knots_x, self.knots_p)
        sf = 1.0 - cdf
        below = x < lo.threshold
        above = x > up.threshold
        if np.any(below):
            cdf = np.where(below, lo.prob_beyond(np.where(below, x, lo.threshold)), cdf)
            sf = np.where(below, 1.0 - cdf, sf)
        if np.any(above):
            sf = np.where(above, up.prob_beyond(np.where(above, x, up.threshold)), sf)
            cdf = np.where(above, 1.0 - sf, cdf)
        return np.clip(cdf, EPS, 1 - EPS), np.clip(sf, EPS, 1 - EPS)

    def cdf(self, x):
        c, _ = self._cdf_sf(x)
        return c if np.ndim(x) else float(c)

    def sf(self, x):
        _, s = self._cdf_sf(x)
        return s if np.ndim(x) else float(s)

    def _quantile(self, p, q):
        lo, up = self.lower, self.upper
        out = np.interp(p, self.knots_p, self.knots_x)
        low = p < lo.tail_fraction
        high = q < up.tail_fraction
        if np.any(low):
            out = np.where(low, lo.point_at(np.where(low, p, lo.tail_fraction)), out)
        if np.any(high):
            out = np.where(high, up.point_at(np.where(high, q, up.tail_fraction)), out)
        return out

    def quantile(self, p):
        arr = np.asarray(p, dtype=float)
        if np.any(~(arr > 0) | ~(arr < 1)):
            raise DomainError("quantile needs probabilities strictly inside (0, 1)")
        out = self._quantile(arr, 1.0 - arr)
        return out if np.ndim(p) else float(out)

    def gaussianize(self, x):
        c, s = self._cdf_sf(x)
        z = np.where(c < 0.5, ndtri(c), -ndtri(s))
        return z if np.ndim(x) else float(z)

    def degaussianize(self, z):
        z = np.asarray(z, dtype=float)
        p = np.clip(ndtr(z), EPS, 1 - EPS)
        q = np.clip(ndtr(-z), EPS, 1 - EPS)
        out = self._quantile(p, q)
        return out if np.ndim(z) else float(out)

    @property
    def median(self):
        return self.quantile(0.5)

    def to_dict(self) -> dict:
        def tail(t):
            return {
                "side": t.side,
                "threshold": t.threshold,
                "shape": t.shape,
                "scale": t.scale,
                "tail_fraction": t.tail_fraction,
                "n_exceed": t.n_exceed,
                "method": t.method,
            }

        return {
            "hour": self.hour,
            "n": self.n,
            "knots_x": self.knots_x.tolist(),
            "knots_p": self.knots_p.tolist(),
            "lower": tail(self.lower),
            "upper": tail(self.upper),
            "body": None if self.body is None else self.body.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SemiParametricMarginal":
        return cls(
            knots_x=np.array(d["knots_x"]),
            knots_p=np.array(d["knots_p"]),
            lower=GpdTail(**d["lower"]),
            upper=GpdTail(**d["upper"]),
            n=int(d["n"]),
            hour=d.get("hour"),
            body=None if d.get("body") is None else np.array(d["body"]),
        )


def _merge_ties(xs, ps):
    ux, inverse = np.unique(xs, return_inverse=True)
    if ux.size == xs.size:
        return xs, ps
    sums = np.bincount(inverse, weights=ps)
    counts = np.bincount(inverse)
    return ux, sums / counts


def fit_marginal(samples, tail_fraction: float = DEFAULT_TAIL_FRACTION, hour: int | None = None) -> SemiParametricMarginal:
    """Fit a two-sided GPD-tailed marginal to ``samples``."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    label = f"hour {hour}: " if hour is not None else ""
    if n < MIN_SAMPLES:
        raise FitError(f"{label}need at least {MIN_SAMPLES} samples, got {n}", {"n": n, "hour": hour})
    if not np.all(np.isfinite(x)):
        raise FitError(f"{label}samples must be finite", {"hour": hour})
    if not 0 < tail_fraction <= 0.5:
        raise FitError(f"tail_fraction must lie in (0, 0.5], got {tail_fraction}")
    if x[0] == x[-1]:
        raise DegenerateDistributionError(f"{label}all samples equal {x[0]}", {"n": n, "hour": hour})

    k = min(max(int(math.floor(tail_fraction * n)), MIN_EXCEEDANCES), (n - 2) // 2)
    u_lo = 0.5 * (x[k - 1] + x[k])
    u_up = 0.5 * (x[n - k - 1] + x[n - k])
    p_tail = k / n

    try:
        xi_l, beta_l, meth_l, _ = fit_gpd(u_lo - x[:k])
        xi_u, beta_u, meth_u, _ = fit_gpd(x[n - k :] - u_up)
    except FitError as exc:
        exc.diagnostics.setdefault("hour", hour)
        raise FitError(f"{label}{exc}", exc.diagnostics) from exc

    body = x[k : n - k]
    hazen = (np.arange(k, n - k) + 0.5) / n
    xs = np.concatenate(([u_lo], body, [u_up]))
    ps = np.concatenate(([p_tail], hazen, [1.0 - p_tail]))
    xs, ps = _merge_ties(xs, ps)
    if xs.size < 2:
        raise DegenerateDistributionError(f"{label}body collapses to a point", {"hour": hour})

    return SemiParametricMarginal(
        knots_x=xs,
        knots_p=ps,
        lower=GpdTail("lower", float(u_lo), xi_l, beta_l, p_tail, k, meth_l),
        upper=GpdTail("upper", float(u_up), xi_u, beta_u, p_tail, k, meth_u),
        n=n,
        hour=hour,
        body=body,
    )


def fit_marginals(matrix, tail_fraction=DEFAULT_TAIL_FRACTION, hours: Sequence[int] | None = None, workers: int = 1):
    """One marginal per column; ``hours`` labels the columns for errors."""
    values = np.asarray(matrix, dtype=float)
    hours = list(range(values.shape[1])) if hours is None else list(hours)
    jobs = [(values[:, j], tail_fraction, hours[j]) for j in range(values.shape[1])]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda a: fit_marginal(*a), jobs))
    return [fit_marginal(*a) for a in jobs]


@dataclass(frozen=True)
class GaussianizedPanel:
    values: np.ndarray
    marginals: tuple

    @property
    def n_days(self):
        return self.values.shape[0]

    def normality_report(self, level: float = 0.999) -> list[dict]:
        """Per-column mean and variance sanity checks.

        Mean must satisfy ``|mean| <= 4/sqrt(N)``; ``N*var`` must fall in the
        central ``level`` interval of a chi-square with N degrees of freedom.
        """
        n = self.n_days
        lo = stats.chi2.ppf((1 - level) / 2, n) / n
        hi = stats.chi2.ppf(1 - (1 - level) / 2, n) / n
        out = []
        for j in range(self.values.shape[1]):
            col = self.values[:, j]
            mean, var = float(col.mean()), float(np.mean(col**2) - col.mean() ** 2)
            out.append(
                {
                    "column": j,
                    "mean": mean,
                    "var": var,
                    "mean_ok": abs(mean) <= 4 / math.sqrt(n),
                    "var_ok": lo <= var <= hi,
                }
            )
        return out


def gaussianize_panel(matrix, marginals) -> GaussianizedPanel:
    values = np.asarray(matrix, dtype=float)
    if values.shape[1] != len(marginals):
        raise ValueError("one marginal per column required")
    z = np.column_stack([m.gaussianize(values[:, j]) for j, m in enumerate(marginals)])
    return GaussianizedPanel(z, tuple(marginals))
