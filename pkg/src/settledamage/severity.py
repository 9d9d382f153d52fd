"""Severity clustering of historical disasters and the damage regression.

Units are fixed throughout: economic loss in $bn, deaths in thousands for the
regression (raw counts in event tables), damage fraction in [0, 1].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import (ConfigError, InsufficientDataError, NonInvertibleError,
                     SingularDesignError, UsageError)

CATEGORIES = (
    "forest fire", "earthquake", "mudslide", "tsunami", "volcanic eruption",
    "hurricane", "typhoon", "tornado", "industrial explosion",
)
SEVERITY_NAMES = ("gentle", "medium", "severe")
JB_CRITICAL_5PCT = 5.991  # chi-square(2) upper 5% point


@dataclass
class DisasterEvent:
    id: str
    name: str
    date: str
    location: str
    econ_loss_bn: float
    deaths: int
    category: str | None = None

    def __post_init__(self):
        if self.econ_loss_bn < 0 or self.deaths < 0:
            raise ConfigError(f"event {self.id}: economic loss and deaths must be non-negative")
        if self.category is not None and self.category not in CATEGORIES:
            raise ConfigError(f"event {self.id}: unknown category {self.category!r}")


def severity_names(k: int) -> tuple[str, ...]:
    if k == 3:
        return SEVERITY_NAMES
    return tuple(f"level{i}" for i in range(k))


# ---------------------------------------------------------------------------
# k-means


@dataclass
class ClusterModel:
    centroids: np.ndarray              # (k, 2) in standardised (econ, deaths) space
    mean: np.ndarray                   # (2,)
    std: np.ndarray                    # (2,)
    severity: list[str]                # severity[i] = name of centroid i
    labels: np.ndarray | None = None   # training assignments
    inertia_history: list[float] = field(default_factory=list)
    iterations: int = 0
    seed: int = 42

    @property
    def k(self) -> int:
        return len(self.centroids)

    def standardize(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.mean) / self.std

    def magnitude(self) -> np.ndarray:
        """Size of each centroid in per-feature std units, measured from zero loss.

        Severity ranks by this rather than by the norm of the z-scored centroid,
        which measures distance from the average event instead of size.
        """
        return np.linalg.norm(self.centroids + self.mean / self.std, axis=1)

    def shares(self) -> dict[str, float]:
        """Fraction of training events in each severity class."""
        if self.labels is None:
            return {}
        counts = np.bincount(self.labels, minlength=self.k)
        return {self.severity[i]: counts[i] / counts.sum() for i in range(self.k)}

    def to_dict(self) -> dict:
        return {
            "kind": "cluster-model",
            "k": self.k,
            "seed": self.seed,
            "features": ["econ_loss_bn", "deaths"],
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "centroids": self.centroids.tolist(),
            "severity": list(self.severity),
            "iterations": self.iterations,
            "inertia": self.inertia_history[-1] if self.inertia_history else None,
            "shares": self.shares(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterModel":
        if d.get("kind") != "cluster-model":
            raise ConfigError("not a cluster model")
        return cls(np.array(d["centroids"], dtype=np.float64), np.array(d["mean"]), np.array(d["std"]),
                   list(d["severity"]), iterations=d.get("iterations", 0), seed=d.get("seed", 42))


def event_features(events: Sequence[DisasterEvent]) -> np.ndarray:
    return np.array([[e.econ_loss_bn, e.deaths] for e in events], dtype=np.float64).reshape(-1, 2)


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d2 = _sq_dists(x, np.array(centers)).min(axis=1)
        total = d2.sum()
        if total == 0:
            idx = rng.integers(len(x))
        else:
            idx = int(np.searchsorted(np.cumsum(d2 / total), rng.random(), side="right"))
            idx = min(idx, len(x) - 1)
        centers.append(x[idx])
    return np.array(centers)


def lloyd(x: np.ndarray, init: np.ndarray, max_iter: int = 300):
    """Lloyd iterations from ``init``; returns (centroids, labels, inertia per iteration, iterations).

    Each recorded inertia is measured right after the assignment step. Empty
    clusters keep their previous centroid.
    """
    centroids = init.copy()
    labels = None
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(x, centroids)
        new_labels = d2.argmin(axis=1)
        history.append(float(d2[np.arange(len(x)), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(len(centroids)):
            members = x[labels == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
    return centroids, labels, history, it


def kmeans(events: Sequence[DisasterEvent] | np.ndarray, k: int = 3, seed: int = 42,
           max_iter: int = 300, n_init: int = 10) -> ClusterModel:
    """k-means++ seeded Lloyd clustering on z-scored (economic loss, deaths).

    Runs ``n_init`` seeded restarts and keeps the one with the lowest final
    inertia; its per-iteration history is stored on the model.
    """
    x_raw = events if isinstance(events, np.ndarray) else event_features(events)
    x_raw = np.asarray(x_raw, dtype=np.float64)
    if k < 1:
        raise UsageError("k must be at least 1")
    if len(x_raw) < k:
        raise UsageError(f"need at least k={k} events, got {len(x_raw)}")
    if n_init < 1:
        raise UsageError("n_init must be at least 1")
    mean = x_raw.mean(axis=0)
    std = x_raw.std(axis=0)
    std[std == 0] = 1.0
    x = (x_raw - mean) / std
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        run = lloyd(x, _kmeans_pp(x, k, rng), max_iter)
        if best is None or run[2][-1] < best[2][-1]:
            best = run
    centroids, labels, history, iters = best

    model = ClusterModel(centroids, mean, std, [""] * k, labels, history, iters, seed)
    names = severity_names(k)
    for rank, idx in enumerate(np.argsort(model.magnitude(), kind="stable")):
        model.severity[idx] = names[rank]
    return model


def assign_severity(event: DisasterEvent | tuple[float, float], model: ClusterModel) -> str:
    """Severity name of the nearest centroid; equidistant ties go to the milder class."""
    if model is None or model.centroids is None or len(model.centroids) == 0:
        raise UsageError("cluster model is not fitted")
    point = (event.econ_loss_bn, event.deaths) if isinstance(event, DisasterEvent) else event
    z = model.standardize(np.asarray(point, dtype=np.float64).reshape(1, 2))
    d2 = _sq_dists(z, model.centroids)[0]
    names = severity_names(model.k)
    rank = {name: i for i, name in enumerate(names)}
    best = min(range(model.k), key=lambda j: (d2[j], rank[model.severity[j]]))
    # float round-off can split a geometric tie; treat near-equal distances as ties
    near = [j for j in range(model.k) if np.isclose(d2[j], d2[best], rtol=1e-12, atol=1e-15)]
    return min((model.severity[j] for j in near), key=rank.__getitem__)


# ---------------------------------------------------------------------------
# regression


@dataclass
class RegressionModel:
    econ_coef: float
    deaths_coef: float
    intercept: float
    r2: float
    ci95: dict[str, tuple[float, float]]
    n: int
    residual_std: float
    diagnostics: dict[str, float] = field(default_factory=dict)

    def predict_fraction(self, econ_bn, deaths_k):
        return self.intercept + self.econ_coef * np.asarray(econ_bn) + self.deaths_coef * np.asarray(deaths_k)

    def to_dict(self) -> dict:
        return {
            "kind": "regression-model",
            "units": {"econ": "$bn", "deaths": "thousands", "response": "damage fraction"},
            "econ_coef": self.econ_coef,
            "deaths_coef": self.deaths_coef,
            "intercept": self.intercept,
            "r2": self.r2,
            "ci95": {k: list(v) for k, v in self.ci95.items()},
            "n": self.n,
            "residual_std": self.residual_std,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionModel":
        if d.get("kind") != "regression-model":
            raise ConfigError("not a regression model")
        return cls(d["econ_coef"], d["deaths_coef"], d["intercept"], d["r2"],
                   {k: tuple(v) for k, v in d["ci95"].items()}, d["n"], d["residual_std"],
                   d.get("diagnostics", {}))

    @classmethod
    def from_coefficients(cls, econ_coef: float, deaths_coef: float, intercept: float) -> "RegressionModel":
        """Model with exact coefficients and zero-width intervals (no fit data)."""
        return cls(econ_coef, deaths_coef, intercept, 1.0,
                   {"econ": (econ_coef, econ_coef), "deaths": (deaths_coef, deaths_coef),
                    "intercept": (intercept, intercept)}, 0, 0.0)


# published reference values, reported next to fitted results for comparison
REFERENCE_MODEL = dict(econ_coef=0.1, deaths_coef=0.038, intercept=0.12)
REFERENCE_R2 = {"classifier": 0.48, "parser": 0.76}


def _design(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[1] != 3:
        raise UsageError("samples must be rows of (econ_bn, deaths_k, damage_fraction)")
    x = np.column_stack([np.ones(len(samples)), samples[:, 0], samples[:, 1]])
    return x, samples[:, 2]


def fit_ols(samples) -> RegressionModel:
    """Least squares fit of damage fraction on (economic loss, deaths) with intercept.

    Solved through a QR decomposition. Intervals use Student t with n-3
    degrees of freedom. R² is reported as 0 when the response is constant.
    """
    x, y = _design(samples)
    n = len(y)
    if n < 4:
        raise InsufficientDataError(f"need at least 4 samples, got {n}")
    q, r = np.linalg.qr(x)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-10 * max(diag.max(), 1.0):
        raise SingularDesignError("design matrix is rank deficient")
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - x @ beta
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 0.0 if ss_tot == 0 else max(0.0, 1.0 - ss_res / ss_tot)
    dof = n - 3
    sigma2 = ss_res / dof
    rinv = np.linalg.inv(r)
    se = np.sqrt(sigma2 * (rinv ** 2).sum(axis=1))
    tcrit = stats.t.ppf(0.975, dof)
    names = ("intercept", "econ", "deaths")
    ci = {nm: (float(beta[i] - tcrit * se[i]), float(beta[i] + tcrit * se[i])) for i, nm in enumerate(names)}
    return RegressionModel(float(beta[1]), float(beta[2]), float(beta[0]), r2, ci, n, float(np.sqrt(sigma2)))


def residuals(model: RegressionModel, samples) -> np.ndarray:
    x, y = _design(samples)
    return y - model.predict_fraction(x[:, 1], x[:, 2])


def jarque_bera(resid) -> dict[str, float]:
    """Skewness, excess kurtosis and n/6*(S^2 + K^2/4) from population moments."""
    e = np.asarray(resid, dtype=np.float64)
    n = len(e)
    if n < 8:
        raise InsufficientDataError(f"normality check needs at least 8 residuals, got {n}")
    d = e - e.mean()
    m2 = float((d ** 2).mean())
    if m2 == 0.0:
        return {"n": n, "skewness": 0.0, "excess_kurtosis": 0.0, "jb": 0.0}
    s = float((d ** 3).mean()) / m2 ** 1.5
    k = float((d ** 4).mean()) / m2 ** 2 - 3.0
    return {"n": n, "skewness": s, "excess_kurtosis": k, "jb": n / 6.0 * (s * s + k * k / 4.0)}


def residual_normality(model: RegressionModel, samples=None, resid=None) -> tuple[dict, bool]:
    """Jarque-Bera check at 5%; returns (diagnostics, passed) and stores them on the model."""
    e = resid if resid is not None else residuals(model, samples)
    diag = jarque_bera(e)
    passed = diag["jb"] <= JB_CRITICAL_5PCT
    diag = {**diag, "critical_5pct": JB_CRITICAL_5PCT, "normal_at_5pct": passed}
    model.diagnostics = diag
    return diag, passed


def predict_economic_loss(damage_fraction: float, deaths_k: float, model: RegressionModel):
    """Invert the regression for economic loss ($bn).

    Returns ``(estimate, (low, high))``. The interval is a first-order bound:
    each coefficient's 95% half-width times the magnitude of the estimate's
    sensitivity to that coefficient, summed. It is an approximation.
    """
    c1 = model.econ_coef
    if c1 == 0:
        raise NonInvertibleError("economic-loss coefficient is zero; regression cannot be inverted")
    econ = (damage_fraction - model.intercept - model.deaths_coef * deaths_k) / c1
    half = {k: (hi - lo) / 2.0 for k, (lo, hi) in model.ci95.items()}
    width = (abs(1.0 / c1) * half.get("intercept", 0.0)
             + abs(deaths_k / c1) * half.get("deaths", 0.0)
             + abs(econ / c1) * half.get("econ", 0.0))
    return econ, (econ - width, econ + width)


def save_model(model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    kind = d.get("kind")
    if kind == "cluster-model":
        return ClusterModel.from_dict(d)
    if kind == "regression-model":
        return RegressionModel.from_dict(d)
    raise ConfigError(f"{path}: unknown model kind {kind!r}")
