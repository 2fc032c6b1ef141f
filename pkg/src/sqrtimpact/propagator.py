"""Non-linear propagator: each child of size ``q_j`` sent at ``t_j`` moves
the log price at ``t >= t_j`` by

    G0 * sqrt(q_j) * (dt / (t - t_j + s0))**beta

where ``dt`` is the child spacing and ``s0 = i0 * dt``.  The kernel acts on
``sqrt(q_j)``, not on ``q_j``: doubling a child's size raises its impact by
``sqrt(2)`` whatever the lag, which is what distinguishes this model from
the linear propagator.

For uniform spacing and equal child sizes the partial impact after ``i``
children is well approximated by ``2 G0 sqrt(q) (sqrt(i + i0) - sqrt(i0))``
when ``beta = 1/2``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import FitUnavailable, UnsupportedBeta


@dataclass(frozen=True)
class PropagatorParams:
    G0: float = 1.0
    s0: float = 4.0
    beta: float = 0.5
    dt: float = 1.0

    def __post_init__(self):
        if not self.G0 > 0:
            raise ValueError("G0 must be positive")
        if not self.s0 >= 0:
            raise ValueError("s0 must be non-negative")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def i0(self) -> float:
        return self.s0 / self.dt

    @classmethod
    def from_i0(cls, G0: float, i0: float, beta: float = 0.5,
                dt: float = 1.0) -> "PropagatorParams":
        return cls(G0, i0 * dt, beta, dt)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PropagatorParams":
        return cls(**json.loads(text))


def kernel(lag, params: PropagatorParams):
    """Impact per unit ``G0 sqrt(q)`` of a child ``lag`` seconds ago."""
    lag = np.asarray(lag, dtype=float)
    return (params.dt / (lag + params.s0)) ** params.beta


def closed_form_partial_impact(q, i, params: PropagatorParams):
    """``2 G0 sqrt(q) (sqrt(i + i0) - sqrt(i0))``; only for ``beta = 1/2``."""
    if params.beta != 0.5:
        raise UnsupportedBeta(f"closed form needs beta=1/2, got {params.beta}")
    i = np.asarray(i, dtype=float)
    i0 = params.i0
    return 2.0 * params.G0 * np.sqrt(q) * (np.sqrt(i + i0) - np.sqrt(i0))


def general_partial_impact(q, i, params: PropagatorParams):
    """Continuum sum for any ``beta``:
    ``G0 sqrt(q) ((i + i0)**(1-beta) - i0**(1-beta)) / (1 - beta)``."""
    i = np.asarray(i, dtype=float)
    g = 1.0 - params.beta
    return params.G0 * np.sqrt(q) * ((i + params.i0) ** g - params.i0 ** g) / g


def discrete_sum_impact(q, t, t_eval, params: PropagatorParams) -> float:
    """Explicit sum ``G0 sum_j sqrt(q_j) (dt / (t_eval - t_j + s0))**beta``
    over children with ``t_j <= t_eval``."""
    t = np.asarray(t, dtype=float)
    q = np.broadcast_to(np.asarray(q, dtype=float), t.shape)
    if t.size > 1 and np.any(np.diff(t) <= 0):
        raise ValueError("child times must be strictly increasing")
    live = t <= t_eval
    return float(params.G0 * np.sum(np.sqrt(q[live])
                                    * kernel(t_eval - t[live], params)))


def uniform_discrete_sum(i, i0: float, beta: float = 0.5):
    """``sum_{k=0}^{i-1} (k + i0)**-beta`` for each entry of ``i``: the
    discrete sum evaluated at the last child with unit spacing."""
    i = np.atleast_1d(np.asarray(i, dtype=np.int64))
    top = int(i.max()) if i.size else 0
    k = np.arange(top, dtype=float)
    with np.errstate(divide="ignore"):
        terms = (k + i0) ** -beta
    cum = np.concatenate([[0.0], np.cumsum(terms)])
    return cum[i]


def bracket(N, i0: float):
    """``sqrt(1 + i0/N) - sqrt(i0/N)``: the factor multiplying ``sqrt(Q)``."""
    N = np.asarray(N, dtype=float)
    return np.sqrt(1.0 + i0 / N) - np.sqrt(i0 / N)


def total_impact_prediction(Q, N, params: PropagatorParams):
    """Impact at the end of a uniform metaorder of ``N`` children totalling
    ``Q``: ``2 G0 sqrt(Q) (sqrt(1 + i0/N) - sqrt(i0/N))`` (beta = 1/2)."""
    N = np.asarray(N, dtype=float)
    return closed_form_partial_impact(np.asarray(Q) / N, N, params)


def calibrate(profile, dt: float | None = None, method: str = "closed_form",
              units: str = "profile") -> PropagatorParams:
    """Propagator parameters from a fitted child profile.

    ``method="closed_form"`` maps the profile fit ``(A, i0, beta)`` to
    ``G0 = A (1 - beta)`` (``A/2`` for a square-root kernel).
    ``method="discrete_sum"`` refits the profile with the explicit sum over
    lags ``1..i`` spacings, which is how the profile is sampled, and takes
    ``G0 = A``.  ``s0 = i0 * dt`` with ``dt`` defaulting to the profile's
    mean child spacing.  With ``units="physical"`` G0 is converted from
    profile units (``sigma_D sqrt(q / V_D)``) to log-price per
    ``sqrt(share)`` using the profile's mean ``sqrt(V_D) / sigma_D``.
    """
    from .impact import fit_child_curve

    fit = getattr(profile, "fit", None)
    if fit is None:
        raise FitUnavailable("profile has no successful fit")
    dt = getattr(profile, "mean_spacing_s", None) if dt is None else dt
    if dt is None or not np.isfinite(dt) or dt <= 0:
        raise FitUnavailable("mean child spacing unknown")
    if method == "closed_form":
        A, i0, beta = fit.A, fit.i0, fit.beta
        G0 = A * (1.0 - beta)
    elif method == "discrete_sum":
        use = (profile.count >= profile.min_count) & np.isfinite(profile.mean)
        ds = fit_child_curve(profile.rank[use], profile.mean[use],
                             profile.se[use], model="discrete_sum")
        G0, i0, beta = ds.A, ds.i0, ds.beta
    else:
        raise ValueError("method must be 'closed_form' or 'discrete_sum'")
    if units == "physical":
        G0 = G0 / profile.scale
    elif units != "profile":
        raise ValueError("units must be 'profile' or 'physical'")
    if not (G0 > 0 and 0 < beta < 1):
        raise FitUnavailable(f"fit outside model range (G0={G0}, beta={beta})")
    return PropagatorParams(float(G0), float(i0 * dt), float(beta), float(dt))
