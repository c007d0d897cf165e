"""Numeric checks of the counterfactual identifiability results.

Three families of checks:

* ``counterfactual_bound_check``: with a closed-form encoder/decoder pair the
  counterfactual error is bounded by the reconstruction error whenever the
  encoding is independent of the parents, and breaks when it is not.
* ``translation_lemma_check``: a family ``q_x`` of invertible maps has an
  x-independent derivative at its inverse exactly when it is a shift family
  ``q_x(u) = q(u + r(x))``.
* ``encoding_independence_report``: HSIC p-values between a parent and the
  learned encoding of its child, repeated over independent trials.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from diffscm.graph import CausalGraph
from diffscm.metrics import hsic_pvalue
from diffscm.rng import substream
from diffscm.scm import FunctionMechanism, GroundTruthScm, RootMechanism, TracedBatch, scm_from_mechanisms

ASSUMPTIONS = ("independence", "monotone", "invertible")


@dataclass
class AnalyticEncoderDecoder:
    """Closed-form encoder ``g(x, x_pa) -> z`` and decoder ``h(z, x_pa) -> x``."""

    encode: Callable[[np.ndarray, np.ndarray], np.ndarray]
    decode: Callable[[np.ndarray, np.ndarray], np.ndarray]
    label: str = ""


@dataclass
class TheoremScenario:
    """A parent -> child SCM plus an encoder/decoder for the child node."""

    scm: GroundTruthScm
    encoder_decoder: AnalyticEncoderDecoder
    assumption_flags: dict[str, bool]
    node: int = 1
    intervened: int = 0
    label: str = ""

    def __post_init__(self):
        missing = set(ASSUMPTIONS) - set(self.assumption_flags)
        if missing:
            raise ValueError(f"assumption_flags missing {sorted(missing)}")
        if self.intervened not in self.scm.graph.parent_sets[self.node]:
            raise ValueError("the intervened node must be a parent of the checked node")

    @property
    def all_assumptions(self) -> bool:
        return all(self.assumption_flags[a] for a in ASSUMPTIONS)


# ---------------------------------------------------------------- scenarios


def _bivariate_graph(dim: int) -> CausalGraph:
    return CausalGraph.from_edges(2, [(0, 1)], dim)


def _uniform_noise(noise_dist: str):
    # the identifiability result is stated for Unif[0, 1] noise; Gaussian noise
    # enters through its CDF, which is strictly increasing and so harmless
    if noise_dist == "uniform":
        return lambda u: u
    if noise_dist == "normal":
        return norm.cdf
    raise ValueError(noise_dist)


def additive_scenario(
    f: Callable[[np.ndarray], np.ndarray] = np.sin,
    delta: float = 0.0,
    c: float = 0.0,
    dim: int = 1,
    noise_dist: str = "uniform",
) -> TheoremScenario:
    """``X2 = f(X1) + U2`` with encoder ``g = x - f(pa) + c * pa`` and decoder
    ``h = f(pa) + z - c * pa + delta``.

    ``c != 0`` makes the encoding depend on the parent (assumption 1 fails)
    while reconstruction stays exact; ``delta`` shifts the decoder output.
    ``dim > 1`` gives the multivariate additive case, where the encoder's
    Jacobian in ``x`` is the identity.
    """
    transform = _uniform_noise(noise_dist)
    mechs = [
        RootMechanism(),
        FunctionMechanism(lambda pa, u: f(pa) + transform(u), is_additive=True),
    ]
    scm = scm_from_mechanisms(_bivariate_graph(dim), mechs, noise_dist=noise_dist)
    ed = AnalyticEncoderDecoder(
        encode=lambda x, pa: x - f(pa) + c * pa,
        decode=lambda z, pa: f(pa) + z - c * pa + delta,
        label=f"additive(delta={delta}, c={c}, dim={dim})",
    )
    flags = {"independence": c == 0.0, "monotone": True, "invertible": True}
    return TheoremScenario(scm, ed, flags, label=ed.label)


def nonadditive_scenario(delta: float = 0.0) -> TheoremScenario:
    """``X2 = exp(X1) * U2`` with ``U2 ~ Unif[0, 1]``, encoder ``x / exp(pa)``."""
    mechs = [
        RootMechanism(),
        FunctionMechanism(lambda pa, u: np.exp(pa) * (u + 0.5)),
    ]
    scm = scm_from_mechanisms(_bivariate_graph(1), mechs, noise_dist="uniform")
    ed = AnalyticEncoderDecoder(
        encode=lambda x, pa: x / np.exp(pa),
        decode=lambda z, pa: z * np.exp(pa) + delta,
        label=f"multiplicative(delta={delta})",
    )
    flags = {"independence": True, "monotone": True, "invertible": True}
    return TheoremScenario(scm, ed, flags, label=ed.label)


# ---------------------------------------------------------------- bound check


def _rowdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.asarray(a) - np.asarray(b), axis=1)


def parent_quantile_grid(values: np.ndarray, num: int = 21, lo: float = 0.05, hi: float = 0.95) -> np.ndarray:
    return np.quantile(values, np.linspace(lo, hi, num), axis=0)


def counterfactual_bound_check(
    scenario: TheoremScenario,
    n_factuals: int = 500,
    interventions_grid: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
) -> dict:
    """Maximum reconstruction error and maximum counterfactual error over a grid.

    ``violation`` is set when every assumption holds by construction and the
    counterfactual error still exceeds the reconstruction bound.
    """
    rng = rng if rng is not None else substream(0, "theory/bound")
    scm, ed = scenario.scm, scenario.encoder_decoder
    g = scm.graph
    sl = g.slices()
    factual = scm.sample_observational(n_factuals, rng)
    x = factual.values[:, sl[scenario.node]]
    pa = factual.values[:, g.parent_columns(scenario.node)]
    z = ed.encode(x, pa)
    recon = _rowdist(ed.decode(z, pa), x)
    if interventions_grid is None:
        interventions_grid = parent_quantile_grid(factual.values[:, sl[scenario.intervened]])
    grid = np.asarray(interventions_grid, dtype=np.float64).reshape(len(interventions_grid), -1)

    cf_max, oracle_max = 0.0, 0.0
    for gamma in grid:
        ivs = {scenario.intervened: gamma}
        truth = scm.true_counterfactual(factual, ivs)
        pa_cf = truth[:, g.parent_columns(scenario.node)]
        est = ed.decode(z, pa_cf)
        err = _rowdist(est, truth[:, sl[scenario.node]])
        cf_max = max(cf_max, float(err.max()))
    recon_max = float(recon.max())
    return {
        "scenario": scenario.label,
        "assumptions": dict(scenario.assumption_flags),
        "n_factuals": n_factuals,
        "grid_size": len(grid),
        "max_reconstruction_error": recon_max,
        "max_counterfactual_error": cf_max,
        "violation": bool(scenario.all_assumptions and cf_max > recon_max + 1e-9),
    }


def certify_independence(scenario: TheoremScenario, n: int = 2000, rng=None, threshold: float = 0.2) -> dict:
    """Empirical check of assumption 1: HSIC between parent and encoding."""
    rng = rng if rng is not None else substream(0, "theory/certify")
    g = scenario.scm.graph
    vals = scenario.scm.sample_observational(n, rng).values
    pa = vals[:, g.parent_columns(scenario.node)]
    z = scenario.encoder_decoder.encode(vals[:, g.slices()[scenario.node]], pa)
    stat, p = hsic_pvalue(pa, z)
    return {"statistic": stat, "p_value": p, "independent": bool(p > threshold)}


# ---------------------------------------------------------------- translation lemma


def _invert(fn: Callable[[float], float], target: float, lo: float, hi: float) -> float:
    return brentq(lambda u: fn(u) - target, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)


def translation_lemma_check(
    q_family: Callable[[np.ndarray, float], np.ndarray],
    u_grid: np.ndarray | None = None,
    x_grid: np.ndarray | None = None,
    tol: float = 1e-6,
    num_z: int = 101,
    fd_step: float = 1e-5,
) -> dict:
    """Check whether ``dq_x/du`` evaluated at ``q_x^{-1}(z)`` depends on ``x``.

    ``q_family(u, x)`` must be strictly monotone in ``u`` on ``u_grid`` for every
    ``x``. Derivatives use central differences. The shift representation
    ``q_x(u) = q_{x0}(u + r(x))`` is fitted by alignment against the first
    grid value ``x0`` and reported alongside.
    """
    u_grid = np.linspace(0.01, 0.99, 401) if u_grid is None else np.asarray(u_grid, dtype=np.float64)
    x_grid = np.linspace(0.0, 0.5, 6) if x_grid is None else np.asarray(x_grid, dtype=np.float64)
    lo_u, hi_u = float(u_grid[0]), float(u_grid[-1])

    images = []
    for x in x_grid:
        q = np.asarray(q_family(u_grid, x), dtype=np.float64)
        dq = np.diff(q)
        if not (np.all(dq > 0) or np.all(dq < 0)):
            raise ValueError(f"q_x is not strictly monotone on the u grid for x={x}")
        images.append((q.min(), q.max()))
    z_lo = max(a for a, _ in images)
    z_hi = min(b for _, b in images)
    if not z_lo < z_hi:
        raise ValueError("the images of q_x over the u grid do not overlap")
    pad = 1e-6 * (z_hi - z_lo)
    z_grid = np.linspace(z_lo + pad, z_hi - pad, num_z)

    deriv = np.empty((len(x_grid), num_z))
    for a, x in enumerate(x_grid):
        qx = lambda u, x=x: float(q_family(np.asarray(u), x))
        for b, z in enumerate(z_grid):
            u = _invert(qx, z, lo_u, hi_u)
            deriv[a, b] = (qx(u + fd_step) - qx(u - fd_step)) / (2 * fd_step)
    spread = float(np.max(deriv.max(axis=0) - deriv.min(axis=0)))

    # alignment: r(x) = q_{x0}^{-1}(q_x(u)) - u should not depend on u
    q0 = lambda u: float(q_family(np.asarray(u), x_grid[0]))
    q0_lo, q0_hi = sorted((q0(lo_u), q0(hi_u)))
    shifts, shift_resid = [], 0.0
    for x in x_grid:
        qu = np.asarray(q_family(u_grid, x), dtype=np.float64)
        inside = (qu > q0_lo) & (qu < q0_hi)
        if inside.sum() < 2:
            shifts.append(float("nan"))
            shift_resid = float("inf")
            continue
        r = np.array([_invert(q0, v, lo_u, hi_u) for v in qu[inside]]) - u_grid[inside]
        shifts.append(float(np.mean(r)))
        shift_resid = max(shift_resid, float(np.ptp(r)))

    passed = spread <= tol
    return {
        "tolerance": tol,
        "num_u": len(u_grid),
        "x_grid": x_grid.tolist(),
        "z_range": [float(z_lo), float(z_hi)],
        "derivative_spread": spread,
        "passed": bool(passed),
        "shift": shifts,
        "shift_residual": shift_resid,
        "shift_representable": bool(shift_resid <= tol),
        "consistent": bool(passed == (shift_resid <= tol)),
    }


LEMMA_FAMILIES: dict[str, Callable[[np.ndarray, float], np.ndarray]] = {
    "cubic_shift": lambda u, x: (u + x) ** 3,
    "identity": lambda u, x: u + 0.0 * x,
    "multiplicative": lambda u, x: x * u,
}


# ---------------------------------------------------------------- independence experiment


def appendix_b_scm() -> GroundTruthScm:
    """``X2 = X1^2 + U2`` with standard normal ``X1`` and ``U2``."""
    mechs = [RootMechanism(), FunctionMechanism(lambda pa, u: pa ** 2 + u, is_additive=True)]
    return scm_from_mechanisms(_bivariate_graph(1), mechs)


# fit(train, rng) -> encode(test) returning the child latent for each test row
EncoderFit = Callable[[TracedBatch, GroundTruthScm, np.random.Generator], Callable[[TracedBatch], np.ndarray]]


def _fit_true_noise(train, scm, rng):
    sl = scm.graph.slices()[1]
    return lambda test: test.noises[:, sl]


def _fit_dependent(train, scm, rng):
    cols = scm.graph.parent_columns(1)
    return lambda test: test.values[:, cols]


def _fit_anm(train, scm, rng):
    from diffscm.models import fit_anm

    model = fit_anm(train.values, scm.graph, rng)
    g = scm.graph
    return lambda test: model.encode(1, test.values[:, g.slices()[1]], test.values[:, g.parent_columns(1)])


def dcm_encoder(hp=None) -> EncoderFit:
    from diffscm.models import DcmHyperparams, fit_dcm

    hp = hp if hp is not None else DcmHyperparams()

    def fit(train, scm, rng):
        model = fit_dcm(train.values, scm.graph, hp, rng)
        g = scm.graph
        return lambda test: model.encode(1, test.values[:, g.slices()[1]], test.values[:, g.parent_columns(1)])

    return fit


ENCODERS: dict[str, EncoderFit] = {
    "true_noise": _fit_true_noise,
    "dependent": _fit_dependent,
    "anm": _fit_anm,
}


@dataclass
class IndependenceSummary:
    label: str
    p_values: list[float] = field(default_factory=list)

    def summary(self) -> dict:
        p = np.asarray(self.p_values)
        return {
            "label": self.label,
            "trials": len(p),
            "mean": float(p.mean()),
            "std": float(p.std()),
            "quantiles": {str(q): float(np.quantile(p, q)) for q in (0.1, 0.25, 0.5, 0.75, 0.9)},
            "rejection_rate_0.05": float(np.mean(p < 0.05)),
        }


def encoding_independence_report(
    encoder: str | EncoderFit,
    scm: GroundTruthScm | None = None,
    n_train: int = 5000,
    n_test: int = 1000,
    trials: int = 100,
    seed: int = 0,
    label: str | None = None,
) -> IndependenceSummary:
    """HSIC p-values between the parent and the encoding of the child, per trial."""
    scm = scm if scm is not None else appendix_b_scm()
    fit = ENCODERS[encoder] if isinstance(encoder, str) else encoder
    name = label or (encoder if isinstance(encoder, str) else getattr(encoder, "__name__", "custom"))
    out = IndependenceSummary(name)
    cols = scm.graph.parent_columns(1)
    for trial in range(trials):
        rng = substream(seed, "independence/" + name, trial)
        train = scm.sample_observational(n_train, rng)
        test = scm.sample_observational(n_test, rng)
        encode = fit(train, scm, rng)
        _, p = hsic_pvalue(test.values[:, cols], encode(test))
        out.p_values.append(p)
    return out
