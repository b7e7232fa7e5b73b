"""Feedback controllers for adaptive phase estimation.

Two controllers are implemented:

* ``MarkovPolicy``: the trained phase-adjustment vector.  After outcome x of
  photon m the feedback moves by ``-(-1)^x * delta[m]``; constant work per
  photon, O(N) stored parameters.
* Bayesian filter (``BayesState`` plus the ``bayes_*`` functions): tracks the
  unnormalized conditional state as a trigonometric polynomial in the unknown
  phase and picks each feedback by maximizing the expected posterior sharpness.
  The model is the noiseless channel even when the engine injects noise.

Convention: the interferometer rotates one photon by exp(i*theta*sigma_y) with
theta = (phi - Phi)/2, so the per-photon Kraus entries are cos((phi-Phi)/2) and
+-sin((phi-Phi)/2).  ``BayesState.coeff[n, j]`` multiplies exp(i*k*phi/2) with
k = 2j - m after m detections: the k-band grows by one unit per photon and the
stored column count stays m+1 because only one parity class is populated.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from aqem.noise import NoiseSpec
from aqem.states import TWO_PI, ZeroProbabilityError, sine_state, wrap_angle

# Feedback search: coarse grid then golden-section polish.
_PHASE_GRID = np.linspace(0.0, TWO_PI, 1024, endpoint=False)
_PHASE_GRID_STEP = TWO_PI / 1024
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_GOLDEN_ITERS = 48  # interval ~ 2*step * 0.618^48 < 1e-12 rad


@dataclass(frozen=True)
class MarkovPolicy:
    """Phase-adjustment vector with its training provenance."""

    n_particles: int
    deltas: np.ndarray = field(repr=False)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        deltas = np.mod(np.asarray(self.deltas, dtype=float), TWO_PI)
        if len(deltas) != self.n_particles:
            raise ValueError(
                f"policy for N={self.n_particles} needs {self.n_particles} "
                f"adjustments, got {len(deltas)}"
            )
        object.__setattr__(self, "deltas", deltas)

    def to_json_dict(self) -> dict:
        meta = dict(self.metadata)
        out = {
            "n": self.n_particles,
            "deltas": [float(d) for d in self.deltas],
            "trained_on": meta.pop("trained_on", NoiseSpec("none").to_dict()),
            "seed": int(meta.pop("seed", 0)),
            "objective": float(meta.pop("objective", float("nan"))),
        }
        if meta:
            out["metadata"] = meta
        return out

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")

    @classmethod
    def from_json_dict(cls, d: dict) -> "MarkovPolicy":
        meta = dict(d.get("metadata", {}))
        meta["trained_on"] = d.get("trained_on", NoiseSpec("none").to_dict())
        meta["seed"] = d.get("seed", 0)
        meta["objective"] = d.get("objective", float("nan"))
        return cls(n_particles=int(d["n"]), deltas=np.asarray(d["deltas"]), metadata=meta)

    @classmethod
    def load(cls, path) -> "MarkovPolicy":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def markov_next_phase(
    policy: MarkovPolicy, current: float, m: int, outcome: int
) -> float:
    """Feedback after photon m (1-based): current - (-1)^outcome * delta_m, mod 2*pi."""
    if not 1 <= m <= policy.n_particles:
        raise IndexError(f"photon index {m} outside 1..{policy.n_particles}")
    sign = -1.0 if outcome == 0 else 1.0
    return wrap_angle(current + sign * policy.deltas[m - 1])


@dataclass(frozen=True)
class BayesState:
    """Unnormalized conditional state of the Bayesian filter.

    ``coeff[n, j]`` is the coefficient of exp(i*(2j - m)*phi/2) in the
    amplitude of ``|n, remaining-n>`` after ``m_detected`` outcomes; entry
    count is O(N^2).  The density it implies, p(phi) ~ sum_n |A_n(phi)|^2,
    is the joint outcome probability as a function of the candidate phase.
    """

    n_total: int
    m_detected: int
    coeff: np.ndarray = field(repr=False)
    current_phase: float = 0.0

    @property
    def remaining(self) -> int:
        return self.n_total - self.m_detected

    @property
    def entry_count(self) -> int:
        return int(self.coeff.size)

    def posterior_density(self, phis: np.ndarray) -> np.ndarray:
        """Unnormalized posterior density evaluated at the given phases."""
        phis = np.asarray(phis, dtype=float)
        m = self.m_detected
        ks = 2.0 * np.arange(m + 1) - m
        waves = np.exp(0.5j * np.outer(ks, phis))
        amps = self.coeff @ waves
        return np.sum(np.abs(amps) ** 2, axis=0)

    def posterior_mass(self) -> float:
        """Integral of the unnormalized posterior over [0, 2*pi) (Parseval)."""
        return TWO_PI * float(np.sum(np.abs(self.coeff) ** 2))


def bayes_init(n_photons: int, amplitudes: np.ndarray | None = None) -> BayesState:
    """Filter state before any detection: uniform prior over the phase.

    ``amplitudes`` defaults to the sine state; pass ``product_state(N).amp``
    for the unentangled reference input.
    """
    n = int(n_photons)
    if not 1 <= n <= 100:
        raise ValueError(f"N={n} outside the supported range 1..100")
    if amplitudes is None:
        amplitudes = sine_state(n).amp
    amplitudes = np.asarray(amplitudes, dtype=np.complex128)
    coeff = amplitudes[:, None].copy()
    return BayesState(n_total=n, m_detected=0, coeff=coeff, current_phase=0.0)


def _branch_coefficients(state: BayesState):
    """Fourier-coefficient analogues of the single-photon branch amplitudes."""
    m_rem = state.remaining
    if m_rem < 1:
        raise ValueError("all photons already detected")
    coeff = state.coeff
    d = coeff.shape[0]
    ns = np.arange(d)
    f0 = np.sqrt((m_rem - ns) / m_rem)
    c0 = f0[:, None] * coeff
    c1 = np.zeros_like(c0)
    f1 = np.sqrt((ns[:-1] + 1) / m_rem)
    if d > 1:
        c1[:-1] = f1[:, None] * coeff[1:]
    return c0, c1


def bayes_update(state: BayesState, feedback: float, outcome: int) -> BayesState:
    """Condition the filter on one outcome observed with the given feedback.

    Multiplying by cos((phi-feedback)/2) or +-sin((phi-feedback)/2) shifts the
    half-phase harmonic index by +-1 with weights exp(-+ i*feedback/2)/2, so
    the stored band widens by one column; the state is left unnormalized.
    """
    if outcome not in (0, 1):
        raise ValueError(f"outcome must be 0 or 1, got {outcome}")
    c0, c1 = _branch_coefficients(state)
    p = c0 - 1j * c1
    q = c0 + 1j * c1
    u = np.exp(0.5j * feedback)
    ubar = np.conj(u)
    d, width = c0.shape
    d_new = min(d, state.remaining)
    new = np.zeros((d_new, width + 1), dtype=np.complex128)
    if outcome == 0:
        new[:, 1:] += 0.5 * ubar * p[:d_new]
        new[:, :-1] += 0.5 * u * q[:d_new]
    else:
        new[:, 1:] += 0.5j * ubar * p[:d_new]
        new[:, :-1] += -0.5j * u * q[:d_new]
    if float(np.sum(np.abs(new) ** 2)) <= 1e-280:
        raise ZeroProbabilityError(
            f"outcome {outcome} has probability zero under the filter model"
        )
    return BayesState(
        n_total=state.n_total,
        m_detected=state.m_detected + 1,
        coeff=new,
        current_phase=wrap_angle(feedback),
    )


def _sharpness_quadratic(state: BayesState):
    """Coefficients (A, B, C) of c1_x(Phi) = A +- (B e^{i Phi} + C e^{-i Phi}).

    c1_x is the e^{i phi} Fourier coefficient of the unnormalized posterior
    density after hypothetical outcome x with feedback Phi; the expected
    posterior sharpness is M(Phi) = |c1_0| + |c1_1|.
    """
    c0, c1 = _branch_coefficients(state)
    p = c0 - 1j * c1
    q = c0 + 1j * c1
    s_pp = np.vdot(p[:, :-1], p[:, 1:]) if p.shape[1] > 1 else 0.0
    s_qq = np.vdot(q[:, :-1], q[:, 1:]) if q.shape[1] > 1 else 0.0
    s_pq = np.vdot(q, p)
    s_qp = np.vdot(p[:, :-2], q[:, 2:]) if p.shape[1] > 2 else 0.0
    a = (s_pp + s_qq) / 4.0
    b = s_qp / 4.0
    c = s_pq / 4.0
    return a, b, c


def _expected_sharpness(a, b, c, phi):
    z = np.exp(1j * np.asarray(phi))
    inner = b * z + c / z
    return np.abs(a + inner) + np.abs(a - inner)


def bayes_optimal_phase(state: BayesState) -> float:
    """Feedback maximizing expected posterior sharpness for the next photon.

    Grid scan plus golden-section polish; plateaus (e.g. the uniform prior)
    fall back to the canonical tie-break value 0.
    """
    a, b, c = _sharpness_quadratic(state)
    scale = abs(a) + abs(b) + abs(c)
    vals = _expected_sharpness(a, b, c, _PHASE_GRID)
    if vals.max() - vals.min() <= 1e-12 * max(scale, 1e-300):
        return 0.0
    # reflection-symmetric posteriors produce exactly degenerate mirror maxima;
    # take the smallest-phase one so every code path breaks the tie identically
    near = vals >= vals.max() - 1e-9 * max(scale, 1e-300)
    center = _PHASE_GRID[int(np.argmax(near))]
    lo, hi = center - _PHASE_GRID_STEP, center + _PHASE_GRID_STEP
    for _ in range(_GOLDEN_ITERS):
        x1 = hi - _GOLDEN * (hi - lo)
        x2 = lo + _GOLDEN * (hi - lo)
        if _expected_sharpness(a, b, c, x1) < _expected_sharpness(a, b, c, x2):
            lo = x1
        else:
            hi = x2
    return wrap_angle(0.5 * (lo + hi))


def bayes_estimate(state: BayesState) -> float:
    """Final estimate: mean direction arg(Int e^{i phi} p(phi) dphi) of the posterior."""
    if state.m_detected != state.n_total:
        raise ValueError(
            f"estimate requested after {state.m_detected} of {state.n_total} photons"
        )
    coeff = state.coeff
    # e^{i phi} density coefficient: adjacent stored columns differ by
    # a full unit of phi (half-phase index step 2).
    c1 = np.vdot(coeff[:, :-1], coeff[:, 1:]) if coeff.shape[1] > 1 else 0.0
    total = float(np.sum(np.abs(coeff) ** 2))
    if abs(c1) < 1e-14 * max(total, 1e-300):
        raise ValueError("posterior has no first harmonic; estimate undefined")
    # c1 as computed is the e^{+i phi} coefficient; the mean direction is the
    # argument of its conjugate.
    return wrap_angle(-math.atan2(c1.imag, c1.real))
