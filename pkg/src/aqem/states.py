"""Exact simulation of multiphoton interferometry in the permutation-symmetric subspace.

An N-photon permutation-symmetric pure state is stored as the complex amplitude
vector over the basis ``|n, M-n>`` (n photons in the second mode, M photons still
undetected), so splitting off and measuring one photon at a time costs O(M) per
step instead of O(2^M).  A dense 2^N tensor-product oracle is included for
cross-checking the reduction on small N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi

# Dense oracle memory grows as 2^N; 8 photons is plenty for verification.
DENSE_ORACLE_MAX_N = 8

# Double precision holds the sine-state construction together up to 100 photons;
# beyond that the Wigner-d sums need quadruple precision.
MAX_PHOTONS = 100


class ZeroProbabilityError(RuntimeError):
    """Raised when conditioning on a measurement branch of probability zero."""


def wrap_angle(phi: float) -> float:
    """Reduce an angle in radians to the canonical interval [0, 2*pi)."""
    return float(np.mod(phi, TWO_PI))


def _jacobi_poly(n: int, a: int, b: int, x: float) -> float:
    """P_n^{(a,b)}(x) by the three-term recurrence (stable for |x| <= 1)."""
    if n == 0:
        return 1.0
    p0 = 1.0
    p1 = 0.5 * (a - b + (a + b + 2.0) * x)
    for k in range(2, n + 1):
        c1 = 2.0 * k * (k + a + b) * (2.0 * k + a + b - 2.0)
        c2 = (2.0 * k + a + b - 1.0) * (a * a - b * b)
        c3 = (2.0 * k + a + b - 2.0) * (2.0 * k + a + b - 1.0) * (2.0 * k + a + b)
        c4 = 2.0 * (k + a - 1.0) * (k + b - 1.0) * (2.0 * k + a + b)
        p0, p1 = p1, ((c2 + c3 * x) * p1 - c4 * p0) / c1
    return p1


def _check_half_integers(j: float, m: float, mp: float) -> None:
    for name, val in (("j", j), ("m", m), ("mp", mp)):
        if abs(2 * val - round(2 * val)) > 1e-9:
            raise ValueError(f"{name}={val} is not a half-integer")
    if j < 0:
        raise ValueError(f"j={j} must be nonnegative")
    if abs(m) > j + 1e-9 or abs(mp) > j + 1e-9:
        raise ValueError(f"|m|={abs(m)} and |mp|={abs(mp)} must not exceed j={j}")
    if abs((j - m) - round(j - m)) > 1e-9 or abs((j - mp) - round(j - mp)) > 1e-9:
        raise ValueError("m and mp must differ from j by integers")


def wigner_d(j: float, m: float, mp: float, beta: float) -> float:
    """Wigner d-function d^j_{m,mp}(beta) = <j,m| exp(-i*beta*Jy) |j,mp>.

    Evaluated through the Jacobi-polynomial representation with a log-factorial
    prefactor.  The recurrence keeps the evaluation stable for 2j up to at
    least 200, where the textbook alternating sum over factorials loses all
    significant digits.
    """
    _check_half_integers(j, m, mp)
    # Map into the region ket >= |bra| where the Jacobi form applies, using
    # d_{a,b} = (-1)^{a-b} d_{b,a} = d_{-b,-a}.
    a, b = m, mp
    sign = 1.0
    if b >= abs(a):
        pass
    elif a >= abs(b):
        sign = (-1.0) ** round(a - b)
        a, b = b, a
    elif -a >= abs(b):
        a, b = -b, -a
    else:
        sign = (-1.0) ** round(a - b)
        a, b = -a, -b
    mu = round(b - a)
    nu = round(b + a)
    n = round(j - b)
    half = 0.5 * beta
    ln_norm = 0.5 * (
        math.lgamma(n + 1)
        + math.lgamma(n + mu + nu + 1)
        - math.lgamma(n + mu + 1)
        - math.lgamma(n + nu + 1)
    )
    val = (
        math.exp(ln_norm)
        * math.sin(half) ** mu
        * math.cos(half) ** nu
        * _jacobi_poly(n, mu, nu, math.cos(beta))
    )
    return sign * val


def wigner_d_matrix(j: float, beta: float) -> np.ndarray:
    """Full (2j+1) x (2j+1) matrix [d^j_{m,mp}(beta)], m and mp from -j to j."""
    ms = np.arange(-j, j + 1)
    return np.array([[wigner_d(j, a, b, beta) for b in ms] for a in ms])


@dataclass(frozen=True)
class SymmetricState:
    """Permutation-symmetric state of ``remaining`` undetected photons.

    ``amp[n]`` is the coefficient of ``|n, remaining - n>``; the vector has
    length ``remaining + 1`` and unit norm.  Instances are treated as
    immutable; measurement returns a new state.
    """

    remaining: int
    amp: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.remaining < 0:
            raise ValueError("remaining photon count must be >= 0")
        if len(self.amp) != self.remaining + 1:
            raise ValueError(
                f"amplitude vector has length {len(self.amp)}, "
                f"expected {self.remaining + 1}"
            )

    @property
    def norm_sq(self) -> float:
        return float(np.sum(np.abs(self.amp) ** 2))


def sine_state(n_photons: int) -> SymmetricState:
    """N-photon sine state, the loss-tolerant input minimizing phase imprecision.

    amp[n] = (N/2+1)^{-1/2} sum_k sin((k+1)pi/(N+2)) e^{i pi (k-n)/2}
             d^{N/2}_{n-N/2, k-N/2}(pi/2)
    """
    n = int(n_photons)
    if n < 1:
        raise ValueError(f"need at least one photon, got {n}")
    if n > MAX_PHOTONS:
        raise ValueError(
            f"N={n} exceeds the double-precision validated range (N <= {MAX_PHOTONS})"
        )
    j = n / 2.0
    ks = np.arange(n + 1)
    weights = np.sin((ks + 1) * np.pi / (n + 2))
    amp = np.zeros(n + 1, dtype=np.complex128)
    for idx in range(n + 1):
        d_row = np.array([wigner_d(j, idx - j, k - j, np.pi / 2) for k in ks])
        phases = np.exp(1j * np.pi * (ks - idx) / 2.0)
        amp[idx] = np.sum(weights * phases * d_row)
    amp /= math.sqrt(n / 2.0 + 1.0)
    amp /= math.sqrt(float(np.sum(np.abs(amp) ** 2)))  # scrub rounding residue
    return SymmetricState(remaining=n, amp=amp)


def product_state(n_photons: int) -> SymmetricState:
    """Product input |0,1>^(x)N: every photon in the same mode (amp = e_0)."""
    n = int(n_photons)
    if n < 1:
        raise ValueError(f"need at least one photon, got {n}")
    amp = np.zeros(n + 1, dtype=np.complex128)
    amp[0] = 1.0
    return SymmetricState(remaining=n, amp=amp)


def _branch_amplitudes(state: SymmetricState, theta: float):
    """Unnormalized post-measurement amplitude vectors for ports 0 and 1.

    One photon is split off via |n,M-n> = sqrt(n/M)|1>|n-1,M-n> +
    sqrt((M-n)/M)|0>|n,M-1-n>, rotated by exp(i*theta*sigma_y) =
    [[cos t, sin t], [-sin t, cos t]] on (|0>, |1>), and projected on the port.
    """
    m_rem = state.remaining
    if m_rem < 1:
        raise ValueError("no photons left to detect")
    amp = state.amp
    ns = np.arange(m_rem)
    c0 = np.sqrt((m_rem - ns) / m_rem) * amp[:-1]
    c1 = np.sqrt((ns + 1) / m_rem) * amp[1:]
    ct, st = math.cos(theta), math.sin(theta)
    return ct * c0 + st * c1, -st * c0 + ct * c1


def detection_probability(state: SymmetricState, theta: float, port: int) -> float:
    """Probability that the next photon exits through ``port`` (0 or 1)."""
    if port not in (0, 1):
        raise ValueError(f"port must be 0 or 1, got {port}")
    a0, a1 = _branch_amplitudes(state, theta)
    branch = a0 if port == 0 else a1
    return float(np.sum(np.abs(branch) ** 2))


def collapse(state: SymmetricState, theta: float, port: int) -> SymmetricState:
    """Renormalized post-measurement state after detecting one photon in ``port``."""
    if port not in (0, 1):
        raise ValueError(f"port must be 0 or 1, got {port}")
    a0, a1 = _branch_amplitudes(state, theta)
    branch = a0 if port == 0 else a1
    norm_sq = float(np.sum(np.abs(branch) ** 2))
    if norm_sq <= 1e-280:
        raise ZeroProbabilityError(
            f"measurement branch port={port} has probability ~ {norm_sq:.3e}"
        )
    return SymmetricState(remaining=state.remaining - 1, amp=branch / math.sqrt(norm_sq))


def _dense_dicke(n_photons: int, amplitudes: np.ndarray) -> np.ndarray:
    """Dense 2^N vector for sum_n amp[n] |Dicke_n> with qubit axes (2,)*N."""
    psi = np.zeros((2,) * n_photons, dtype=np.complex128)
    flat = psi.reshape(-1)
    for idx in range(2**n_photons):
        ones = bin(idx).count("1")
        flat[idx] = amplitudes[ones] / math.sqrt(math.comb(n_photons, ones))
    return psi


def dense_oracle(
    n_photons: int,
    thetas,
    outcomes,
    amplitudes: np.ndarray | None = None,
) -> float:
    """Joint outcome-string probability from the full 2^N tensor-product state.

    Applies the per-photon rotation and projection qubit by qubit without
    renormalizing, so the final squared norm is the joint probability.  Test
    oracle only; refuses N above DENSE_ORACLE_MAX_N.
    """
    n = int(n_photons)
    if n > DENSE_ORACLE_MAX_N:
        raise ValueError(f"dense oracle limited to N <= {DENSE_ORACLE_MAX_N}, got {n}")
    thetas = list(thetas)
    outcomes = [int(x) for x in outcomes]
    if len(thetas) != n or len(outcomes) != n:
        raise ValueError("need one theta and one outcome per photon")
    if amplitudes is None:
        amplitudes = sine_state(n).amp
    psi = _dense_dicke(n, np.asarray(amplitudes, dtype=np.complex128))
    for theta, port in zip(thetas, outcomes):
        ct, st = math.cos(theta), math.sin(theta)
        a0 = ct * psi[0] + st * psi[1]
        a1 = -st * psi[0] + ct * psi[1]
        psi = a0 if port == 0 else a1
    return float(np.sum(np.abs(psi) ** 2))
