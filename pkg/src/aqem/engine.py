"""Monte Carlo engine: single-shot adaptive estimation and sharpness campaigns.

Trials are reproducible and order-independent: trial k of a campaign draws all
its randomness from a Philox stream keyed by (master_seed, k, retry), so the
same master seed yields bit-identical results for any worker count or chunk
size.  Both controllers run vectorized across trials; ``run_single_shot`` is
the same code path with a batch of one.

Per-trial draw order (part of the reproducibility contract): the uniform
phi0, then the N raw noise offsets, then the N outcome uniforms.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from aqem.noise import NoiseParams, NoiseSpec, params_from_spec
from aqem.policies import (
    MarkovPolicy,
    _expected_sharpness,
    _GOLDEN,
    _GOLDEN_ITERS,
    _PHASE_GRID,
    _PHASE_GRID_STEP,
)
from aqem.states import TWO_PI, product_state, sine_state

CHUNK_TRIALS = 512
ABORT_LIMIT_FRACTION = 1e-3
MAX_RETRIES = 8

RESULTS_HEADER = "n,policy,model,variance,skewness,trials,sharpness,holevo,seed,aborts,wall_ms"


def trial_rng(master_seed: int, trial: int, retry: int = 0) -> np.random.Generator:
    """Counter-based stream for one trial: Philox keyed by (seed, trial, retry)."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence((master_seed, trial, retry)))
    )


def draw_trial_inputs(params: NoiseParams, n_photons: int, rng: np.random.Generator):
    """All randomness one trial consumes, in the pinned order."""
    phi0 = rng.uniform(0.0, TWO_PI)
    raws = params.sample_raw(rng, n_photons)
    outcome_u = rng.random(n_photons)
    return phi0, raws, outcome_u


def input_amplitudes(n_photons: int, input_state: str) -> np.ndarray:
    if input_state == "sine":
        return sine_state(n_photons).amp
    if input_state == "product":
        # support never leaves n = 0, so one row is enough
        return product_state(n_photons).amp[:1]
    raise ValueError(f"unknown input state {input_state!r}")


def _photon_step(amp, m_rem, theta, u):
    """One photon off every trial: returns (new amp, outcomes, branch prob)."""
    k_tr, d = amp.shape
    ns = np.arange(d)
    f0 = np.sqrt((m_rem - ns) / m_rem)
    f1 = np.sqrt((ns[:-1] + 1) / m_rem) if d > 1 else None
    c0 = f0 * amp
    c1 = np.zeros_like(c0)
    if d > 1:
        c1[:, :-1] = f1 * amp[:, 1:]
    ct = np.cos(theta)[:, None]
    st = np.sin(theta)[:, None]
    a0 = ct * c0 + st * c1
    a1 = -st * c0 + ct * c1
    p0 = np.sum(np.abs(a0) ** 2, axis=1)
    outcomes = (u >= p0).astype(np.int8)
    chosen = np.where(outcomes[:, None] == 0, a0, a1)
    p_br = np.where(outcomes == 0, p0, 1.0 - p0)
    d_new = min(d, m_rem)
    return chosen[:, :d_new] / np.sqrt(p_br)[:, None], outcomes, p_br


def run_markov_batch(deltas, amp0, phi0s, raws, outcome_u, return_outcomes=False):
    """Adaptive shots under a phase-adjustment policy, vectorized over trials.

    ``deltas`` may be a single (N,) vector or per-trial (K, N) rows.
    Returns the estimates phi_tilde = Phi_N (and the outcome strings on request).
    """
    phi0s = np.asarray(phi0s, dtype=float)
    k_tr = phi0s.shape[0]
    deltas = np.asarray(deltas, dtype=float)
    if deltas.ndim == 1:
        deltas = np.broadcast_to(deltas, (k_tr, deltas.shape[0]))
    n = deltas.shape[1]
    amp = np.broadcast_to(np.asarray(amp0, dtype=np.complex128), (k_tr, len(amp0))).copy()
    feedback = np.zeros(k_tr)
    outs = np.empty((k_tr, n), dtype=np.int8) if return_outcomes else None
    for m in range(n):
        phi_m = np.mod(phi0s + raws[:, m], TWO_PI)
        theta = np.mod(phi_m - feedback, TWO_PI) / 2.0
        amp, outcomes, _ = _photon_step(amp, n - m, theta, outcome_u[:, m])
        if return_outcomes:
            outs[:, m] = outcomes
        sign = np.where(outcomes == 0, -1.0, 1.0)
        feedback = np.mod(feedback + sign * deltas[:, m], TWO_PI)
    return (feedback, outs) if return_outcomes else feedback


def _batch_optimal_phase(coeff, m_rem):
    """Vectorized expected-sharpness maximization over the feedback phase."""
    k_tr, d, w = coeff.shape
    ns = np.arange(d)
    f0 = np.sqrt((m_rem - ns) / m_rem)
    c0 = f0[:, None] * coeff
    c1 = np.zeros_like(c0)
    if d > 1:
        f1 = np.sqrt((ns[:-1] + 1) / m_rem)
        c1[:, :-1] = f1[:, None] * coeff[:, 1:]
    p = c0 - 1j * c1
    q = c0 + 1j * c1
    if w > 1:
        s_pp = np.einsum("knj,knj->k", p[:, :, 1:], np.conj(p[:, :, :-1]))
        s_qq = np.einsum("knj,knj->k", q[:, :, 1:], np.conj(q[:, :, :-1]))
    else:
        s_pp = s_qq = np.zeros(k_tr, dtype=np.complex128)
    s_pq = np.einsum("knj,knj->k", p, np.conj(q))
    if w > 2:
        s_qp = np.einsum("knj,knj->k", q[:, :, 2:], np.conj(p[:, :, :-2]))
    else:
        s_qp = np.zeros(k_tr, dtype=np.complex128)
    a = (s_pp + s_qq) / 4.0
    b = s_qp / 4.0
    c = s_pq / 4.0
    grid_e = np.exp(1j * _PHASE_GRID)
    inner = b[:, None] * grid_e[None, :] + c[:, None] * np.conj(grid_e)[None, :]
    vals = np.abs(a[:, None] + inner) + np.abs(a[:, None] - inner)
    scale = np.maximum(np.abs(a) + np.abs(b) + np.abs(c), 1e-300)
    flat = (vals.max(axis=1) - vals.min(axis=1)) <= 1e-12 * scale
    # smallest-phase pick among degenerate mirror maxima (matches the scalar path)
    near = vals >= (vals.max(axis=1) - 1e-9 * scale)[:, None]
    center = _PHASE_GRID[np.argmax(near, axis=1)]
    lo = center - _PHASE_GRID_STEP
    hi = center + _PHASE_GRID_STEP
    for _ in range(_GOLDEN_ITERS):
        x1 = hi - _GOLDEN * (hi - lo)
        x2 = lo + _GOLDEN * (hi - lo)
        take = _expected_sharpness(a, b, c, x1) < _expected_sharpness(a, b, c, x2)
        lo = np.where(take, x1, lo)
        hi = np.where(take, hi, x2)
    out = np.mod(0.5 * (lo + hi), TWO_PI)
    return np.where(flat, 0.0, out)


def run_bayes_batch(n, amp0, phi0s, raws, outcome_u, return_outcomes=False):
    """Adaptive shots under the Bayesian controller, vectorized over trials.

    Returns (estimates, aborted): ``aborted`` marks trials whose realized
    outcome string was assigned zero probability by the filter model (or whose
    final posterior had no first harmonic); their estimate entries are NaN.
    Large batches are processed in memory-bounded sub-batches (the feedback
    grid search allocates trials x 1024 scratch); results are elementwise per
    trial, so splitting never changes values.
    """
    phi0s = np.asarray(phi0s, dtype=float)
    k_tr = phi0s.shape[0]
    if k_tr > 4 * CHUNK_TRIALS:
        ests, abts = [], []
        outs = [] if return_outcomes else None
        for a in range(0, k_tr, 4 * CHUNK_TRIALS):
            sl = slice(a, a + 4 * CHUNK_TRIALS)
            part = run_bayes_batch(
                n, amp0, phi0s[sl], raws[sl], outcome_u[sl], return_outcomes
            )
            ests.append(part[0])
            abts.append(part[1])
            if return_outcomes:
                outs.append(part[2])
        est = np.concatenate(ests)
        ab = np.concatenate(abts)
        if return_outcomes:
            return est, ab, np.concatenate(outs)
        return est, ab
    amp0 = np.asarray(amp0, dtype=np.complex128)
    amp = np.broadcast_to(amp0, (k_tr, len(amp0))).copy()
    coeff = amp[:, :, None].copy()
    feedback = np.zeros(k_tr)
    aborted = np.zeros(k_tr, dtype=bool)
    outs = np.empty((k_tr, n), dtype=np.int8) if return_outcomes else None
    for m in range(n):
        m_rem = n - m
        feedback = _batch_optimal_phase(coeff, m_rem)
        phi_m = np.mod(phi0s + raws[:, m], TWO_PI)
        theta = np.mod(phi_m - feedback, TWO_PI) / 2.0
        amp, outcomes, _ = _photon_step(amp, m_rem, theta, outcome_u[:, m])
        if return_outcomes:
            outs[:, m] = outcomes
        # filter update mirrors the physical branching with the noiseless model
        d = coeff.shape[1]
        ns = np.arange(d)
        f0 = np.sqrt((m_rem - ns) / m_rem)
        c0 = f0[:, None] * coeff
        c1 = np.zeros_like(c0)
        if d > 1:
            f1 = np.sqrt((ns[:-1] + 1) / m_rem)
            c1[:, :-1] = f1[:, None] * coeff[:, 1:]
        p = c0 - 1j * c1
        q = c0 + 1j * c1
        u_half = np.exp(0.5j * feedback)
        sgn = np.where(outcomes == 0, 1.0 + 0j, 1j)[:, None, None]
        d_new = min(d, m_rem)
        w = coeff.shape[2]
        new = np.zeros((k_tr, d_new, w + 1), dtype=np.complex128)
        new[:, :, 1:] = sgn * (0.5 * np.conj(u_half)[:, None, None] * p[:, :d_new])
        new[:, :, :-1] += np.conj(sgn) * (0.5 * u_half[:, None, None] * q[:, :d_new])
        mass = np.sum(np.abs(new) ** 2, axis=(1, 2))
        aborted |= mass <= 1e-280
        coeff = new
    c1_coef = np.einsum("knj,knj->k", coeff[:, :, 1:], np.conj(coeff[:, :, :-1]))
    total = np.sum(np.abs(coeff) ** 2, axis=(1, 2))
    aborted |= np.abs(c1_coef) < 1e-14 * np.maximum(total, 1e-300)
    estimates = np.mod(-np.arctan2(c1_coef.imag, c1_coef.real), TWO_PI)
    estimates[aborted] = np.nan
    return (estimates, aborted, outs) if return_outcomes else (estimates, aborted)


class BayesController:
    """Marker object selecting the Bayesian controller for a given input state."""

    def __init__(self, input_state: str = "sine"):
        self.input_state = input_state

    def policy_id(self) -> str:
        return "bayes" if self.input_state == "sine" else "sql"


def _resolve_controller(controller):
    if isinstance(controller, str):
        if controller == "bayes":
            return BayesController("sine")
        if controller == "sql":
            return BayesController("product")
        raise ValueError(f"unknown controller {controller!r}")
    return controller


def run_single_shot(controller, n, params: NoiseParams, phi0, rng) -> float:
    """One adaptive estimation: returns the estimate phi_tilde = Phi_N.

    Same vectorized code path as the campaigns, with a batch of one; ``rng``
    supplies the noise draws and outcome uniforms in the pinned order.
    """
    controller = _resolve_controller(controller)
    raws = params.sample_raw(rng, n)[None, :]
    us = rng.random(n)[None, :]
    phi0s = np.array([phi0], dtype=float)
    if isinstance(controller, MarkovPolicy):
        if controller.n_particles != n:
            raise ValueError(
                f"policy sized for N={controller.n_particles}, asked N={n}"
            )
        amp0 = input_amplitudes(n, "sine")
        return float(run_markov_batch(controller.deltas, amp0, phi0s, raws, us)[0])
    amp0 = input_amplitudes(n, controller.input_state)
    est, aborted = run_bayes_batch(n, amp0, phi0s, raws, us)
    if aborted[0]:
        from aqem.states import ZeroProbabilityError

        raise ZeroProbabilityError("zero-probability branch in single shot")
    return float(est[0])


@dataclass(frozen=True)
class RunRecord:
    """One (policy, N, noise) Monte Carlo point."""

    n: int
    policy: str
    noise: NoiseSpec
    trials: int
    sharpness: float
    holevo: float
    master_seed: int
    aborts: int = 0
    wall_ms: float = 0.0
    valid: bool = True

    def csv_row(self) -> str:
        return ",".join(
            [
                str(self.n),
                self.policy,
                self.noise.model,
                repr(float(self.noise.variance)),
                repr(float(self.noise.skewness)),
                str(self.trials),
                repr(float(self.sharpness)),
                repr(float(self.holevo)),
                str(self.master_seed),
                str(self.aborts),
                repr(float(self.wall_ms)),
            ]
        )

    @classmethod
    def from_csv_row(cls, row: str) -> "RunRecord":
        f = row.strip().split(",")
        noise = NoiseSpec(model=f[2], variance=float(f[3]), skewness=float(f[4]))
        return cls(
            n=int(f[0]),
            policy=f[1],
            noise=noise,
            trials=int(f[5]),
            sharpness=float(f[6]),
            holevo=float(f[7]),
            master_seed=int(f[8]),
            aborts=int(f[9]),
            wall_ms=float(f[10]),
        )


@dataclass
class VarianceCurve:
    """Ordered (N, V_H) series sharing one noise point and controller family."""

    policy: str
    noise: NoiseSpec
    points: list = field(default_factory=list)  # (n, holevo) tuples

    def ns(self):
        return [p[0] for p in self.points]

    def holevos(self):
        return [p[1] for p in self.points]


def sharpness_from_estimates(phi0s, estimates) -> float:
    """S = |sum exp(i(phi0 - estimate))| / K, accumulated in trial order."""
    z = np.exp(1j * (np.asarray(phi0s) - np.asarray(estimates)))
    return float(abs(np.sum(z)) / len(z))


def holevo_from_sharpness(s: float) -> float:
    return s**-2 - 1.0


def _chunk_task(args):
    (controller_kind, payload, n, params, master_seed, start, stop) = args
    k = stop - start
    phi0s = np.empty(k)
    raws = np.empty((k, n))
    us = np.empty((k, n))
    for i, trial in enumerate(range(start, stop)):
        rng = trial_rng(master_seed, trial)
        phi0s[i], raws[i], us[i] = draw_trial_inputs(params, n, rng)
    aborts = 0
    if controller_kind == "markov":
        amp0 = input_amplitudes(n, "sine")
        est = run_markov_batch(payload, amp0, phi0s, raws, us)
    else:
        amp0 = input_amplitudes(n, payload)
        est, aborted = run_bayes_batch(n, amp0, phi0s, raws, us)
        for i in np.flatnonzero(aborted):
            trial = start + int(i)
            for retry in range(1, MAX_RETRIES + 1):
                aborts += 1
                rng = trial_rng(master_seed, trial, retry)
                p0, rw, uu = draw_trial_inputs(params, n, rng)
                e2, ab2 = run_bayes_batch(n, amp0, np.array([p0]), rw[None], uu[None])
                if not ab2[0]:
                    phi0s[i] = p0
                    est[i] = e2[0]
                    break
            else:
                raise RuntimeError(f"trial {trial} aborted {MAX_RETRIES} times")
    return start, phi0s, est, aborts


def estimate_sharpness_variance(
    controller,
    n: int,
    noise: NoiseSpec,
    trials: int,
    master_seed: int,
    workers: int = 1,
    policy_id: str | None = None,
    return_estimates: bool = False,
):
    """Monte Carlo sharpness/Holevo-variance estimate over ``trials`` shots.

    Reproducible for a given master seed independent of ``workers``; each
    trial k draws from a stream keyed by (master_seed, k).
    """
    if trials < 100:
        raise ValueError("need at least 100 trials for a sharpness estimate")
    controller = _resolve_controller(controller)
    params = params_from_spec(noise)
    if isinstance(controller, MarkovPolicy):
        if controller.n_particles != n:
            raise ValueError(f"policy sized for N={controller.n_particles}, not {n}")
        kind, payload = "markov", controller.deltas
        pid = policy_id or "rl"
    elif isinstance(controller, BayesController):
        kind, payload = "bayes", controller.input_state
        pid = policy_id or controller.policy_id()
    else:
        raise TypeError(f"unsupported controller {controller!r}")

    t0 = time.perf_counter()
    tasks = [
        (kind, payload, n, params, master_seed, a, min(a + CHUNK_TRIALS, trials))
        for a in range(0, trials, CHUNK_TRIALS)
    ]
    results = []
    if workers > 1 and len(tasks) > 1:
        with get_context("fork").Pool(processes=workers) as pool:
            results = pool.map(_chunk_task, tasks)
    else:
        results = [_chunk_task(t) for t in tasks]
    results.sort(key=lambda r: r[0])
    phi0s = np.concatenate([r[1] for r in results])
    estimates = np.concatenate([r[2] for r in results])
    aborts = sum(r[3] for r in results)
    wall_ms = (time.perf_counter() - t0) * 1e3
    s = sharpness_from_estimates(phi0s, estimates)
    record = RunRecord(
        n=n,
        policy=pid,
        noise=noise,
        trials=trials,
        sharpness=s,
        holevo=holevo_from_sharpness(s),
        master_seed=master_seed,
        aborts=aborts,
        wall_ms=wall_ms,
        valid=aborts <= ABORT_LIMIT_FRACTION * trials,
    )
    if return_estimates:
        return record, phi0s, estimates
    return record


def default_trials(n: int) -> int:
    """Sampling rule K = 10 N^2."""
    return 10 * n * n


class MissingPolicyError(RuntimeError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"no trained policy for N in {self.missing}")


def sweep_curve(
    family: str,
    n_values,
    noise: NoiseSpec,
    master_seed: int,
    policies: dict | None = None,
    trials_fn=None,
    workers: int = 1,
) -> tuple[VarianceCurve, list]:
    """Variance curve over N for one noise point.

    ``family`` is "bayes", "sql" (Bayesian controller on the product input),
    or "rl" (requires ``policies`` mapping N -> MarkovPolicy).
    """
    n_values = sorted(int(x) for x in n_values)
    trials_fn = trials_fn or default_trials
    if family == "rl":
        missing = [n for n in n_values if not policies or n not in policies]
        if missing:
            raise MissingPolicyError(missing)
    curve = VarianceCurve(policy=family, noise=noise)
    records = []
    for n in n_values:
        controller = policies[n] if family == "rl" else family
        rec = estimate_sharpness_variance(
            controller,
            n,
            noise,
            trials=trials_fn(n),
            master_seed=master_seed,
            workers=workers,
            policy_id=family,
        )
        curve.points.append((n, rec.holevo))
        records.append(rec)
    return curve, records


def append_results(path, records, provenance: str | None = None) -> None:
    """Append records to the results CSV, writing the header if new."""
    path = Path(path)
    lines = []
    if not path.exists() or path.stat().st_size == 0:
        lines.append(RESULTS_HEADER)
    if provenance:
        lines.append(f"# {provenance}")
    lines.extend(r.csv_row() for r in records)
    with path.open("a") as fh:
        fh.write("\n".join(lines) + "\n")


def read_results(path) -> list:
    """Read every record from a results CSV (comment lines ignored)."""
    records = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("n,"):
            continue
        records.append(RunRecord.from_csv_row(line))
    return records


def measure_shot_time(controller, n: int, trials: int = 200, repeats: int = 3) -> float:
    """Best-of-``repeats`` wall time per shot, in seconds."""
    controller = _resolve_controller(controller)
    params = params_from_spec(NoiseSpec("none"))
    rng = trial_rng(12345, 0)
    phi0s = rng.uniform(0.0, TWO_PI, trials)
    raws = np.zeros((trials, n))
    us = rng.random((trials, n))
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        if isinstance(controller, MarkovPolicy):
            run_markov_batch(controller.deltas, input_amplitudes(n, "sine"), phi0s, raws, us)
        else:
            run_bayes_batch(n, input_amplitudes(n, controller.input_state), phi0s, raws, us)
        best = min(best, (time.perf_counter() - t0) / trials)
    return best
