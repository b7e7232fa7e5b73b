"""Evolutionary training of phase-adjustment policies.

Differential evolution (rand/1/bin) over the adjustment vector, maximizing the
average sharpness of short simulated campaigns.  The objective is noisy, so
parents and children of each generation are re-scored on a shared
common-random-numbers context before selection, and the final pick must beat
the warm-start baseline on a fresh validation context or the baseline extension
is returned instead (accept-reject gate).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from aqem.engine import input_amplitudes, run_markov_batch, sharpness_from_estimates
from aqem.noise import NoiseSpec, params_from_spec
from aqem.policies import MarkovPolicy
from aqem.states import TWO_PI

# Stream namespaces under the training seed.
_NS_INIT = 0
_NS_EVOLVE = 1
_NS_GENERATION = 2
_NS_VALIDATION = 3


def _stream(seed: int, namespace: int, index: int = 0) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence((seed, namespace, index)))
    )


@dataclass(frozen=True)
class TrainConfig:
    n: int
    noise: NoiseSpec = NoiseSpec("none")
    population: int = 40
    generations: int = 50
    diff_weight: float = 0.7
    crossover: float = 0.9
    samples_per_eval: int | None = None  # defaults to 10 N
    validation_samples: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.population < 4:
            raise ValueError("differential evolution needs a population of >= 4")
        if self.samples_per_eval is not None and self.samples_per_eval < 1:
            raise ValueError("samples_per_eval must be >= 1")
        if not 0 < self.crossover <= 1:
            raise ValueError("crossover rate must be in (0, 1]")
        if self.diff_weight <= 0:
            raise ValueError("diff_weight must be positive")

    @property
    def k_train(self) -> int:
        return self.samples_per_eval if self.samples_per_eval else 10 * self.n


def _draw_context(params, n: int, k: int, rng: np.random.Generator):
    """Shared evaluation context: phi0 block, noise block, outcome-uniform block."""
    phi0s = rng.uniform(0.0, TWO_PI, k)
    raws = params.sample_raw(rng, k * n).reshape(k, n)
    outcome_u = rng.random((k, n))
    return phi0s, raws, outcome_u


def _score_candidates(cands: np.ndarray, amp0, ctx) -> np.ndarray:
    """Average sharpness of every candidate row on one shared context."""
    phi0s, raws, outcome_u = ctx
    n_cand, n = cands.shape
    k = phi0s.shape[0]
    deltas = np.repeat(cands, k, axis=0)
    est = run_markov_batch(
        deltas,
        amp0,
        np.tile(phi0s, n_cand),
        np.tile(raws, (n_cand, 1)),
        np.tile(outcome_u, (n_cand, 1)),
    )
    z = np.exp(1j * (np.tile(phi0s, n_cand) - est)).reshape(n_cand, k)
    return np.abs(z.sum(axis=1)) / k


def evaluate_candidate(deltas, cfg: TrainConfig, rng: np.random.Generator) -> float:
    """Sharpness of ``samples_per_eval`` single-shot estimations with random phi0."""
    deltas = np.asarray(deltas, dtype=float)
    if len(deltas) != cfg.n:
        raise ValueError(f"candidate has {len(deltas)} entries, config wants {cfg.n}")
    params = params_from_spec(cfg.noise)
    ctx = _draw_context(params, cfg.n, cfg.k_train, rng)
    amp0 = input_amplitudes(cfg.n, "sine")
    est = run_markov_batch(np.mod(deltas, TWO_PI), amp0, *ctx)
    return sharpness_from_estimates(ctx[0], est)


def extend_policy(policy: MarkovPolicy) -> np.ndarray:
    """Warm-start vector for N from a trained N-1 policy (one extrapolated entry).

    Trained adjustment schedules decay roughly geometrically, so the appended
    entry continues the ratio of the last two.
    """
    d = policy.deltas
    if len(d) >= 2 and d[-2] > 1e-9:
        extra = d[-1] * min(d[-1] / d[-2], 1.0)
    else:
        extra = d[-1] / 2.0
    return np.mod(np.concatenate([d, [extra]]), TWO_PI)


def _initial_population(cfg: TrainConfig, baseline: np.ndarray | None, rng) -> np.ndarray:
    pop = rng.uniform(0.0, TWO_PI, (cfg.population, cfg.n))
    # logarithmic-search style guess: cheap insurance against a derailed
    # warm-start chain, and a sane anchor for cold starts
    heuristic = np.pi / (np.arange(cfg.n) + 1.0)
    pop[0] = heuristic
    if baseline is not None:
        pop[0] = baseline
        n_jitter = cfg.population // 2
        jitter = 0.3 * rng.standard_normal((n_jitter, cfg.n))
        pop[1 : 1 + n_jitter] = np.mod(baseline + jitter, TWO_PI)
        if cfg.population > n_jitter + 1:
            pop[n_jitter + 1] = heuristic
    return pop


def train_policy(
    cfg: TrainConfig,
    warm_start: MarkovPolicy | None = None,
    log_sink: list | None = None,
) -> MarkovPolicy:
    """Differential-evolution search for the best phase-adjustment vector.

    Identical (cfg, warm_start) inputs give identical policies.  Per
    generation, parents and children are scored on one shared context; the
    returned vector is the validation-best individual, gated against the
    extended warm start.  ``log_sink`` (if given) receives one dict per
    generation with best/mean objective values.
    """
    if warm_start is not None and warm_start.n_particles != cfg.n - 1:
        raise ValueError(
            f"warm start must have {cfg.n - 1} entries, got {warm_start.n_particles}"
        )
    params = params_from_spec(cfg.noise)
    amp0 = input_amplitudes(cfg.n, "sine")
    baseline = extend_policy(warm_start) if warm_start is not None else None

    val_ctx = _draw_context(
        params, cfg.n, cfg.validation_samples, _stream(cfg.seed, _NS_VALIDATION)
    )

    def validate(vecs: np.ndarray) -> np.ndarray:
        return _score_candidates(np.atleast_2d(vecs), amp0, val_ctx)

    notes = {
        "k_train": cfg.k_train,
        "generations": cfg.generations,
        "population": cfg.population,
        "warm_start": warm_start is not None,
    }

    if cfg.generations == 0:
        if baseline is None:
            raise ValueError("generations=0 requires a warm start to extend")
        objective = float(validate(baseline)[0])
        notes["accepted"] = "baseline"
        notes["baseline_objective"] = objective
        return MarkovPolicy(
            n_particles=cfg.n,
            deltas=baseline,
            metadata={
                "trained_on": cfg.noise.to_dict(),
                "seed": cfg.seed,
                "objective": objective,
                **notes,
            },
        )

    pop = _initial_population(cfg, baseline, _stream(cfg.seed, _NS_INIT))
    evolve_rng = _stream(cfg.seed, _NS_EVOLVE)
    n_pop = cfg.population
    for gen in range(cfg.generations):
        # rand/1/bin with wrap-around arithmetic on the circle
        idx = np.arange(n_pop)
        r1 = np.empty(n_pop, dtype=int)
        r2 = np.empty(n_pop, dtype=int)
        r3 = np.empty(n_pop, dtype=int)
        for i in range(n_pop):
            choices = evolve_rng.choice(n_pop - 1, size=3, replace=False)
            choices = np.where(choices >= i, choices + 1, choices)
            r1[i], r2[i], r3[i] = choices
        diff = np.mod(pop[r2] - pop[r3] + np.pi, TWO_PI) - np.pi
        mutants = np.mod(pop[r1] + cfg.diff_weight * diff, TWO_PI)
        cross = evolve_rng.random((n_pop, cfg.n)) < cfg.crossover
        forced = evolve_rng.integers(0, cfg.n, n_pop)
        cross[idx, forced] = True
        children = np.where(cross, mutants, pop)

        ctx = _draw_context(
            params, cfg.n, cfg.k_train, _stream(cfg.seed, _NS_GENERATION, gen)
        )
        scores = _score_candidates(np.vstack([pop, children]), amp0, ctx)
        parent_s, child_s = scores[:n_pop], scores[n_pop:]
        replace = child_s >= parent_s
        pop = np.where(replace[:, None], children, pop)
        gen_best = np.where(replace, child_s, parent_s)
        if log_sink is not None:
            log_sink.append(
                {
                    "generation": gen,
                    "best": float(gen_best.max()),
                    "mean": float(gen_best.mean()),
                }
            )

    val_scores = validate(pop)
    best = int(np.argmax(val_scores))
    chosen = pop[best]
    objective = float(val_scores[best])
    notes["accepted"] = "search"
    if baseline is not None:
        base_obj = float(validate(baseline)[0])
        notes["baseline_objective"] = base_obj
        if base_obj > objective:
            chosen, objective = baseline, base_obj
            notes["accepted"] = "baseline"  # search did not beat the extension
    return MarkovPolicy(
        n_particles=cfg.n,
        deltas=chosen,
        metadata={
            "trained_on": cfg.noise.to_dict(),
            "seed": cfg.seed,
            "objective": objective,
            **notes,
        },
    )
