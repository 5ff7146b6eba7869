"""Seeded generation of sparse regression instances ``y = X beta_o + w``.

``X`` has iid N(0, 1/n) entries, ``beta_o`` has exactly ``k`` nonzeros placed
uniformly at random, and ``w`` is iid N(0, sigma_w^2).  All randomness comes
from numpy's PCG64 bit generator.  One root seed is expanded through
:class:`numpy.random.SeedSequence` into three independent child streams (one
each for ``X``, ``beta_o`` and ``w``), so changing the noise level never
changes the matrix or the signal drawn for a given seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "SignalPrior",
    "GenConfig",
    "ProblemInstance",
    "generate",
    "column_norms",
    "streamed_first_pseudo_data",
    "save_instance",
    "load_instance",
]

# rows of X generated per block; bounds peak memory in streamed generation
_ROW_BLOCK = 512


@dataclass(frozen=True)
class SignalPrior:
    """Discrete law of a signal coordinate: atoms plus an implicit mass at 0."""

    atoms: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        atoms = tuple((float(v), float(q)) for v, q in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        probs = [q for _, q in atoms]
        if any(q < 0 for q in probs):
            raise ValueError("atom probabilities must be nonnegative")
        if sum(probs) > 1.0 + 1e-12:
            raise ValueError(f"atom probabilities sum to {sum(probs)} > 1")

    @classmethod
    def point_mass(cls, value: float, prob: float) -> "SignalPrior":
        """``P(B = value) = prob``, ``P(B = 0) = 1 - prob``."""
        return cls(((value, prob),))

    @classmethod
    def zero(cls) -> "SignalPrior":
        return cls(())

    @property
    def zero_mass(self) -> float:
        return max(0.0, 1.0 - sum(q for _, q in self.atoms))

    @property
    def nonzero_mass(self) -> float:
        return 1.0 - self.zero_mass

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """Values and weights including the zero atom (weights sum to 1)."""
        vals = [0.0] + [v for v, _ in self.atoms]
        wts = [self.zero_mass] + [q for _, q in self.atoms]
        return np.asarray(vals), np.asarray(wts)

    def second_moment(self) -> float:
        return float(sum(q * v * v for v, q in self.atoms))

    def nonzero_values(self) -> tuple[np.ndarray, np.ndarray]:
        """Atom values and their probabilities conditioned on ``B != 0``."""
        atoms = [(v, q) for v, q in self.atoms if v != 0.0 and q > 0.0]
        if not atoms:
            return np.zeros(0), np.zeros(0)
        vals = np.array([v for v, _ in atoms])
        probs = np.array([q for _, q in atoms])
        return vals, probs / probs.sum()

    def to_dict(self) -> dict:
        return {"atoms": [[v, q] for v, q in self.atoms]}

    @classmethod
    def from_dict(cls, d: dict) -> "SignalPrior":
        return cls(tuple((float(v), float(q)) for v, q in d.get("atoms", [])))


@dataclass(frozen=True)
class GenConfig:
    p: int
    delta: float
    rho: float
    prior: SignalPrior = field(default_factory=lambda: SignalPrior(((1.0, 1.0),)))
    sigma_w: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 1:
            raise ValueError(f"p must be a positive integer, got {self.p}")
        if not 0.0 < self.delta <= 1.0:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if self.sigma_w < 0:
            raise ValueError("sigma_w must be nonnegative")
        if self.n < 1:
            raise ValueError(f"n = floor(delta*p) = {self.n} must be >= 1")
        if self.k > self.p:
            raise ValueError(f"k = {self.k} exceeds p = {self.p}")
        if self.k > 0 and len(self.prior.nonzero_values()[0]) == 0:
            raise ValueError("prior has no nonzero atoms but k > 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def n(self) -> int:
        return int(np.floor(self.delta * self.p + 1e-9))

    @property
    def k(self) -> int:
        return int(np.floor(self.rho * self.n + 1e-9))

    def empirical_prior(self) -> SignalPrior:
        """The prior whose nonzero mass equals the realised fraction ``k/p``."""
        vals, probs = self.prior.nonzero_values()
        frac = self.k / self.p
        return SignalPrior(tuple((float(v), float(q * frac)) for v, q in zip(vals, probs)))

    def asymptotic_prior(self) -> SignalPrior:
        """The limiting prior: nonzero mass ``rho * delta``."""
        vals, probs = self.prior.nonzero_values()
        frac = self.rho * self.delta
        return SignalPrior(tuple((float(v), float(q * frac)) for v, q in zip(vals, probs)))

    def replace(self, **changes) -> "GenConfig":
        d = {f: getattr(self, f) for f in ("p", "delta", "rho", "prior", "sigma_w", "seed")}
        d.update(changes)
        return GenConfig(**d)

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "delta": self.delta,
            "rho": self.rho,
            "prior": self.prior.to_dict(),
            "sigma_w": self.sigma_w,
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        prior = d.get("prior")
        return cls(
            p=int(d["p"]),
            delta=float(d["delta"]),
            rho=float(d["rho"]),
            prior=SignalPrior.from_dict(prior) if prior is not None else SignalPrior(((1.0, 1.0),)),
            sigma_w=float(d.get("sigma_w", 0.0)),
            seed=int(d.get("seed", 0)),
        )


@dataclass
class ProblemInstance:
    config: GenConfig
    beta_o: np.ndarray
    X: np.ndarray
    w: np.ndarray
    y: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def _streams(seed: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(int(seed)).spawn(3)
    return [np.random.Generator(np.random.PCG64(s)) for s in children]


def _draw_signal(config: GenConfig, rng: np.random.Generator) -> np.ndarray:
    beta = np.zeros(config.p)
    k = config.k
    if k == 0:
        return beta
    support = rng.choice(config.p, size=k, replace=False)
    vals, probs = config.prior.nonzero_values()
    if len(vals) == 1:
        beta[support] = vals[0]
    else:
        beta[support] = rng.choice(vals, size=k, p=probs)
    return beta


def _x_blocks(config: GenConfig, rng: np.random.Generator) -> Iterator[np.ndarray]:
    # Row blocks drawn in order from one stream reproduce the single-draw matrix exactly.
    n, p = config.n, config.p
    scale = 1.0 / np.sqrt(n)
    for start in range(0, n, _ROW_BLOCK):
        rows = min(_ROW_BLOCK, n - start)
        block = rng.standard_normal((rows, p))
        block *= scale
        yield block


def generate(config: GenConfig) -> ProblemInstance:
    """Draw one instance; bitwise reproducible for a given ``config``."""
    rng_x, rng_beta, rng_w = _streams(config.seed)
    n, p = config.n, config.p
    X = np.empty((n, p))
    start = 0
    for block in _x_blocks(config, rng_x):
        X[start : start + block.shape[0]] = block
        start += block.shape[0]
    beta_o = _draw_signal(config, rng_beta)
    if config.sigma_w > 0:
        w = config.sigma_w * rng_w.standard_normal(n)
    else:
        w = np.zeros(n)
    y = X @ beta_o + w
    return ProblemInstance(config=config, beta_o=beta_o, X=X, w=w, y=y)


def streamed_first_pseudo_data(config: GenConfig) -> tuple[np.ndarray, np.ndarray, float]:
    """``X^T y`` for the instance ``generate(config)`` would build, without storing ``X``.

    Returns ``(pseudo_data, beta_o, sigma_hat)`` with ``sigma_hat = ||y|| / sqrt(n)``.
    Needed when ``n * p`` doubles do not fit in memory; only the first AMP
    iterate (``beta = 0``, ``z = y``) can be formed this way.
    """
    rng_x, rng_beta, rng_w = _streams(config.seed)
    beta_o = _draw_signal(config, rng_beta)
    n = config.n
    w = config.sigma_w * rng_w.standard_normal(n) if config.sigma_w > 0 else np.zeros(n)
    xty = np.zeros(config.p)
    ysq = 0.0
    start = 0
    for block in _x_blocks(config, rng_x):
        rows = block.shape[0]
        yb = block @ beta_o + w[start : start + rows]
        xty += block.T @ yb
        ysq += float(yb @ yb)
        start += rows
    return xty, beta_o, float(np.sqrt(ysq / n))


def column_norms(instance: ProblemInstance) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->j", instance.X, instance.X))


def save_instance(instance: ProblemInstance, path: str | Path, *, dump_arrays: bool = False) -> None:
    """Write the generating config as JSON; optionally the arrays as ``.npz`` beside it."""
    path = Path(path)
    path.write_text(json.dumps(instance.config.to_dict(), indent=2, sort_keys=True))
    if dump_arrays:
        np.savez(
            path.with_suffix(".npz"),
            beta_o=instance.beta_o,
            X=instance.X,
            w=instance.w,
            y=instance.y,
        )


def load_instance(path: str | Path) -> ProblemInstance:
    """Regenerate an instance from a saved config."""
    config = GenConfig.from_dict(json.loads(Path(path).read_text()))
    return generate(config)


def prior_from_pairs(pairs: Sequence[Sequence[float]]) -> SignalPrior:
    return SignalPrior(tuple((float(v), float(q)) for v, q in pairs))
