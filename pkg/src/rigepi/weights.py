"""Weight laws, mixed Poisson sampling, size-biasing and Poisson distances.

Laws are small immutable objects exposing ``sample``, moments, ``cdf``/``ppf``
and the pmf of the mixed Poisson law they induce.  ``math.inf`` is the
sentinel for an infinite infectious period; it is only legal in laws that
are never size-biased or averaged (``law_I``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate, stats
from scipy.special import gammaln

INFINITE = math.inf

_ATOM_TOL = 1e-12


class ModelError(ValueError):
    """A weight model violates the standing assumptions on A, B, I, T."""


def poisson_pmf(k, lam):
    """Poisson pmf evaluated in log space; safe for very large intensities."""
    k = np.asarray(k, dtype=float)
    lam = float(lam)
    if lam < 0:
        raise ValueError("negative Poisson intensity")
    if lam == 0.0:
        return np.where(k == 0, 1.0, 0.0)
    return np.exp(k * math.log(lam) - lam - gammaln(k + 1.0))


def _poisson_kmax(lam: float, tail: float) -> int:
    if lam == 0.0:
        return 1
    return int(stats.poisson.isf(tail, lam)) + 2


class WeightLaw:
    """Base class; subclasses are frozen dataclasses."""

    kind = "abstract"

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def second_moment(self) -> float:
        raise NotImplementedError

    @property
    def prob_zero(self) -> float:
        return 0.0

    @property
    def has_infinite_mass(self) -> bool:
        return False

    def cdf(self, x):
        raise NotImplementedError

    def ppf(self, u):
        raise NotImplementedError

    def size_biased(self) -> "WeightLaw":
        raise NotImplementedError

    def mp_pmf(self, kmax: int) -> np.ndarray:
        """P(MP(X) = k) for k = 0..kmax."""
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class DiscreteWeightLaw(WeightLaw):
    values: tuple
    probs: tuple

    kind = "discrete"

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        probs = tuple(float(p) for p in self.probs)
        if len(vals) == 0 or len(vals) != len(probs):
            raise ValueError("atoms must be a non-empty list of (value, probability)")
        if any(v < 0 or math.isnan(v) for v in vals):
            raise ValueError("atom values must be non-negative")
        if any(p < 0 or p > 1 for p in probs):
            raise ValueError("atom probabilities must lie in [0, 1]")
        if abs(math.fsum(probs) - 1.0) > _ATOM_TOL:
            raise ValueError(f"atom probabilities sum to {math.fsum(probs)!r}, not 1")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("atom values must be distinct and sorted")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_atoms(cls, atoms: Sequence[tuple[float, float]]) -> "DiscreteWeightLaw":
        """Build from unsorted atoms, merging repeated values and dropping zero mass."""
        merged: dict[float, float] = {}
        for v, p in atoms:
            merged[float(v)] = merged.get(float(v), 0.0) + float(p)
        items = sorted((v, p) for v, p in merged.items() if p > 0)
        return cls(tuple(v for v, _ in items), _fix_sum([p for _, p in items]))

    @classmethod
    def constant(cls, c: float) -> "DiscreteWeightLaw":
        return cls((float(c),), (1.0,))

    @classmethod
    def two_point(cls, a: float, b: float, p_a: float = 0.5) -> "DiscreteWeightLaw":
        return cls.from_atoms([(a, p_a), (b, 1.0 - p_a)])

    @classmethod
    def from_samples(cls, samples) -> "DiscreteWeightLaw":
        vals, counts = np.unique(np.asarray(samples, dtype=float), return_counts=True)
        return cls(tuple(vals), _fix_sum(list(counts / counts.sum())))

    @cached_property
    def _v(self) -> np.ndarray:
        return np.asarray(self.values)

    @cached_property
    def _p(self) -> np.ndarray:
        return np.asarray(self.probs)

    @cached_property
    def _cum(self) -> np.ndarray:
        c = np.cumsum(self._p)
        c[-1] = 1.0
        return c

    def sample(self, rng, size=None):
        if len(self.values) == 1:
            return self.values[0] if size is None else np.full(size, self.values[0])
        idx = np.searchsorted(self._cum, rng.random(size), side="right")
        idx = np.minimum(idx, len(self.values) - 1)
        return self._v[idx] if size is not None else float(self._v[idx])

    @property
    def has_infinite_mass(self) -> bool:
        return math.isinf(self.values[-1])

    @property
    def mean(self) -> float:
        if self.has_infinite_mass:
            return INFINITE
        return math.fsum(v * p for v, p in zip(self.values, self.probs))

    @property
    def second_moment(self) -> float:
        if self.has_infinite_mass:
            return INFINITE
        return math.fsum(v * v * p for v, p in zip(self.values, self.probs))

    @property
    def prob_zero(self) -> float:
        return self.probs[0] if self.values[0] == 0.0 else 0.0

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self._v, x, side="right")
        out = np.where(idx > 0, self._cum[np.maximum(idx - 1, 0)], 0.0)
        return out if out.ndim else float(out)

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        idx = np.minimum(np.searchsorted(self._cum, u, side="left"), len(self.values) - 1)
        out = self._v[idx]
        return out if out.ndim else float(out)

    def size_biased(self) -> "DiscreteWeightLaw":
        return size_bias(self)

    def mp_pmf(self, kmax: int) -> np.ndarray:
        if self.has_infinite_mass:
            raise ValueError("mixed Poisson with infinite intensity is undefined")
        k = np.arange(kmax + 1)
        out = np.zeros(kmax + 1)
        for v, p in zip(self.values, self.probs):
            out += p * poisson_pmf(k, v)
        return out

    def to_config(self) -> dict:
        if len(self.values) == 1:
            return {"kind": "constant", "value": self.values[0]}
        return {"kind": "discrete", "values": list(self.values), "probs": list(self.probs)}


@dataclass(frozen=True)
class GammaLaw(WeightLaw):
    """Gamma(shape, scale); MP(Gamma) is negative binomial, so pmfs are exact."""

    shape: float
    scale: float

    kind = "gamma"

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("gamma law needs shape > 0 and scale > 0")

    def sample(self, rng, size=None):
        return rng.gamma(self.shape, self.scale, size)

    @property
    def mean(self) -> float:
        return self.shape * self.scale

    @property
    def second_moment(self) -> float:
        return self.shape * (self.shape + 1.0) * self.scale**2

    def cdf(self, x):
        return stats.gamma.cdf(x, self.shape, scale=self.scale)

    def ppf(self, u):
        return stats.gamma.ppf(u, self.shape, scale=self.scale)

    def size_biased(self) -> "GammaLaw":
        return GammaLaw(self.shape + 1.0, self.scale)

    def mp_pmf(self, kmax: int) -> np.ndarray:
        k = np.arange(kmax + 1, dtype=float)
        a, s = self.shape, self.scale
        logp = (gammaln(k + a) - gammaln(k + 1.0) - gammaln(a)
                + k * math.log(s / (1.0 + s)) - a * math.log1p(s))
        return np.exp(logp)

    def to_config(self) -> dict:
        return {"kind": "gamma", "shape": self.shape, "scale": self.scale}


@dataclass(frozen=True)
class ExponentialLaw(GammaLaw):
    """Exponential law parametrised by its mean."""

    shape: float = field(default=1.0, init=False)
    scale: float = 1.0

    kind = "exponential"

    @classmethod
    def with_rate(cls, rate: float) -> "ExponentialLaw":
        return cls(scale=1.0 / rate)

    @property
    def rate(self) -> float:
        return 1.0 / self.scale

    def sample(self, rng, size=None):
        return rng.exponential(self.scale, size)

    def to_config(self) -> dict:
        return {"kind": "exponential", "mean": self.scale}


def _fix_sum(probs: list) -> tuple:
    # push the rounding residue of a normalisation onto the largest atom
    probs = [float(p) for p in probs]
    if probs and abs(math.fsum(probs) - 1.0) <= 1e-9:
        i = max(range(len(probs)), key=probs.__getitem__)
        probs[i] += 1.0 - math.fsum(probs)
    return tuple(probs)


def law_from_config(cfg: dict, base_dir: Path | None = None) -> WeightLaw:
    """Parse ``{kind: constant|two_point|discrete|exponential|gamma|empirical_file|infinite, ...}``."""
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    try:
        if kind == "constant":
            (value,) = _pop(cfg, "value")
            return DiscreteWeightLaw.constant(float(value))
        if kind == "infinite":
            _pop(cfg)
            return DiscreteWeightLaw.constant(INFINITE)
        if kind == "two_point":
            values, probs = _pop(cfg, "values", "probs")
            if len(values) != 2 or len(probs) != 2:
                raise ValueError("two_point needs exactly two values and two probs")
            return DiscreteWeightLaw.from_atoms(list(zip(values, probs)))
        if kind == "discrete":
            values, probs = _pop(cfg, "values", "probs")
            return DiscreteWeightLaw.from_atoms(list(zip(values, probs)))
        if kind == "exponential":
            if "rate" in cfg:
                (rate,) = _pop(cfg, "rate")
                return ExponentialLaw.with_rate(float(rate))
            (mean,) = _pop(cfg, "mean")
            return ExponentialLaw(scale=float(mean))
        if kind == "gamma":
            shape, scale = _pop(cfg, "shape", "scale")
            return GammaLaw(float(shape), float(scale))
        if kind == "empirical_file":
            (path,) = _pop(cfg, "path")
            path = Path(path)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            return DiscreteWeightLaw.from_samples(read_weight_file(path))
    except KeyError as exc:
        raise ValueError(f"law of kind {kind!r} is missing parameter {exc.args[0]!r}") from None
    raise ValueError(f"unknown law kind {kind!r}")


def _pop(cfg: dict, *names):
    out = [cfg.pop(name) for name in names]
    if cfg:
        raise ValueError(f"unexpected law parameters: {sorted(cfg)}")
    return out


def read_weight_file(path) -> np.ndarray:
    """Newline-delimited non-negative decimals; blank lines are skipped."""
    vals = [float(line) for line in Path(path).read_text().split() if line.strip()]
    arr = np.asarray(vals, dtype=float)
    if arr.size == 0 or np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValueError(f"{path}: expected a non-empty list of finite non-negative numbers")
    return arr


@dataclass(frozen=True)
class WeightModel:
    """Laws of the vertex weight A, group weight B, infectious period I and contact time T."""

    law_A: WeightLaw
    law_B: WeightLaw
    law_I: WeightLaw
    law_T: WeightLaw

    @property
    def mu_A(self) -> float:
        return self.law_A.mean

    @property
    def mu_B(self) -> float:
        return self.law_B.mean

    @property
    def mu_A_bar(self) -> float:
        return self.law_A.second_moment / self.law_A.mean

    @property
    def mu_B_bar(self) -> float:
        return self.law_B.second_moment / self.law_B.mean

    @property
    def p_T0(self) -> float:
        """P(T' = 0) = P(T = 0), since T = 0 never exceeds I >= 0."""
        return self.law_T.prob_zero

    def validate(self) -> "WeightModel":
        for name, law in (("A", self.law_A), ("B", self.law_B)):
            if law.has_infinite_mass:
                raise ModelError(f"{name} must be finite")
            if law.prob_zero >= 1.0 or not law.mean > 0:
                raise ModelError(f"P({name}=0) must be < 1")
            if not math.isfinite(law.second_moment):
                raise ModelError(f"E({name}^2 log+ {name}) must be finite")
        if self.law_T.has_infinite_mass:
            raise ModelError("contact time T must be finite")
        return self

    def check_growth_assumption(self) -> None:
        """Refuse models whose branching approximation would explode."""
        threshold = 1.0 / (self.mu_A_bar * self.mu_B_bar)
        if self.p_T0 >= threshold:
            raise ModelError(
                f"P(T'=0)={self.p_T0:g} must be < 1/(mu_Abar mu_Bbar)={threshold:g}")

    def to_config(self) -> dict:
        return {"A": self.law_A.to_config(), "B": self.law_B.to_config(),
                "I": self.law_I.to_config(), "T": self.law_T.to_config()}


def sample_mixed_poisson(intensity_law: WeightLaw, rng: np.random.Generator, size=None):
    """K with K | X=x ~ Poisson(x), X drawn from ``intensity_law``."""
    return rng.poisson(intensity_law.sample(rng, size))


def size_bias(law: DiscreteWeightLaw) -> DiscreteWeightLaw:
    mu = law.mean
    if not mu > 0:
        raise ValueError("size-biasing undefined for a law with zero mean")
    if math.isinf(mu):
        raise ValueError("size-biasing undefined for a law with infinite mean")
    atoms = [(v, v * p / mu) for v, p in zip(law.values, law.probs) if v > 0]
    total = math.fsum(p for _, p in atoms)
    return DiscreteWeightLaw.from_atoms([(v, p / total) for v, p in atoms])


class AliasTable:
    """Vose alias table: O(n) build, O(1) weighted index draws."""

    def __init__(self, weights):
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or w.size == 0 or np.any(w < 0):
            raise ValueError("weights must be a non-empty 1-d array of non-negative reals")
        total = w.sum()
        if not total > 0:
            raise ValueError("cannot sample from all-zero weights")
        n = w.size
        scaled = (w * (n / total)).tolist()
        prob = [0.0] * n
        alias = list(range(n))
        small = [i for i, p in enumerate(scaled) if p < 1.0]
        large = [i for i, p in enumerate(scaled) if p >= 1.0]
        while small and large:
            s = small.pop()
            g = large.pop()
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] = (scaled[g] + scaled[s]) - 1.0
            (small if scaled[g] < 1.0 else large).append(g)
        some_positive = int(np.argmax(w))
        for i in large + small:
            # leftovers are rounding residue; zero-weight slots must never fire
            if w[i] > 0:
                prob[i] = 1.0
            else:
                prob[i] = 0.0
                alias[i] = some_positive
        self.prob = np.asarray(prob)
        self.alias = np.asarray(alias, dtype=np.int64)

    def __len__(self):
        return self.prob.size

    def sample(self, rng, size=None):
        i = rng.integers(0, self.prob.size, size=size)
        u = rng.random(size)
        out = np.where(u < self.prob[i], i, self.alias[i])
        return out if size is not None else int(out)


@dataclass(frozen=True, eq=False)
class EmpiricalWeights:
    """Realised weights A_1..A_n (or B_1..B_m) with their size-biased samplers."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 1:
            raise ValueError("need at least one weight")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("weights must be finite and non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @cached_property
    def sum(self) -> float:
        return math.fsum(self.values)

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def mean(self) -> float:
        return self.sum / self.n

    @cached_property
    def alias(self) -> AliasTable:
        return AliasTable(self.values)

    @cached_property
    def _sorted(self) -> tuple[np.ndarray, np.ndarray]:
        order = np.argsort(self.values, kind="stable")
        cum = np.cumsum(self.values[order])
        cum /= cum[-1]
        return order, cum

    def size_biased_quantile(self, u):
        """Index at quantile ``u`` of the size-biased empirical law (comonotone draws)."""
        if not self.sum > 0:
            raise ValueError("cannot size-bias all-zero weights")
        order, cum = self._sorted
        pos = np.minimum(np.searchsorted(cum, u, side="right"), self.n - 1)
        out = order[pos]
        return out if np.ndim(out) else int(out)

    def size_biased_law(self) -> DiscreteWeightLaw:
        return size_bias(DiscreteWeightLaw.from_samples(self.values))


def sample_size_biased_empirical(w: EmpiricalWeights, rng, size=None):
    """Index i with probability values[i]/sum, together with its value."""
    if not w.sum > 0:
        raise ValueError("cannot size-bias all-zero weights")
    idx = w.alias.sample(rng, size)
    return idx, w.values[idx]


def sized_biased_mp_identity_check(law_A: DiscreteWeightLaw, k_max: int) -> float:
    """max_k |P(Dbar - 1 = k) - P(MP(Abar) = k)| over k = 0..k_max, D ~ MP(A)."""
    mu = law_A.mean
    pmf_D = law_A.mp_pmf(k_max + 1)
    j = np.arange(k_max + 1)
    shifted = (j + 1) * pmf_D[1:] / mu
    direct = size_bias(law_A).mp_pmf(k_max)
    return float(np.max(np.abs(shifted - direct)))


def poisson_tv(a: float, b: float) -> float:
    """sum_k |Po(a){k} - Po(b){k}|  (the L1 distance, i.e. twice the usual TV)."""
    if a < 0 or b < 0:
        raise ValueError("Poisson intensities must be non-negative")
    if not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError("Poisson intensities must be finite")
    if a == b:
        return 0.0
    kmax = max(_poisson_kmax(a, 1e-15), _poisson_kmax(b, 1e-15))
    k = np.arange(kmax + 1)
    return float(np.sum(np.abs(poisson_pmf(k, a) - poisson_pmf(k, b))))


def wasserstein1_sqrt_empirical(w: EmpiricalWeights, law: WeightLaw) -> float:
    """W1 between sqrt of the size-biased empirical law and sqrt of the size-biased ``law``."""
    if not w.sum > 0:
        raise ValueError("cannot size-bias all-zero weights")
    emp = w.size_biased_law()
    ex = np.sqrt(np.asarray(emp.values))
    ecum = np.cumsum(emp.probs)
    target = law.size_biased()
    if isinstance(target, DiscreteWeightLaw):
        tx = np.sqrt(np.asarray(target.values))
        grid = np.union1d(ex, tx)
        f_emp = _step_cdf(ex, ecum, grid)
        f_tgt = _step_cdf(tx, np.cumsum(target.probs), grid)
        return float(np.sum(np.abs(f_emp[:-1] - f_tgt[:-1]) * np.diff(grid)))

    def gap(x):
        return abs(_step_cdf(ex, ecum, np.array([x]))[0] - float(target.cdf(x * x)))

    # integrate piecewise between empirical atoms; the law's CDF is smooth in between
    knots = np.concatenate([[0.0], ex, [max(ex[-1], math.sqrt(float(target.ppf(1 - 1e-13))))]])
    total = 0.0
    for lo, hi in zip(knots[:-1], knots[1:]):
        if hi > lo:
            total += integrate.quad(gap, lo, hi, limit=200, epsabs=1e-13)[0]
    tail = integrate.quad(lambda x: 1.0 - float(target.cdf(x * x)), knots[-1], np.inf)[0]
    return total + tail


def _step_cdf(xs, cum, grid):
    idx = np.searchsorted(xs, grid, side="right")
    return np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)
