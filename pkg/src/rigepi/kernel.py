"""Within-clique transmission times and their Laplace transforms.

A clique of size k is a complete directed graph; member 0 is the primary
case, infected at time 0.  Edge (i, j) carries T_ij if T_ij <= I_i and
infinity otherwise, and the passage time to member j is the first-passage
distance from 0 restricted to the clique.
"""
from __future__ import annotations

import hashlib
import heapq
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .weights import DiscreteWeightLaw, ExponentialLaw, WeightLaw

_CHUNK_ENTRIES = 4_000_000


def draw_clique(k_secondaries: int, law_I: WeightLaw, law_T: WeightLaw, rng):
    """Infectious periods of the secondaries and the full contact-time matrix.

    Returns ``(I_sec, T)`` with ``T`` of shape (k+1, k+1); row 0 belongs to the
    primary.  The diagonal is unused.
    """
    size = k_secondaries + 1
    I_sec = np.asarray(law_I.sample(rng, k_secondaries), dtype=float)
    T = np.asarray(law_T.sample(rng, (size, size)), dtype=float)
    return I_sec, T


def clique_passage(I: np.ndarray, T: np.ndarray) -> list[float]:
    """First-passage times from member 0 to every member (member 0 gets 0.0)."""
    size = len(I)
    if size == 2:
        t = T[0, 1]
        return [0.0, float(t) if t <= I[0] else math.inf]
    Tl = T.tolist()
    Il = [float(x) for x in I]
    dist = [math.inf] * size
    dist[0] = 0.0
    done = [False] * size
    heap = [(0.0, 0)]
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        iu = Il[u]
        row = Tl[u]
        for v in range(size):
            if not done[v]:
                t = row[v]
                if t <= iu and d + t < dist[v]:
                    dist[v] = d + t
                    heapq.heappush(heap, (dist[v], v))
    return dist


def passage_batch(I: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Vectorised dense Dijkstra over many independent cliques.

    ``I`` has shape (N, k) and ``T`` shape (N, k, k); returns (N, k) distances
    from member 0.
    """
    N, k = I.shape
    W = np.where(T <= I[:, :, None], T, np.inf)
    idx = np.arange(k)
    W[:, idx, idx] = np.inf
    dist = np.full((N, k), np.inf)
    dist[:, 0] = 0.0
    done = np.zeros((N, k), dtype=bool)
    rows = np.arange(N)
    for _ in range(k - 1):
        u = np.argmin(np.where(done, np.inf, dist), axis=1)
        du = dist[rows, u]
        done[rows, u] = True
        np.minimum(dist, du[:, None] + W[rows, u, :], out=dist)
    return dist


@dataclass(frozen=True, eq=False)
class CliqueKernelMC:
    k: int
    samples: np.ndarray  # sorted; np.inf marks an escape

    @property
    def n_samples(self) -> int:
        return self.samples.size

    @property
    def escape_fraction(self) -> float:
        return float(np.mean(np.isinf(self.samples)))

    def cdf(self, t):
        """Empirical sub-CDF P(d <= t); its limit is P(d < inf)."""
        return np.searchsorted(self.samples, t, side="right") / self.samples.size


def simulate_clique_passage(k: int, law_I: WeightLaw, law_T: WeightLaw, n_samples: int,
                            rng) -> CliqueKernelMC:
    """Monte Carlo sample of the passage time from the primary to one fixed member."""
    if k < 2:
        raise ValueError("clique size must be at least 2")
    chunk = max(1, _CHUNK_ENTRIES // (k * k))
    out = []
    left = n_samples
    while left > 0:
        N = min(chunk, left)
        I = np.asarray(law_I.sample(rng, (N, k)), dtype=float)
        T = np.asarray(law_T.sample(rng, (N, k, k)), dtype=float)
        out.append(passage_batch(I, T)[:, 1])
        left -= N
    samples = np.sort(np.concatenate(out)) if out else np.zeros(0)
    samples.setflags(write=False)
    return CliqueKernelMC(k=k, samples=samples)


def laplace_mc(kernel: CliqueKernelMC, lam: float) -> float:
    """(1/n) sum exp(-lam * d); escapes contribute 0."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    s = kernel.samples
    finite = s[np.isfinite(s)]
    if lam == 0:
        return finite.size / s.size
    return math.fsum(np.exp(-lam * finite)) / s.size


def laplace_mc_stderr(kernel: CliqueKernelMC, lam: float) -> float:
    s = kernel.samples
    vals = np.where(np.isfinite(s), np.exp(-lam * np.where(np.isfinite(s), s, 0.0)), 0.0)
    return float(vals.std(ddof=1) / math.sqrt(s.size))


def exact_laplace_exponential(k: int, beta: float, lam: float) -> float:
    """Transform of the passage time for I = inf and T ~ Exp(beta).

    With j infected out of k, the next infection comes after Exp(j (k-j) beta);
    the tagged member's rank among the k-1 later infections is uniform.
    """
    if k < 2 or not beta > 0 or lam < 0:
        raise ValueError("need k >= 2, beta > 0 and lambda >= 0")
    total = 0.0
    prod = 1.0
    for j in range(1, k):
        rate = j * beta * (k - j)
        prod *= rate / (rate + lam)
        total += prod
    return total / (k - 1)


def is_exact_family(law_I: WeightLaw, law_T: WeightLaw) -> bool:
    infinite_I = (isinstance(law_I, DiscreteWeightLaw) and len(law_I.values) == 1
                  and math.isinf(law_I.values[0]))
    return infinite_I and isinstance(law_T, ExponentialLaw)


@dataclass(frozen=True)
class LaplaceVector:
    lam: float
    values: np.ndarray  # transforms for clique sizes 2..K+1
    K: int


class KernelCache:
    """Sorted passage samples per clique size, shared across every lambda.

    Reusing the same samples for all lambda (common random numbers) makes
    the Monte Carlo transform exactly non-increasing in lambda.  With a
    ``directory`` the samples are also persisted as ``.npy`` files keyed by
    (k, law hash, n_samples).
    """

    def __init__(self, law_I: WeightLaw, law_T: WeightLaw, n_samples: int, rng,
                 directory: str | Path | None = None):
        self.law_I = law_I
        self.law_T = law_T
        self.n_samples = n_samples
        self.rng = rng
        self.directory = Path(directory) if directory is not None else None
        self._kernels: dict[int, CliqueKernelMC] = {}

    def law_hash(self) -> str:
        blob = json.dumps([self.law_I.to_config(), self.law_T.to_config()], sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def _path(self, k: int) -> Path:
        return self.directory / f"kernel_k{k}_{self.law_hash()}_n{self.n_samples}.npy"

    def get(self, k: int) -> CliqueKernelMC:
        if k not in self._kernels:
            kern = None
            if self.directory is not None and self._path(k).exists():
                kern = CliqueKernelMC(k, np.load(self._path(k)))
            if kern is None:
                kern = simulate_clique_passage(k, self.law_I, self.law_T, self.n_samples, self.rng)
                if self.directory is not None:
                    self.directory.mkdir(parents=True, exist_ok=True)
                    np.save(self._path(k), kern.samples)
            self._kernels[k] = kern
        return self._kernels[k]

    def transforms(self, K: int, lam: float) -> np.ndarray:
        return np.array([laplace_mc(self.get(k), lam) for k in range(2, K + 2)])

    def stderrs(self, K: int, lam: float) -> np.ndarray:
        return np.array([laplace_mc_stderr(self.get(k), lam) for k in range(2, K + 2)])


def laplace_vector(law_I: WeightLaw, law_T: WeightLaw, K: int, lam: float, n_samples: int = 100_000,
                   rng=None, exact: bool | None = None, cache: KernelCache | None = None
                   ) -> LaplaceVector:
    """(L_2, ..., L_{K+1}) at ``lam``, in closed form when the laws allow it."""
    if K < 1:
        raise ValueError("K must be at least 1")
    if exact is None:
        exact = is_exact_family(law_I, law_T)
    if exact:
        if not is_exact_family(law_I, law_T):
            raise ValueError("closed form needs I = inf and exponential T")
        beta = law_T.rate
        vals = np.array([exact_laplace_exponential(k, beta, lam) for k in range(2, K + 2)])
    else:
        if cache is None:
            if rng is None:
                raise ValueError("Monte Carlo transforms need an rng or a kernel cache")
            cache = KernelCache(law_I, law_T, n_samples, rng)
        vals = cache.transforms(K, lam)
    return LaplaceVector(lam=lam, values=vals, K=K)
