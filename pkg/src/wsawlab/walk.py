"""Continuous-time simple random walk: exact sampling and local times.

Two samplers are provided. :func:`sample_path` builds one path from
inverse-CDF exponential interarrival times and is the reference sampler.
:func:`sample_batch` draws many paths at once by conditioning on the Poisson
jump count and sorting uniform jump times, which has the same law and is what
the Monte Carlo estimators use.

Randomness comes from counter-based Philox streams keyed by ``(seed, stream)``.
Chunk ``k`` of a run uses counter block ``k``, so results do not depend on how
chunks are scheduled.
"""

from __future__ import annotations

from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .errors import ConfigError, DimensionMismatchError
from .lattice import TorusSpec, project_field, unit_vectors

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(seed, stream)``."""

    seed: int
    stream: int = 0

    def generator(self, chunk: int = 0) -> np.random.Generator:
        bitgen = np.random.Philox(
            key=np.array([self.seed & _MASK64, self.stream & _MASK64], dtype=np.uint64),
            counter=np.array([0, 0, chunk & _MASK64, 0], dtype=np.uint64),
        )
        return np.random.Generator(bitgen)


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


@dataclass(frozen=True)
class Path:
    """Jump skeleton of a walk on ``Z^d`` (``n is None``) or on a torus of side ``n``."""

    start: tuple
    jump_times: np.ndarray
    sites: np.ndarray
    T: float
    n: int | None = None

    def __post_init__(self):
        jt = np.asarray(self.jump_times, dtype=float)
        st = np.asarray(self.sites, dtype=np.int64)
        if st.ndim != 2 or st.shape[0] != jt.shape[0] + 1:
            raise DimensionMismatchError("sites must have one more row than jump_times")
        jt.setflags(write=False)
        st.setflags(write=False)
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "sites", st)
        object.__setattr__(self, "start", tuple(int(c) for c in st[0]))

    @property
    def d(self) -> int:
        return self.sites.shape[1]

    @property
    def n_jumps(self) -> int:
        return int(self.jump_times.shape[0])

    @property
    def endpoint(self) -> tuple:
        return tuple(int(c) for c in self.sites[-1])

    def durations(self) -> np.ndarray:
        edges = np.concatenate(([0.0], self.jump_times, [self.T]))
        return np.diff(edges)


@dataclass(frozen=True)
class LocalTimeField(Mapping):
    """Occupation times ``site -> ell^x`` of a path (sparse, read-only)."""

    data: Mapping
    d: int
    n: int | None = None

    def __getitem__(self, site):
        return self.data[site]

    def __iter__(self):
        return iter(self.data)

    def __len__(self):
        return len(self.data)

    def get(self, site, default=0.0):
        return self.data.get(site, default)

    def total(self) -> float:
        return float(sum(self.data.values()))

    @property
    def spec(self) -> TorusSpec | None:
        return None if self.n is None else TorusSpec(d=self.d, n=self.n)


def sample_path(
    T: float,
    rng,
    *,
    d: int | None = None,
    spec: TorusSpec | None = None,
    start=None,
) -> Path:
    """Sample a rate-``2d`` continuous-time walk on ``[0, T]``.

    On a torus the path is sampled on ``Z^d`` and reduced mod ``n``, which is
    exactly the projected walk.
    """
    if T < 0:
        raise ConfigError(f"horizon must be nonnegative, got {T}")
    if d is None:
        d = spec.d if spec is not None else (len(start) if start is not None else 1)
    if spec is not None and spec.d != d:
        raise DimensionMismatchError(f"d={d} does not match torus dimension {spec.d}")
    start = np.zeros(d, dtype=np.int64) if start is None else np.asarray(start, dtype=np.int64)
    if start.shape != (d,):
        raise DimensionMismatchError(f"start has shape {start.shape}, expected ({d},)")
    gen = _as_generator(rng)
    rate = 2.0 * d
    times: list = []
    t = 0.0
    block = max(16, int(rate * T * 1.2) + 16)
    while True:
        u = gen.random(block)
        steps = np.cumsum(-np.log1p(-u) / rate) + t
        keep = steps[steps <= T]
        times.append(keep)
        if keep.shape[0] < block:
            break
        t = float(steps[-1])
    jt = np.concatenate(times) if times else np.zeros(0)
    dirs = gen.integers(0, 2 * d, size=jt.shape[0])
    moves = unit_vectors(d)[dirs]
    sites = np.vstack([start[None, :], start[None, :] + np.cumsum(moves, axis=0)])
    n = None
    if spec is not None:
        n = spec.n
        sites = sites % n
    return Path(start=tuple(start), jump_times=jt, sites=sites, T=float(T), n=n)


def local_times(path: Path) -> LocalTimeField:
    """``ell^x = int_0^T 1{X_s = x} ds`` for every visited site."""
    dur = path.durations()
    uniq, inv = np.unique(path.sites, axis=0, return_inverse=True)
    sums = np.bincount(inv.reshape(-1), weights=dur, minlength=uniq.shape[0])
    values = {tuple(int(c) for c in row): float(v) for row, v in zip(uniq, sums)}
    return LocalTimeField(data=values, d=path.d, n=path.n)


def project_path(path: Path, n: int) -> Path:
    """Reduce a path mod ``n`` (same jump times)."""
    if path.n is not None and path.n % n:
        raise ConfigError(f"cannot project a side-{path.n} torus path onto side {n}")
    return Path(start=path.start, jump_times=path.jump_times, sites=path.sites % n, T=path.T, n=n)


def fold_local_times(ell: LocalTimeField, n: int) -> LocalTimeField:
    """Fold a local-time field onto the torus of side ``n``."""
    return LocalTimeField(data=project_field(dict(ell.data), n, ell.n), d=ell.d, n=n)


# ---------------------------------------------------------------------------
# batch engine


@dataclass(frozen=True)
class PathBatch:
    """Many paths stored as concatenated segments.

    Path ``p`` owns segments ``offsets[p]:offsets[p+1]``. Segment ``s`` starts
    at ``times[s]`` at position ``pos[s]`` (relative to the origin) and lasts
    until the next segment of the same path or the horizon ``T[p]``.
    """

    d: int
    T: np.ndarray
    offsets: np.ndarray
    times: np.ndarray
    pos: np.ndarray
    path_of: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return int(self.T.shape[0])

    def ends(self) -> np.ndarray:
        end = np.empty_like(self.times)
        end[:-1] = self.times[1:]
        last = self.offsets[1:] - 1
        end[last] = self.T
        return end

    def path(self, p: int) -> Path:
        a, b = int(self.offsets[p]), int(self.offsets[p + 1])
        return Path(start=(0,) * self.d, jump_times=self.times[a + 1 : b], sites=self.pos[a:b], T=float(self.T[p]))


def sample_batch(T, rng, d: int, size: int | None = None) -> PathBatch:
    """Sample independent walks from the origin with horizons ``T`` (scalar or array)."""
    gen = _as_generator(rng)
    T = np.asarray(T, dtype=float)
    if T.ndim == 0:
        if size is None:
            raise ConfigError("size is required with a scalar horizon")
        T = np.full(size, float(T))
    if np.any(T < 0):
        raise ConfigError("horizons must be nonnegative")
    P = T.shape[0]
    counts = gen.poisson(2.0 * d * T)
    J = int(counts.sum())
    owner = np.repeat(np.arange(P), counts)
    u = gen.random(J)
    order = np.lexsort((u, owner))
    jt = u[order] * T[owner]
    dirs = gen.integers(0, 2 * d, size=J)
    offsets = np.zeros(P + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(counts + 1)
    S = int(offsets[-1])
    is_start = np.zeros(S, dtype=bool)
    is_start[offsets[:-1]] = True
    times = np.zeros(S)
    times[~is_start] = jt
    steps = np.zeros((S, d), dtype=np.int64)
    steps[~is_start] = unit_vectors(d)[dirs]
    cs = np.cumsum(steps, axis=0)
    path_of = np.repeat(np.arange(P), counts + 1)
    pos = cs - cs[offsets[:-1]][path_of]
    return PathBatch(d=d, T=T, offsets=offsets, times=times, pos=pos, path_of=path_of)


@dataclass(frozen=True)
class BatchLocalTimes:
    """Sparse local times of a batch: entry ``i`` is ``(path[i], coords[i], value[i])``.

    Entries are sorted by ``keys``, a packed integer encoding of ``(path, site)``.
    """

    d: int
    size: int
    n: int | None
    path: np.ndarray
    coords: np.ndarray
    value: np.ndarray
    keys: np.ndarray
    offset: int
    base: int

    def encode(self, path: np.ndarray, coords: np.ndarray) -> np.ndarray:
        if self.n is not None:
            coords = coords % self.n
        key = path.astype(np.int64)
        for i in range(self.d - 1, -1, -1):
            key = key * self.base + (coords[:, i] + self.offset)
        return key

    def lookup(self, path: np.ndarray, coords: np.ndarray) -> np.ndarray:
        """Local time at ``(path, coords)``; zero when unvisited."""
        key = self.encode(path, coords)
        idx = np.searchsorted(self.keys, key)
        idx = np.minimum(idx, self.keys.shape[0] - 1)
        hit = self.keys[idx] == key
        return np.where(hit, self.value[idx], 0.0)

    def per_path(self, x: np.ndarray) -> np.ndarray:
        return np.bincount(self.path, weights=x, minlength=self.size)

    def dense(self) -> np.ndarray:
        """Dense array ``(size, n, ..., n)``; torus only."""
        if self.n is None:
            raise ConfigError("dense local times need a torus")
        out = np.zeros((self.size,) + (self.n,) * self.d)
        np.add.at(out, (self.path,) + tuple(self.coords[:, i] for i in range(self.d)), self.value)
        return out


def batch_local_times(batch: PathBatch, n: int | None = None, T_cut=None) -> BatchLocalTimes:
    """Local times of every path up to ``T_cut`` (default its horizon), folded mod ``n`` if given."""
    ends = batch.ends()
    starts = batch.times
    if T_cut is not None:
        cut = np.broadcast_to(np.asarray(T_cut, dtype=float), (batch.size,))
        if np.any(cut > batch.T + 1e-12):
            raise ConfigError("T_cut exceeds the sampled horizon")
        cseg = cut[batch.path_of]
        keep = starts < cseg
        dur = np.minimum(ends, cseg) - starts
    else:
        keep = ends > starts
        dur = ends - starts
    keep &= dur > 0
    pos = batch.pos[keep]
    owner = batch.path_of[keep]
    dur = dur[keep]
    if n is not None:
        pos = pos % n
        offset, base = 0, n
    else:
        M = int(np.abs(pos).max()) if pos.size else 0
        offset, base = M + 1, 2 * M + 3
    if batch.size * float(base) ** batch.d >= 2.0**62:
        raise ConfigError("batch too large for packed site keys; use smaller chunks")
    proto = BatchLocalTimes(batch.d, batch.size, n, owner, pos, dur, np.zeros(0, np.int64), offset, base)
    key = proto.encode(owner, pos)
    uk, first, inv = np.unique(key, return_index=True, return_inverse=True)
    value = np.bincount(inv.reshape(-1), weights=dur, minlength=uk.shape[0])
    return BatchLocalTimes(
        d=batch.d,
        size=batch.size,
        n=n,
        path=owner[first],
        coords=pos[first],
        value=value,
        keys=uk,
        offset=offset,
        base=base,
    )


def batch_endpoints(batch: PathBatch, T_cut=None) -> np.ndarray:
    """Position ``X_t`` of every path at ``t = T_cut`` (default the horizon)."""
    if T_cut is None:
        return batch.pos[batch.offsets[1:] - 1]
    cut = np.broadcast_to(np.asarray(T_cut, dtype=float), (batch.size,))
    valid = batch.times <= cut[batch.path_of]
    # last valid segment of each path: count valid segments per path
    nvalid = np.bincount(batch.path_of, weights=valid, minlength=batch.size).astype(np.int64)
    return batch.pos[batch.offsets[:-1] + nvalid - 1]


def chunk_sizes(samples: int, chunk: int) -> list:
    if samples < 0 or chunk < 1:
        raise ConfigError("samples must be >= 0 and chunk >= 1")
    full, rest = divmod(samples, chunk)
    return [chunk] * full + ([rest] if rest else [])


def chunked_map(
    fn: Callable[[np.random.Generator, int, int], object],
    stream: RngStream,
    samples: int,
    chunk: int,
    threads: int = 1,
) -> list:
    """Run ``fn(gen, size, k)`` on every chunk and return results in chunk order.

    The chunk decomposition depends only on ``samples`` and ``chunk``, so the
    reduction order (and every bit of the result) is independent of ``threads``.
    """
    sizes = chunk_sizes(samples, chunk)
    jobs = [(stream.generator(k), s, k) for k, s in enumerate(sizes)]
    if threads <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda job: fn(*job), jobs))


def iter_chunks(stream: RngStream, samples: int, chunk: int) -> Iterator:
    for k, s in enumerate(chunk_sizes(samples, chunk)):
        yield stream.generator(k), s, k
