"""Random initial conditions, (phi0, phiT) dataset generation and the binary file format.

File layout (little-endian, no padding)::

    magic    8s   b"ESNETDS1"
    version  u32
    dims     u32
    n        u32
    epsilon  f64
    t_end    f64
    count    u64
    base_seed u64
    count x [ seed u64 | phi0 n^dims f64 | phiT n^dims f64 ]   (row-major)
"""
import csv
import logging
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .solver import SolverConfig, SolverError, integrate
from .spectral import Grid

log = logging.getLogger(__name__)

MAGIC = b"ESNETDS1"
VERSION = 1
HEADER = struct.Struct("<8sIIIddQQ")
MAX_FREQ = 7  # per-axis |m| <= 7, i.e. frequency strictly below 8

_MASK64 = (1 << 64) - 1


class DatasetError(ValueError):
    pass


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def sample_seed(base_seed: int, index: int) -> int:
    """Per-sample seed; depends only on (base_seed, index)."""
    return splitmix64((splitmix64(base_seed & _MASK64) + index) & _MASK64)


def _basis(grid: Grid) -> np.ndarray:
    """Rows: 1, cos(pi m x), sin(pi m x) for m = 1..7, sampled on the grid."""
    x = grid.x
    m = np.arange(1, MAX_FREQ + 1)[:, None]
    return np.vstack([np.ones((1, grid.n)), np.cos(np.pi * m * x), np.sin(np.pi * m * x)])


def ic_coefficients(grid: Grid, seed: int) -> np.ndarray:
    """Standard-normal coefficients in the real Fourier basis, shape (15,)*dims."""
    rng = np.random.default_rng(seed)
    return rng.standard_normal((2 * MAX_FREQ + 1,) * grid.dims)


def synthesize(coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    B = _basis(grid)
    if grid.dims == 1:
        return coeffs @ B
    return B.T @ coeffs @ B


def sample_ic(grid: Grid, seed: int) -> np.ndarray:
    """Band-limited random field with every per-axis frequency below 8,
    rescaled by 1/max(1, max|phi|) so that it lies in [-1, 1]."""
    phi = synthesize(ic_coefficients(grid, seed), grid)
    return phi / max(1.0, float(np.max(np.abs(phi))))


@dataclass
class Dataset:
    grid: Grid
    epsilon: float
    t_end: float
    base_seed: int
    seeds: np.ndarray
    phi0: np.ndarray
    phiT: np.ndarray

    def __post_init__(self):
        self.seeds = np.asarray(self.seeds, dtype=np.uint64)
        shape = (len(self.seeds),) + self.grid.shape
        if self.phi0.shape != shape or self.phiT.shape != shape:
            raise DatasetError(f"field arrays must have shape {shape}")

    def __len__(self):
        return len(self.seeds)

    def split(self, fraction: float):
        """First floor(fraction * count) samples train, the rest test."""
        n_train = split_count(len(self), fraction)
        return self.subset(slice(0, n_train)), self.subset(slice(n_train, len(self)))

    def subset(self, idx):
        return Dataset(self.grid, self.epsilon, self.t_end, self.base_seed,
                       self.seeds[idx], self.phi0[idx], self.phiT[idx])


def split_count(count: int, fraction: float) -> int:
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"split fraction must be in (0, 1], got {fraction}")
    return int(np.floor(fraction * count + 1e-9))


def _make_sample(args):
    grid, cfg, seed, index = args
    phi0 = sample_ic(grid, seed)
    try:
        phiT = integrate(phi0, grid, cfg).final
    except SolverError as exc:
        raise SolverError(f"sample {index} (seed {seed}): {exc}") from exc
    return phi0, phiT


def generate(grid: Grid, cfg: SolverConfig, count: int, base_seed: int, workers: int = 1,
             progress=None) -> Dataset:
    if count < 1:
        raise ValueError("count must be >= 1")
    seeds = [sample_seed(base_seed, i) for i in range(count)]
    jobs = [(grid, cfg, s, i) for i, s in enumerate(seeds)]
    phi0 = np.empty((count,) + grid.shape)
    phiT = np.empty((count,) + grid.shape)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = pool.map(_make_sample, jobs, chunksize=4)
            for i, (a, b) in enumerate(results):
                phi0[i], phiT[i] = a, b
                if progress:
                    progress(i, count)
    else:
        for i, job in enumerate(jobs):
            phi0[i], phiT[i] = _make_sample(job)
            if progress:
                progress(i, count)
    return Dataset(grid, cfg.epsilon, cfg.t_end, base_seed, np.array(seeds, dtype=np.uint64), phi0, phiT)


def write_dataset(path, ds: Dataset):
    header = HEADER.pack(MAGIC, VERSION, ds.grid.dims, ds.grid.n, float(ds.epsilon),
                         float(ds.t_end), len(ds), int(ds.base_seed) & _MASK64)
    npts = ds.grid.n ** ds.grid.dims
    rec = np.dtype([("seed", "<u8"), ("phi0", "<f8", (npts,)), ("phiT", "<f8", (npts,))])
    body = np.empty(len(ds), dtype=rec)
    body["seed"] = ds.seeds
    body["phi0"] = ds.phi0.reshape(len(ds), npts)
    body["phiT"] = ds.phiT.reshape(len(ds), npts)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body.tobytes())


def read_header(data: bytes, path="<bytes>"):
    if len(data) < HEADER.size:
        raise DatasetError(f"{path}: truncated header ({len(data)} bytes)")
    magic, version, dims, n, eps, t_end, count, base_seed = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise DatasetError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise DatasetError(f"{path}: unsupported version {version}")
    if dims not in (1, 2):
        raise DatasetError(f"{path}: dims must be 1 or 2, got {dims}")
    if count < 1:
        raise DatasetError(f"{path}: empty dataset")
    return dict(dims=dims, n=n, epsilon=eps, t_end=t_end, count=count, base_seed=base_seed)


def read_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        data = fh.read()
    hdr = read_header(data, path)
    try:
        grid = Grid(hdr["dims"], hdr["n"])
    except ValueError as exc:
        raise DatasetError(f"{path}: {exc}") from exc
    npts = grid.n ** grid.dims
    rec = np.dtype([("seed", "<u8"), ("phi0", "<f8", (npts,)), ("phiT", "<f8", (npts,))])
    expected = HEADER.size + hdr["count"] * rec.itemsize
    if len(data) != expected:
        kind = "truncated" if len(data) < expected else "oversized"
        raise DatasetError(f"{path}: {kind} file ({len(data)} bytes, expected {expected})")
    body = np.frombuffer(data, dtype=rec, count=hdr["count"], offset=HEADER.size)
    shape = (hdr["count"],) + grid.shape
    return Dataset(grid, hdr["epsilon"], hdr["t_end"], hdr["base_seed"],
                   body["seed"].astype(np.uint64),
                   body["phi0"].astype(np.float64).reshape(shape),
                   body["phiT"].astype(np.float64).reshape(shape))


def export_csv(ds: Dataset, path):
    """One row per grid point per sample, for spot inspection."""
    mesh = ds.grid.mesh()
    coords = [m.ravel() for m in mesh]
    names = ["x", "y"][:ds.grid.dims]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "seed", "point", *names, "phi0", "phiT"])
        for s in range(len(ds)):
            a = ds.phi0[s].ravel()
            b = ds.phiT[s].ravel()
            seed = int(ds.seeds[s])
            for p in range(a.size):
                w.writerow([s, seed, p, *(repr(float(c[p])) for c in coords), repr(float(a[p])), repr(float(b[p]))])


class Progress:
    """Per-sample progress printer for dataset generation."""

    def __init__(self, stream=None, every=1):
        self.start = time.perf_counter()
        self.every = every
        self.stream = stream

    def __call__(self, i, count):
        if (i + 1) % self.every == 0 or i + 1 == count:
            msg = f"sample {i + 1}/{count}  elapsed {time.perf_counter() - self.start:.1f}s"
            if self.stream is not None:
                print(msg, file=self.stream, flush=True)
            else:
                log.info(msg)
