"""Synthetic MIMO-OFDM slot simulator.

Channels follow a clustered multipath model over an ``L x (K + K_ext)``
time-frequency grid seen by an ``M``-element uniform linear array (half
wavelength spacing). A single-antenna user transmits; the base station
receives ``y = h x + w`` on every resource element (RE), where ``w`` is
co-channel interference from single-antenna interferers plus white Gaussian
noise, jointly scaled so that each slot hits a requested SINR exactly.

Every slot draws from its own RNG stream derived from ``(seed, slot_index)``,
so a slot can be regenerated in isolation -- e.g. at a different SINR with
the identical channel and noise shape (see :func:`resimulate`).
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, InputShapeError

MODULATIONS = ("qpsk", "qam16")
BITS_PER_SYMBOL = {"qpsk": 2, "qam16": 4}
SPLIT_TAGS = ("pretrain", "downstream_train", "test")

DATASET_MAGIC = b"NPIS"
DATASET_VERSION = 1


@dataclass(frozen=True)
class SimConfig:
    L: int = 14
    K: int = 32
    M: int = 8
    K_ext: int = 16
    pilot_symbols: tuple[int, ...] = (2, 9)
    pilot_spacing: int = 6
    pilot_offset: int = 0
    path_count_range: tuple[int, int] = (3, 8)
    max_doppler: float = 0.01
    # Cycles of phase rotation per subcarrier for the longest path. Pilot
    # spacing s resolves delays below 1/(2s); 0.05 keeps the default grid
    # un-aliased.
    max_delay: float = 0.05
    interferer_count_range: tuple[int, int] = (0, 2)
    inr_db: float = 6.0
    sinr_range_db: tuple[float, float] = (0.0, 16.0)
    # "mixed" draws qpsk or qam16 per slot.
    modulation: str = "qpsk"
    seed: int = 0

    def __post_init__(self):
        for name in ("pilot_symbols", "path_count_range", "interferer_count_range", "sinr_range_db"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        if min(self.L, self.K, self.M) < 1 or self.K_ext < 0:
            raise ConfigError("grid dimensions must be positive")
        if not self.pilot_symbols:
            raise ConfigError("at least one pilot symbol is required")
        if any(not 0 <= s < self.L for s in self.pilot_symbols):
            raise ConfigError(f"pilot symbols {self.pilot_symbols} outside [0, {self.L})")
        if len(set(self.pilot_symbols)) != len(self.pilot_symbols):
            raise ConfigError("duplicate pilot symbols")
        if self.pilot_spacing < 1 or not 0 <= self.pilot_offset < self.K:
            raise ConfigError("pilot spacing must be >= 1 and offset inside [0, K)")
        for name in ("path_count_range", "interferer_count_range", "sinr_range_db"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} is empty: {lo} > {hi}")
        if self.path_count_range[0] < 1 or self.interferer_count_range[0] < 0:
            raise ConfigError("path count must be >= 1 and interferer count >= 0")
        if not 0.0 <= self.max_delay < 1.0:
            raise ConfigError("max_delay must lie in [0, 1)")
        if self.max_doppler < 0:
            raise ConfigError("max_doppler must be non-negative")
        if self.modulation not in MODULATIONS + ("mixed",):
            raise ConfigError(f"unknown modulation {self.modulation!r}")

    @property
    def K_p(self) -> int:
        per_symbol = -(-(self.K - self.pilot_offset) // self.pilot_spacing)
        return len(self.pilot_symbols) * per_symbol

    @property
    def K_total(self) -> int:
        return self.K + self.K_ext

    @property
    def N_d(self) -> int:
        return self.L * self.K - self.K_p

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "SimConfig":
        return cls(**json.loads(text))

    def digest(self) -> str:
        """Stable hash identifying this configuration."""
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class PilotPattern:
    positions: tuple[tuple[int, int], ...]

    @property
    def symbols(self) -> tuple[int, ...]:
        return tuple(sorted({l for l, _ in self.positions}))

    @property
    def subcarriers(self) -> tuple[int, ...]:
        return tuple(sorted({k for _, k in self.positions}))

    def __len__(self) -> int:
        return len(self.positions)

    def mask(self, L: int, K: int) -> np.ndarray:
        m = np.zeros((L, K), dtype=bool)
        for l, k in self.positions:
            m[l, k] = True
        return m

    def payload_positions(self, L: int, K: int) -> np.ndarray:
        """(N_d, 2) array of non-pilot RE coordinates in lexicographic order."""
        return np.argwhere(~self.mask(L, K))

    def index_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        pos = np.asarray(self.positions, dtype=int).reshape(-1, 2)
        return pos[:, 0], pos[:, 1]


def build_pilot_pattern(cfg: SimConfig) -> PilotPattern:
    subs = range(cfg.pilot_offset, cfg.K, cfg.pilot_spacing)
    return PilotPattern(tuple((l, k) for l in sorted(cfg.pilot_symbols) for k in subs))


@dataclass(frozen=True)
class ChannelGrid:
    """Per-RE channel vectors, shape ``(L, K + K_ext, M)``."""

    h: np.ndarray

    def in_band(self, K: int) -> np.ndarray:
        return self.h[:, :K, :]


# -- modulation ---------------------------------------------------------------

# Gray-coded QPSK: first bit selects the sign of I, second the sign of Q.
#   00 -> (+1+1j)/sqrt2   01 -> (+1-1j)/sqrt2
#   10 -> (-1+1j)/sqrt2   11 -> (-1-1j)/sqrt2
# 16-QAM: bits (b0, b1, b2, b3); b0/b1 carry the I/Q signs, b2/b3 the
# I/Q magnitudes (0 -> 1, 1 -> 3), normalized by sqrt(10).


def modulate(bits, scheme: str) -> np.ndarray:
    """Map a bit sequence to unit-average-power Gray-coded symbols."""
    if scheme not in BITS_PER_SYMBOL:
        raise ConfigError(f"unknown modulation {scheme!r}")
    b = np.asarray(bits, dtype=np.int64).ravel()
    nb = BITS_PER_SYMBOL[scheme]
    if b.size % nb:
        raise InputShapeError(f"{b.size} bits is not a multiple of {nb} for {scheme}")
    b = b.reshape(-1, nb)
    if scheme == "qpsk":
        return ((1 - 2 * b[:, 0]) + 1j * (1 - 2 * b[:, 1])) / math.sqrt(2)
    i = (1 - 2 * b[:, 0]) * (1 + 2 * b[:, 2])
    q = (1 - 2 * b[:, 1]) * (1 + 2 * b[:, 3])
    return (i + 1j * q) / math.sqrt(10)


def random_symbols(rng: np.random.Generator, n: int, scheme: str) -> np.ndarray:
    bits = rng.integers(0, 2, size=n * BITS_PER_SYMBOL[scheme])
    return modulate(bits, scheme)


# -- channels -------------------------------------------------------------------


def channel_from_paths(gains, phases, angles, delays, dopplers, L: int, K: int, M: int) -> np.ndarray:
    """Sum of plane-wave paths evaluated on an (L, K, M) grid."""
    g = np.asarray(gains, float) * np.exp(1j * np.asarray(phases, float))
    m = np.arange(M)
    steer = np.exp(-1j * np.pi * np.outer(np.sin(angles), m))  # (P, M)
    freq = np.exp(-2j * np.pi * np.outer(delays, np.arange(K)))  # (P, K)
    time = np.exp(2j * np.pi * np.outer(dopplers, np.arange(L)))  # (P, L)
    return np.einsum("p,pl,pk,pm->lkm", g, time, freq, steer)


def generate_channel(cfg: SimConfig, rng: np.random.Generator) -> ChannelGrid:
    P = int(rng.integers(cfg.path_count_range[0], cfg.path_count_range[1] + 1))
    angles = rng.uniform(-np.pi / 2, np.pi / 2, P)
    delays = rng.uniform(0.0, cfg.max_delay, P)
    dopplers = rng.uniform(-cfg.max_doppler, cfg.max_doppler, P)
    phases = rng.uniform(0.0, 2 * np.pi, P)
    # exponential power-delay profile with exponentially distributed cluster powers
    power = rng.exponential(1.0, P)
    if cfg.max_delay > 0:
        power = power * np.exp(-3.0 * delays / cfg.max_delay)
    power /= power.sum()
    h = channel_from_paths(np.sqrt(power), phases, angles, delays, dopplers, cfg.L, cfg.K_total, cfg.M)
    return ChannelGrid(h)


# -- slots ----------------------------------------------------------------------


@dataclass
class SlotObservation:
    x_p: np.ndarray  # (K_p,)
    y_p: np.ndarray  # (K_p, M)
    y_d: np.ndarray  # (N_d, M), payload REs in lexicographic order
    mod_id: int  # payload scheme index into MODULATIONS; pilots are always qpsk
    h: np.ndarray | None = None  # (L, K + K_ext, M)
    w: np.ndarray | None = None  # (L, K, M)
    x_d: np.ndarray | None = None  # (N_d,)
    sinr_db: float | None = None

    @property
    def labeled(self) -> bool:
        return self.h is not None

    def mod_map(self, pattern: PilotPattern, L: int, K: int) -> np.ndarray:
        """Per-RE modulation index over the L x K grid."""
        out = np.full((L, K), self.mod_id, dtype=np.int8)
        out[pattern.mask(L, K)] = MODULATIONS.index("qpsk")
        return out


def _npi_scales(sig: float, interf: np.ndarray | None, noise: np.ndarray, sinr_db: float, inr_db: float):
    """Amplitudes (a, b) so that ``a*interf + b*noise`` has the exact target powers."""
    target = sig / 10 ** (sinr_db / 10)
    n0 = np.vdot(noise, noise).real
    if interf is None:
        return 0.0, math.sqrt(target / n0)
    i0 = np.vdot(interf, interf).real
    inr = 10 ** (inr_db / 10)
    corr = np.vdot(interf, noise).real / math.sqrt(i0 * n0)
    t = target / (1 + inr + 2 * math.sqrt(inr) * corr)
    return math.sqrt(inr * t / i0), math.sqrt(t / n0)


def simulate_slot(
    h: ChannelGrid,
    pattern: PilotPattern,
    cfg: SimConfig,
    target_sinr_db: float,
    rng: np.random.Generator,
    scheme: str | None = None,
) -> SlotObservation:
    """Transmit one slot through ``h`` and add calibrated noise-plus-interference.

    ``target_sinr_db = inf`` produces a noise- and interference-free slot.
    """
    L, K, M = cfg.L, cfg.K, cfg.M
    if scheme is None:
        scheme = cfg.modulation if cfg.modulation != "mixed" else MODULATIONS[int(rng.integers(0, 2))]
    hb = h.in_band(K)
    mask = pattern.mask(L, K)
    pl, pk = pattern.index_arrays()

    x = np.empty((L, K), dtype=complex)
    x_p = random_symbols(rng, len(pattern), "qpsk")
    x_d = random_symbols(rng, cfg.N_d, scheme)
    x[pl, pk] = x_p
    x[~mask] = x_d
    s = hb * x[:, :, None]

    n_int = int(rng.integers(cfg.interferer_count_range[0], cfg.interferer_count_range[1] + 1))
    interf = None
    if n_int:
        interf = np.zeros((L, K, M), dtype=complex)
        for _ in range(n_int):
            hi = generate_channel(cfg, rng).in_band(K)
            si = random_symbols(rng, L * K, "qpsk").reshape(L, K)
            interf += hi * si[:, :, None]
    noise = (rng.standard_normal((L, K, M)) + 1j * rng.standard_normal((L, K, M))) / math.sqrt(2)

    if math.isinf(target_sinr_db) and target_sinr_db > 0:
        w = np.zeros((L, K, M), dtype=complex)
    else:
        sig = np.vdot(s, s).real
        a, b = _npi_scales(sig, interf, noise, target_sinr_db, cfg.inr_db)
        w = b * noise if interf is None else a * interf + b * noise
    y = s + w
    return SlotObservation(
        x_p=x_p,
        y_p=y[pl, pk],
        y_d=y[~mask],
        mod_id=MODULATIONS.index(scheme),
        h=h.h,
        w=w,
        x_d=x_d,
        sinr_db=float(target_sinr_db),
    )


def realized_sinr_db(slot: SlotObservation, pattern: PilotPattern, cfg: SimConfig) -> float:
    """Signal-to-NPI power ratio over all REs, recomputed from stored labels."""
    x = full_symbol_grid(slot, pattern, cfg)
    s = slot.h[:, : cfg.K, :] * x[:, :, None]
    n = np.vdot(slot.w, slot.w).real
    return 10 * math.log10(np.vdot(s, s).real / n) if n > 0 else math.inf


def full_symbol_grid(slot: SlotObservation, pattern: PilotPattern, cfg: SimConfig) -> np.ndarray:
    x = np.empty((cfg.L, cfg.K), dtype=complex)
    pl, pk = pattern.index_arrays()
    x[pl, pk] = slot.x_p
    x[~pattern.mask(cfg.L, cfg.K)] = slot.x_d
    return x


def full_received_grid(slot: SlotObservation, pattern: PilotPattern, cfg: SimConfig) -> np.ndarray:
    y = np.empty((cfg.L, cfg.K, cfg.M), dtype=complex)
    pl, pk = pattern.index_arrays()
    y[pl, pk] = slot.y_p
    y[~pattern.mask(cfg.L, cfg.K)] = slot.y_d
    return y


# -- datasets -------------------------------------------------------------------


def _slot_streams(seed: int, index: int):
    ss = np.random.SeedSequence(seed, spawn_key=(index,))
    chan, slot, sinr = ss.spawn(3)
    return np.random.default_rng(chan), np.random.default_rng(slot), np.random.default_rng(sinr)


def make_slot(cfg: SimConfig, pattern: PilotPattern, seed: int, index: int, sinr_db: float | None = None):
    """Deterministically build slot ``index`` of the stream ``seed``.

    With ``sinr_db=None`` the target SINR is drawn uniformly from
    ``cfg.sinr_range_db``; otherwise it is overridden while the channel,
    symbols, interferers and noise shape stay identical.
    """
    chan_rng, slot_rng, sinr_rng = _slot_streams(seed, index)
    drawn = sinr_rng.uniform(*cfg.sinr_range_db)
    target = drawn if sinr_db is None else sinr_db
    h = generate_channel(cfg, chan_rng)
    return simulate_slot(h, pattern, cfg, target, slot_rng)


def split_counts(count: int, ratios=(0.75, 0.125, 0.125)) -> dict[str, int]:
    if len(ratios) != 3 or min(ratios) < 0 or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1: {ratios}")
    n1 = round(ratios[0] * count)
    n2 = round(ratios[1] * count)
    return {"pretrain": n1, "downstream_train": n2, "test": count - n1 - n2}


@dataclass
class Dataset:
    """Column-oriented slot collection. Arrays carry a leading slot axis."""

    config: SimConfig
    x_p: np.ndarray
    y_p: np.ndarray
    y_d: np.ndarray
    h: np.ndarray
    w: np.ndarray
    x_d: np.ndarray
    sinr_db: np.ndarray
    mod_id: np.ndarray
    seed: int = 0
    index: np.ndarray | None = None  # stream index of each slot
    splits: dict[str, int] = field(default_factory=dict)
    sinr_sampling: str = "uniform"

    def __post_init__(self):
        if self.index is None:
            self.index = np.arange(len(self.sinr_db))
        if not self.splits:
            self.splits = {"pretrain": 0, "downstream_train": 0, "test": len(self)}
        self.check()

    def __len__(self) -> int:
        return len(self.sinr_db)

    @property
    def pattern(self) -> PilotPattern:
        return build_pilot_pattern(self.config)

    def check(self) -> None:
        c, n = self.config, len(self)
        expect = {
            "x_p": (n, c.K_p), "y_p": (n, c.K_p, c.M), "y_d": (n, c.N_d, c.M),
            "h": (n, c.L, c.K_total, c.M), "w": (n, c.L, c.K, c.M), "x_d": (n, c.N_d),
            "mod_id": (n,), "index": (n,),
        }
        for name, shape in expect.items():
            if getattr(self, name).shape != shape:
                raise InputShapeError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if sum(self.splits.values()) != n:
            raise InputShapeError(f"split counts {self.splits} do not sum to {n}")

    def split_indices(self, tag: str) -> np.ndarray:
        if tag not in SPLIT_TAGS:
            raise KeyError(tag)
        start = 0
        for t in SPLIT_TAGS:
            if t == tag:
                return np.arange(start, start + self.splits[t])
            start += self.splits[t]
        raise AssertionError

    def split(self, tag: str) -> "Dataset":
        return self.subset(self.split_indices(tag), tag=tag)

    def subset(self, indices, tag: str = "test") -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        cols = {f: getattr(self, f)[idx] for f in _COLUMNS}
        return Dataset(self.config, **cols, seed=self.seed, index=self.index[idx],
                       splits=_single_split(tag, len(idx)), sinr_sampling=self.sinr_sampling)

    def slot(self, i: int) -> SlotObservation:
        return SlotObservation(
            x_p=self.x_p[i].astype(complex), y_p=self.y_p[i].astype(complex),
            y_d=self.y_d[i].astype(complex), mod_id=int(self.mod_id[i]),
            h=self.h[i].astype(complex), w=self.w[i].astype(complex),
            x_d=self.x_d[i].astype(complex), sinr_db=float(self.sinr_db[i]),
        )

    def pilot_channels(self) -> np.ndarray:
        """True channel at pilot REs, (n, K_p, M)."""
        pl, pk = self.pattern.index_arrays()
        return self.h[:, pl, pk, :]

    def pilot_npi(self) -> np.ndarray:
        pl, pk = self.pattern.index_arrays()
        return self.w[:, pl, pk, :]

    # -- persistence --

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        rec = np.empty(len(self), dtype=_record_dtype(self.config))
        for name in ("x_p", "y_p", "y_d", "h", "w", "x_d"):
            arr = getattr(self, name)
            rec[name] = _interleave32(arr).reshape(len(self), -1)
        rec["sinr_db"] = self.sinr_db
        rec["mod_id"] = self.mod_id
        cfg = self.config.to_json().encode()
        with open(path, "wb") as f:
            f.write(DATASET_MAGIC)
            f.write(struct.pack("<II", DATASET_VERSION, len(cfg)))
            f.write(cfg)
            f.write(struct.pack("<Q", len(self)))
            f.write(rec.tobytes())
        write_manifest(manifest_path(path), self)

    @classmethod
    def load(cls, path) -> "Dataset":
        path = Path(path)
        raw = path.read_bytes()
        if raw[:4] != DATASET_MAGIC:
            raise FormatError(f"{path}: bad magic {raw[:4]!r}")
        version, clen = struct.unpack_from("<II", raw, 4)
        if version != DATASET_VERSION:
            raise FormatError(f"{path}: unsupported dataset version {version}")
        off = 12
        cfg = SimConfig.from_json(raw[off:off + clen].decode())
        off += clen
        (count,) = struct.unpack_from("<Q", raw, off)
        off += 8
        dt = _record_dtype(cfg)
        if len(raw) - off != count * dt.itemsize:
            raise FormatError(f"{path}: payload size does not match slot count {count}")
        rec = np.frombuffer(raw, dtype=dt, count=count, offset=off)
        shapes = _column_shapes(cfg)
        cols = {}
        for name in ("x_p", "y_p", "y_d", "h", "w", "x_d"):
            a = rec[name].reshape((count,) + shapes[name] + (2,))
            cols[name] = (a[..., 0] + 1j * a[..., 1]).astype(np.complex64)
        man = read_manifest(manifest_path(path)) if manifest_path(path).exists() else {}
        splits = man.get("splits") or _single_split("test", count)
        return cls(cfg, **cols, sinr_db=rec["sinr_db"].astype(np.float64), mod_id=rec["mod_id"].astype(np.int8),
                   seed=int(man.get("seed", cfg.seed)), splits=splits,
                   sinr_sampling=man.get("sinr_sampling", "uniform"))


_COLUMNS = ("x_p", "y_p", "y_d", "h", "w", "x_d", "sinr_db", "mod_id")


def _single_split(tag: str, n: int) -> dict[str, int]:
    return {t: (n if t == tag else 0) for t in SPLIT_TAGS}


def _column_shapes(cfg: SimConfig) -> dict[str, tuple]:
    return {
        "x_p": (cfg.K_p,), "y_p": (cfg.K_p, cfg.M), "y_d": (cfg.N_d, cfg.M),
        "h": (cfg.L, cfg.K_total, cfg.M), "w": (cfg.L, cfg.K, cfg.M), "x_d": (cfg.N_d,),
    }


def _record_dtype(cfg: SimConfig) -> np.dtype:
    fields = [(name, "<f4", (2 * int(np.prod(shape)),)) for name, shape in _column_shapes(cfg).items()]
    return np.dtype(fields + [("sinr_db", "<f4"), ("mod_id", "u1")])


def _interleave32(a: np.ndarray) -> np.ndarray:
    out = np.empty(a.shape + (2,), dtype="<f4")
    out[..., 0] = a.real
    out[..., 1] = a.imag
    return out


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest")


def write_manifest(path, ds: Dataset) -> None:
    cp = configparser.ConfigParser()
    cp["dataset"] = {
        "format_version": str(DATASET_VERSION),
        "count": str(len(ds)),
        "seed": str(ds.seed),
        "sinr_sampling": ds.sinr_sampling,
        "config_hash": ds.config.digest(),
        "split_order": ",".join(SPLIT_TAGS),
    }
    cp["splits"] = {t: str(ds.splits[t]) for t in SPLIT_TAGS}
    with open(path, "w", encoding="utf-8") as f:
        cp.write(f)


def read_manifest(path) -> dict:
    cp = configparser.ConfigParser()
    if not cp.read(path, encoding="utf-8"):
        raise FormatError(f"cannot read manifest {path}")
    d = cp["dataset"]
    splits = {t: cp.getint("splits", t) for t in SPLIT_TAGS}
    if sum(splits.values()) != d.getint("count"):
        raise FormatError(f"{path}: split counts do not sum to slot count")
    return {"count": d.getint("count"), "seed": d.getint("seed"), "sinr_sampling": d.get("sinr_sampling"),
            "config_hash": d.get("config_hash"), "splits": splits}


def _collect(cfg: SimConfig, slots, n: int, **kw) -> Dataset:
    shapes = _column_shapes(cfg)
    cols = {name: np.empty((n,) + shape, dtype=np.complex64) for name, shape in shapes.items()}
    sinr = np.empty(n)
    mod = np.empty(n, dtype=np.int8)
    for i, s in enumerate(slots):
        for name in shapes:
            cols[name][i] = getattr(s, name)
        sinr[i] = s.sinr_db
        mod[i] = s.mod_id
    # round through the on-disk precision so saved and in-memory datasets agree
    return Dataset(cfg, **cols, sinr_db=sinr.astype(np.float32).astype(np.float64), mod_id=mod, **kw)


def generate_dataset(
    cfg: SimConfig,
    count: int,
    sinr_sampling: str = "uniform",
    seed: int | None = None,
    split_ratios=(0.75, 0.125, 0.125),
    fixed_sinr_db: float | None = None,
) -> Dataset:
    """Generate ``count`` independent labeled slots.

    ``sinr_sampling="uniform"`` draws each slot's target SINR from
    ``cfg.sinr_range_db``; ``"fixed"`` uses ``fixed_sinr_db`` (default: the
    lower end of the range) for every slot.
    """
    if count < 1:
        raise ConfigError("count must be >= 1")
    if sinr_sampling not in ("uniform", "fixed"):
        raise ConfigError(f"unknown sinr_sampling {sinr_sampling!r}")
    seed = cfg.seed if seed is None else seed
    if sinr_sampling == "fixed" and fixed_sinr_db is None:
        fixed_sinr_db = cfg.sinr_range_db[0]
    pattern = build_pilot_pattern(cfg)
    override = fixed_sinr_db if sinr_sampling == "fixed" else None
    slots = (make_slot(cfg, pattern, seed, i, override) for i in range(count))
    return _collect(cfg, slots, count, seed=seed, splits=split_counts(count, split_ratios), sinr_sampling=sinr_sampling)


def resimulate(ds: Dataset, sinr_db: float, indices=None) -> Dataset:
    """Regenerate slots of ``ds`` at a fixed SINR, keeping every other draw."""
    idx = np.arange(len(ds)) if indices is None else np.asarray(indices)
    pattern = ds.pattern
    slots = (make_slot(ds.config, pattern, ds.seed, int(ds.index[i]), sinr_db) for i in idx)
    return _collect(ds.config, slots, len(idx), seed=ds.seed, index=ds.index[idx],
                    splits=_single_split("test", len(idx)), sinr_sampling="fixed")
