"""Synthetic clustered-multipath channel generation and dataset handling.

Two scenario presets (indoor picocell-like, outdoor semi-urban-like) produce
downlink channel matrices over a ULA whose angular-delay statistics are
separable enough for scenario classification from small labeled seed sets.
Generation is fully deterministic: every sample owns a counter-derived seed,
so sample i is reproducible no matter in which order samples are built.
"""

import json
import os
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError, DataFormatError, TruncatedFileError

INDOOR = 0
OUTDOOR = 1
UNLABELED = 255
LABEL_NAMES = ("indoor", "outdoor")

DOMAIN_SPATIAL = 0
DOMAIN_ANGULAR = 1

_MAGIC = b"S2CS"
_VERSION = 1


@dataclass(frozen=True)
class ScenarioParams:
    """Knobs of the clustered-multipath draw for one scenario.

    seed fixes the scenario's environment: a pool of scatterer-cluster
    prototypes (delay/angle centers) shared by every sample of the scenario.
    Samples vary by which prototypes they hit and by per-path fading, which
    is what makes same-scenario samples statistically close.
    """

    n_clusters: int
    paths_per_cluster: int
    max_delay_taps: int
    angular_spread_deg: float
    delay_spread_taps: float
    carrier_label: str = ""
    seed: int = 0

    def validate(self):
        if self.n_clusters < 1 or self.paths_per_cluster < 1:
            raise ConfigError(
                f"need at least one cluster and one path per cluster, got "
                f"{self.n_clusters} clusters x {self.paths_per_cluster} paths"
            )
        if self.max_delay_taps < 1:
            raise ConfigError(f"max_delay_taps must be >= 1, got {self.max_delay_taps}")
        if self.angular_spread_deg < 0 or self.delay_spread_taps < 0:
            raise ConfigError("spreads must be non-negative")

    def prototype_pool(self):
        """Fixed per-cluster path templates of this scenario's environment.

        Returns (delays, angles, phases, weights), each (n_pool, paths) with
        n_pool = 2 * n_clusters. Delays are integer taps < max_delay_taps.
        """
        n_pool = 2 * self.n_clusters
        m = self.paths_per_cluster
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))
        centers_delay = rng.uniform(0.0, self.max_delay_taps - 1, size=n_pool)
        centers_angle = rng.uniform(-np.pi / 3, np.pi / 3, size=n_pool)
        spread_rad = np.deg2rad(self.angular_spread_deg)
        delays = np.minimum(
            (centers_delay[:, None] + rng.exponential(self.delay_spread_taps, (n_pool, m))
             ).astype(np.int64),
            self.max_delay_taps - 1,
        )
        angles = centers_angle[:, None] + rng.normal(0.0, spread_rad, (n_pool, m))
        phases = rng.uniform(0.0, 2 * np.pi, (n_pool, m))
        weights = rng.exponential(1.0, (n_pool, m))
        return delays, angles, phases, weights


INDOOR_PRESET = ScenarioParams(
    n_clusters=2,
    paths_per_cluster=8,
    max_delay_taps=12,
    angular_spread_deg=10.0,
    delay_spread_taps=3.0,
    carrier_label="5.3GHz",
    seed=101,
)

OUTDOOR_PRESET = ScenarioParams(
    n_clusters=5,
    paths_per_cluster=10,
    max_delay_taps=28,
    angular_spread_deg=30.0,
    delay_spread_taps=8.0,
    carrier_label="300MHz",
    seed=202,
)

DEFAULT_SUBCARRIERS = 256
DEFAULT_ANTENNAS = 32


@dataclass
class ChannelMatrix:
    """One downlink channel: subcarriers x antennas, complex."""

    data: np.ndarray
    scenario_truth: int | None = None

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ConfigError(f"channel matrix must be 2-D, got shape {self.data.shape}")


def steering_vector(angles_rad, n_antennas):
    """ULA steering vectors at half-wavelength spacing, shape (P, n_antennas)."""
    k = np.arange(n_antennas)
    return np.exp(1j * np.pi * np.sin(np.atleast_1d(angles_rad))[:, None] * k[None, :])


# specular-to-diffuse energy split of per-path gains: the template phase is
# the fixed specular part, per-sample scattering rides on top
RICE_FACTOR = 4.0


def draw_paths(params: ScenarioParams, rng):
    """Draw (gains, delay_taps, angles_rad) for one channel realization.

    Clusters land on a subset of the scenario's fixed prototype pool; path
    delays come quantized from the template so the delay-domain support is
    exactly bounded. Per-sample variation: prototype subset, cluster powers,
    diffuse gain components, and small angle jitter.
    """
    t_delays, t_angles, t_phases, t_weights = params.prototype_pool()
    hit = rng.choice(t_delays.shape[0], size=params.n_clusters, replace=False)
    n_paths = params.n_clusters * params.paths_per_cluster
    gains = np.empty(n_paths, dtype=np.complex128)
    delays = np.empty(n_paths, dtype=np.int64)
    angles = np.empty(n_paths)
    spread_rad = np.deg2rad(params.angular_spread_deg)
    m = params.paths_per_cluster
    spec = np.sqrt(RICE_FACTOR / (RICE_FACTOR + 1.0))
    diff = np.sqrt(1.0 / (RICE_FACTOR + 1.0))
    for ci, proto in enumerate(hit):
        p = ci * m
        cluster_power = rng.lognormal(mean=-0.5**2 / 2, sigma=0.5)
        w = t_weights[proto]
        amp = np.sqrt(cluster_power * w / w.sum())
        scatter = (rng.standard_normal(m) + 1j * rng.standard_normal(m)) / np.sqrt(2)
        gains[p : p + m] = amp * (spec * np.exp(1j * t_phases[proto]) + diff * scatter)
        delays[p : p + m] = t_delays[proto]
        angles[p : p + m] = t_angles[proto] + rng.normal(0.0, spread_rad / 4, size=m)
        p += m
    return gains, delays, angles


def paths_to_channel(gains, delays, angles, subcarriers, antennas):
    """Sum path contributions into the spatial-frequency channel matrix."""
    n = np.arange(subcarriers)
    phase = np.exp(-2j * np.pi * np.outer(n, delays) / subcarriers)
    return (phase * gains) @ steering_vector(angles, antennas)


def generate_channel(params: ScenarioParams, subcarriers, antennas, rng) -> ChannelMatrix:
    """One channel realization; pure function of (params, rng state)."""
    params.validate()
    if subcarriers < 1 or antennas < 1:
        raise ConfigError(f"bad dimensions {subcarriers}x{antennas}")
    if params.max_delay_taps > subcarriers:
        raise ConfigError(
            f"max_delay_taps {params.max_delay_taps} exceeds {subcarriers} subcarriers"
        )
    gains, delays, angles = draw_paths(params, rng)
    h = paths_to_channel(gains, delays, angles, subcarriers, antennas)
    # unit large-scale power: per-sample norm carries no scenario information
    norm = np.linalg.norm(h)
    if norm == 0.0:
        raise ConfigError("generated channel has zero energy (degenerate params)")
    h /= norm
    return ChannelMatrix(h)


def _sample_rng(master_seed, index):
    seq = np.random.SeedSequence(master_seed, spawn_key=(0, int(index)))
    return np.random.Generator(np.random.PCG64(seq))


def _aux_rng(master_seed, stream):
    seq = np.random.SeedSequence(master_seed, spawn_key=(1, int(stream)))
    return np.random.Generator(np.random.PCG64(seq))


@dataclass
class Dataset:
    """Sample store plus split bookkeeping.

    samples is complex64 (N, N_c, N_t) in the spatial-frequency domain or
    float32 (N, 2, n_delay, N_t) after angular-delay preprocessing; labels
    holds ground truth for every sample (kept for evaluation only), and
    labeled_index marks the subset of train whose labels the pipeline may see.
    """

    samples: np.ndarray
    labels: np.ndarray
    splits: dict
    labeled_index: np.ndarray
    domain: int = DOMAIN_SPATIAL
    meta: dict = field(default_factory=dict)

    @property
    def n_samples(self):
        return self.samples.shape[0]

    def split_labels(self, name):
        return self.labels[self.splits[name]]

    def validate(self):
        seen = np.concatenate([self.splits[k] for k in ("train", "val", "test")])
        if len(np.unique(seen)) != len(seen):
            raise ConfigError("splits overlap")
        if not np.isin(self.labeled_index, self.splits["train"]).all():
            raise ConfigError("labeled_index must be a subset of the train split")


def select_labeled(train_idx, labels, fraction, master_seed):
    """Pick a class-balanced labeled seed set from the train split."""
    if not 0 < fraction <= 1:
        raise ConfigError(f"labeled_fraction must be in (0, 1], got {fraction}")
    n_lab = int(round(fraction * len(train_idx)))
    if n_lab < 2:
        raise ConfigError(
            f"labeled_fraction {fraction} leaves {n_lab} seed samples; need >= 2"
        )
    rng = _aux_rng(master_seed, 2)
    picked = []
    want = (n_lab + 1) // 2, n_lab // 2
    for cls in (INDOOR, OUTDOOR):
        pool = train_idx[labels[train_idx] == cls]
        take = want[cls]
        if take > len(pool):
            raise ConfigError(f"not enough class-{cls} train samples for the seed set")
        picked.append(rng.choice(pool, size=take, replace=False))
    return np.sort(np.concatenate(picked))


def generate_dataset(
    indoor: ScenarioParams,
    outdoor: ScenarioParams,
    counts: dict,
    labeled_fraction: float,
    master_seed: int,
    subcarriers=DEFAULT_SUBCARRIERS,
    antennas=DEFAULT_ANTENNAS,
) -> Dataset:
    """Class-balanced splits of synthetic channels from the two presets."""
    if labeled_fraction == 0:
        raise ConfigError("labeled_fraction=0: self-training needs a labeled seed set")
    for name in ("train", "val", "test"):
        c = counts.get(name, 0)
        if c <= 0:
            raise ConfigError(f"split {name!r} must have a positive count")
        if c % 2:
            raise ConfigError(f"split {name!r} count {c} not even; classes are balanced")
    total = sum(counts[k] for k in ("train", "val", "test"))
    samples = np.empty((total, subcarriers, antennas), dtype=np.complex64)
    labels = np.empty(total, dtype=np.uint8)
    splits = {}
    params_by_label = {INDOOR: indoor, OUTDOOR: outdoor}

    offset = 0
    for split_i, name in enumerate(("train", "val", "test")):
        n = counts[name]
        idx = np.arange(offset, offset + n)
        scen = np.repeat([INDOOR, OUTDOOR], n // 2)
        _aux_rng(master_seed, split_i).shuffle(scen)
        for local, i in enumerate(idx):
            p = params_by_label[scen[local]]
            ch = generate_channel(p, subcarriers, antennas, _sample_rng(master_seed, i))
            samples[i] = ch.data.astype(np.complex64)
            labels[i] = scen[local]
        splits[name] = idx
        offset += n

    labeled_index = select_labeled(splits["train"], labels, labeled_fraction, master_seed)
    meta = {
        "subcarriers": subcarriers,
        "antennas": antennas,
        "indoor": asdict(indoor),
        "outdoor": asdict(outdoor),
        "counts": dict(counts),
        "labeled_fraction": labeled_fraction,
        "master_seed": master_seed,
    }
    ds = Dataset(samples, labels, splits, labeled_index, DOMAIN_SPATIAL, meta)
    ds.validate()
    return ds


# ---------------------------------------------------------------------------
# raw dataset file format
#
# magic "S2CS" | u16 version | u8 domain | u32 n_samples, rows, cols, channels
# | payload float32 LE, C-order (n_samples, channels, rows, cols)
# | n_samples label bytes (0 indoor, 1 outdoor, 255 unlabeled)
#
# A JSON sidecar (<path>.meta.json) carries splits, labeled_index and the
# generation config.
# ---------------------------------------------------------------------------


def _payload_view(ds: Dataset):
    if ds.domain == DOMAIN_SPATIAL:
        n, rows, cols = ds.samples.shape
        out = np.empty((n, 2, rows, cols), dtype="<f4")
        out[:, 0] = ds.samples.real
        out[:, 1] = ds.samples.imag
        return out, rows, cols, 2
    n, ch, rows, cols = ds.samples.shape
    return ds.samples.astype("<f4", copy=False), rows, cols, ch


def export_raw_dataset(ds: Dataset, path):
    payload, rows, cols, channels = _payload_view(ds)
    header = np.array([ds.n_samples, rows, cols, channels], dtype="<u4")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(np.uint16(_VERSION).tobytes())
        f.write(np.uint8(ds.domain).tobytes())
        f.write(header.tobytes())
        f.write(payload.tobytes())
        f.write(ds.labels.astype(np.uint8).tobytes())
    sidecar = {
        "version": _VERSION,
        "splits": {k: v.tolist() for k, v in ds.splits.items()},
        "labeled_index": ds.labeled_index.tolist(),
        "meta": ds.meta,
    }
    with open(str(path) + ".meta.json", "w") as f:
        json.dump(sidecar, f, indent=1, sort_keys=True)
        f.write("\n")


def import_raw_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _MAGIC:
        raise DataFormatError(
            f"bad magic {blob[:4]!r}, expected {_MAGIC!r}", offset=0
        )
    if len(blob) < 23:
        raise TruncatedFileError("file shorter than the fixed header", offset=len(blob))
    version = int(np.frombuffer(blob, "<u2", 1, offset=4)[0])
    if version != _VERSION:
        raise DataFormatError(f"unsupported version {version}", offset=4)
    domain = blob[6]
    if domain not in (DOMAIN_SPATIAL, DOMAIN_ANGULAR):
        raise DataFormatError(f"unknown domain flag {domain}", offset=6)
    n, rows, cols, channels = (int(v) for v in np.frombuffer(blob, "<u4", 4, offset=7))
    if channels != 2:
        raise DataFormatError(f"expected 2 channels, got {channels}", offset=19)
    payload_off = 23
    payload_len = n * channels * rows * cols * 4
    if len(blob) < payload_off + payload_len + n:
        raise TruncatedFileError(
            f"declared {n} samples but file ends early", offset=len(blob)
        )
    flat = np.frombuffer(blob, "<f4", n * channels * rows * cols, offset=payload_off)
    tensor = flat.reshape(n, channels, rows, cols)
    labels = np.frombuffer(blob, np.uint8, n, offset=payload_off + payload_len).copy()
    if domain == DOMAIN_SPATIAL:
        samples = (tensor[:, 0] + 1j * tensor[:, 1]).astype(np.complex64)
    else:
        samples = tensor.astype(np.float32)

    sidecar_path = str(path) + ".meta.json"
    if os.path.exists(sidecar_path):
        with open(sidecar_path) as f:
            side = json.load(f)
        splits = {k: np.asarray(v, dtype=np.int64) for k, v in side["splits"].items()}
        labeled_index = np.asarray(side["labeled_index"], dtype=np.int64)
        meta = side.get("meta", {})
    else:
        warnings.warn(f"no sidecar {sidecar_path}; treating all samples as train")
        splits = {
            "train": np.arange(n),
            "val": np.arange(0),
            "test": np.arange(0),
        }
        labeled_index = np.arange(n)[labels != UNLABELED]
        meta = {}
    ds = Dataset(samples, labels, splits, labeled_index, int(domain), meta)
    ds.validate()
    return ds
