"""Cell-free network synthesis: topology, activity, signatures, received signals.

The geometry puts access points on a square grid clipped to a circular
coverage area and drops devices uniformly inside it.  Large-scale gains follow
a log-distance path-loss law, optionally rescaled per device so that the
strongest AP sees a configured SNR.  All other modules consume the artifacts
produced here.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, DomainError
from .seeding import complex_normal

# Distances are floored at 1 mm so a device sitting exactly on an AP cannot
# produce an infinite gain.
_MIN_DISTANCE_KM = 1e-6
_RADIUS_EPS = 1e-9


@dataclass(frozen=True)
class TopologyConfig:
    """Geometry and propagation parameters for one network draw."""

    num_aps: int = 20
    num_devices: int = 1000
    ap_spacing_km: float = 0.5
    coverage_radius_km: float = 1.8
    device_radius_km: float | None = None  # device disc radius; coverage radius when unset
    cooperation_radius_km: float = 0.5
    neighbor_degree: int | None = None  # overrides the radius rule when set
    pathloss_intercept_db: float = -128.1
    pathloss_slope_db: float = -36.7  # dB per decade of distance in km
    # Effective minimum link distance for the gain computation; devices inside
    # this radius of an AP see the gain at this distance (0 disables the floor).
    min_link_distance_km: float = 0.0
    snr_target_db: float | None = None  # nearest-AP SNR after gain rescaling
    noise_power: float = 1.0

    def validate(self) -> None:
        if self.num_aps < 1 or self.num_devices < 1:
            raise ConfigurationError("num_aps and num_devices must be >= 1")
        if self.coverage_radius_km <= 0:
            raise ConfigurationError("coverage_radius_km must be > 0")
        if self.device_radius_km is not None and self.device_radius_km <= 0:
            raise ConfigurationError("device_radius_km must be > 0 when set")
        if self.cooperation_radius_km < 0:
            raise ConfigurationError("cooperation_radius_km must be >= 0")
        if self.ap_spacing_km <= 0:
            raise ConfigurationError("ap_spacing_km must be > 0")
        if self.neighbor_degree is not None and self.neighbor_degree < 0:
            raise ConfigurationError("neighbor_degree must be >= 0")
        if self.min_link_distance_km < 0:
            raise ConfigurationError("min_link_distance_km must be >= 0")
        if self.noise_power <= 0:
            raise ConfigurationError("noise_power must be > 0")


@dataclass(frozen=True)
class NetworkTopology:
    """AP/device geometry, cooperation graph and large-scale gains."""

    ap_positions: np.ndarray  # (B, 2) km
    device_positions: np.ndarray  # (N, 2) km
    neighbor_sets: tuple  # per AP, sorted tuple of AP indices including itself
    large_scale_gains: np.ndarray  # (B, N) linear power gains

    @property
    def num_aps(self) -> int:
        return self.ap_positions.shape[0]

    @property
    def num_devices(self) -> int:
        return self.device_positions.shape[0]

    def neighbors_without_self(self, b: int) -> tuple:
        return tuple(l for l in self.neighbor_sets[b] if l != b)


@dataclass(frozen=True)
class ActivityPattern:
    """Binary activity indicators and the corresponding active index set."""

    indicators: np.ndarray  # (N,) 0/1 ints

    @property
    def active_set(self) -> np.ndarray:
        return np.flatnonzero(self.indicators)

    @property
    def num_active(self) -> int:
        return int(self.indicators.sum())


@dataclass(frozen=True)
class SignatureMatrix:
    """Complex signature (or codebook) matrix, one column per device/codeword."""

    entries: np.ndarray  # (L, N) complex

    @property
    def length(self) -> int:
        return self.entries.shape[0]

    @property
    def count(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True)
class ReceivedSignal:
    """Noisy multi-antenna observation at one AP."""

    samples: np.ndarray  # (L, M) complex
    noise_power: float

    @property
    def antenna_count(self) -> int:
        return self.samples.shape[1]


def _grid_candidates(spacing: float, radius: float) -> np.ndarray:
    m = int(np.ceil(radius / spacing)) + 1
    ij = np.arange(-m, m + 1)
    xs, ys = np.meshgrid(ij * spacing, ij * spacing, indexing="ij")
    pts = np.column_stack([xs.ravel(), ys.ravel()])
    d2 = np.einsum("ij,ij->i", pts, pts)
    inside = d2 <= (radius + _RADIUS_EPS) ** 2
    pts, d2 = pts[inside], d2[inside]
    order = np.lexsort((pts[:, 1], pts[:, 0], np.round(d2, 12)))
    return pts[order]


def _radius_neighbors(ap_positions: np.ndarray, radius: float) -> tuple:
    diff = ap_positions[:, None, :] - ap_positions[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    sets = []
    for b in range(ap_positions.shape[0]):
        members = set(np.flatnonzero(dist[b] <= radius + _RADIUS_EPS).tolist())
        members.add(b)
        sets.append(tuple(sorted(members)))
    return tuple(sets)


def _knearest_neighbors(ap_positions: np.ndarray, degree: int) -> tuple:
    B = ap_positions.shape[0]
    diff = ap_positions[:, None, :] - ap_positions[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    links = [set() for _ in range(B)]
    k = min(degree, B - 1)
    for b in range(B):
        order = np.lexsort((np.arange(B), dist[b]))
        picked = [int(l) for l in order if l != b][:k]
        for l in picked:  # symmetrize by union so the relation stays mutual
            links[b].add(l)
            links[l].add(b)
    return tuple(tuple(sorted(links[b] | {b})) for b in range(B))


def pathloss_gain_db(distance_km: np.ndarray, intercept_db: float, slope_db: float) -> np.ndarray:
    d = np.maximum(distance_km, _MIN_DISTANCE_KM)
    return intercept_db + slope_db * np.log10(d)


def build_topology(config: TopologyConfig, rng: np.random.Generator) -> NetworkTopology:
    """Generate a network draw: AP grid, uniform devices, gains, neighbor graph."""
    config.validate()
    candidates = _grid_candidates(config.ap_spacing_km, config.coverage_radius_km)
    if candidates.shape[0] < config.num_aps:
        raise ConfigurationError(
            f"grid inside the coverage disc holds {candidates.shape[0]} APs, "
            f"{config.num_aps} requested"
        )
    ap_pos = candidates[: config.num_aps].copy()

    device_radius = config.device_radius_km or config.coverage_radius_km
    r = device_radius * np.sqrt(rng.random(config.num_devices))
    phi = 2.0 * np.pi * rng.random(config.num_devices)
    dev_pos = np.column_stack([r * np.cos(phi), r * np.sin(phi)])

    if config.neighbor_degree is not None:
        neighbor_sets = _knearest_neighbors(ap_pos, config.neighbor_degree)
    else:
        neighbor_sets = _radius_neighbors(ap_pos, config.cooperation_radius_km)

    diff = ap_pos[:, None, :] - dev_pos[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    dist = np.maximum(dist, config.min_link_distance_km)
    gains = 10.0 ** (
        pathloss_gain_db(dist, config.pathloss_intercept_db, config.pathloss_slope_db) / 10.0
    )
    if config.snr_target_db is not None:
        # Rescale per device so its strongest AP sits exactly at the target SNR;
        # the inter-AP gain profile of each device is preserved.
        target = 10.0 ** (config.snr_target_db / 10.0) * config.noise_power
        gains = gains * (target / gains.max(axis=0, keepdims=True))

    return NetworkTopology(
        ap_positions=ap_pos,
        device_positions=dev_pos,
        neighbor_sets=neighbor_sets,
        large_scale_gains=gains,
    )


def sample_activity(num_devices: int, num_active: int, rng: np.random.Generator) -> ActivityPattern:
    """Draw exactly `num_active` active devices uniformly without replacement."""
    if num_active < 0 or num_active > num_devices:
        raise DomainError(f"num_active must lie in [0, {num_devices}], got {num_active}")
    indicators = np.zeros(num_devices, dtype=np.int8)
    if num_active:
        chosen = rng.choice(num_devices, size=num_active, replace=False)
        indicators[chosen] = 1
    return ActivityPattern(indicators=indicators)


def sample_activity_bernoulli(
    num_devices: int, activity_prob: float, rng: np.random.Generator
) -> ActivityPattern:
    """Draw each device active independently with the given probability."""
    if not 0.0 <= activity_prob <= 1.0:
        raise DomainError("activity_prob must lie in [0, 1]")
    indicators = (rng.random(num_devices) < activity_prob).astype(np.int8)
    return ActivityPattern(indicators=indicators)


def generate_signatures(
    length: int, count: int, rng: np.random.Generator, *, normalize_columns: bool = False
) -> SignatureMatrix:
    """Draw an i.i.d. zero-mean unit-variance complex Gaussian signature matrix.

    With `normalize_columns` every column is scaled to squared norm `length`,
    which is the convention for the shared codebook of unsourced access.
    """
    if length < 1 or count < 1:
        raise DomainError("signature dimensions must be >= 1")
    entries = complex_normal(rng, (length, count))
    if normalize_columns:
        norms = np.linalg.norm(entries, axis=0)
        entries = entries * (np.sqrt(length) / norms)
    return SignatureMatrix(entries=entries)


def true_state_vector(
    topology: NetworkTopology, activity: ActivityPattern, ap_index: int
) -> np.ndarray:
    """Device state vector of one AP: indicator times large-scale gain."""
    if not 0 <= ap_index < topology.num_aps:
        raise DomainError(f"ap_index {ap_index} out of range")
    return activity.indicators.astype(float) * topology.large_scale_gains[ap_index]


def synthesize_received(
    signatures: SignatureMatrix,
    gamma: np.ndarray,
    antennas: int,
    noise_power: float,
    rng: np.random.Generator,
) -> ReceivedSignal:
    """Draw Y = S diag(gamma)^(1/2) H + W with fresh unit-variance fading."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0):
        raise DomainError("device state vector must be nonnegative")
    if noise_power <= 0:
        raise DomainError("noise_power must be > 0")
    if antennas < 1:
        raise DomainError("antennas must be >= 1")
    n = signatures.count
    fading = complex_normal(rng, (n, antennas))
    noise = complex_normal(rng, (signatures.length, antennas), var=noise_power)
    samples = signatures.entries @ (np.sqrt(gamma)[:, None] * fading) + noise
    return ReceivedSignal(samples=samples, noise_power=noise_power)


def sample_covariance(signal: ReceivedSignal) -> np.ndarray:
    """Antenna-averaged sample covariance (1/M) Y Y^H."""
    y = signal.samples
    return (y @ y.conj().T) / y.shape[1]


def with_overrides(config: TopologyConfig, **kwargs) -> TopologyConfig:
    """Return a copy of the config with the given fields replaced."""
    return replace(config, **kwargs)
