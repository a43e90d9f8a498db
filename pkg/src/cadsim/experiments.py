"""Experiment configuration, Monte-Carlo sweeps, metrics, and persistence.

A sweep walks a grid along one axis (sequence length, antennas, SNR,
cooperation degree, activity probability, or transmit power), runs seeded
independent trials per point, and aggregates means with standard errors into a
RunRecord that serializes to canonical JSON plus a flat CSV.  Trials are
paired across grid points: trial j reuses the same seed at every point.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import os
import tempfile
from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import ConfigurationError, DomainError, TrialAbort
from .network import (
    ActivityPattern,
    TopologyConfig,
    build_topology,
    generate_signatures,
    sample_activity,
    sample_activity_bernoulli,
    sample_covariance,
    synthesize_received,
    true_state_vector,
)
from .seeding import spawn_seed, stream
from .solver import (
    DetectionProblem,
    SolverConfig,
    run,
    threshold_activity,
)
from .unsourced import (
    TreeCodeConfig,
    inner_decode,
    select_active_slots,
    synthesize_subblock,
    tree_decode,
    tree_encode,
    unsourced_metrics,
)

SCHEMA_VERSION = 1

SWEEP_AXES = ("L", "M", "SNR", "cooperation-degree", "activity-prob", "transmit-power")

# Slot-set threshold scale for the unsourced inner decoder, calibrated together
# with the solver threshold on the desk instance.
DEFAULT_SLOT_THRESHOLD_SCALE = 0.05


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete description of one sweep: instance, solver, grid, trials."""

    mode: str  # "sourced" | "unsourced"
    topology: TopologyConfig
    solver: SolverConfig
    signature_length: int
    antennas: int
    snr_db: float
    active_count: int | None = None
    activity_prob: float | None = None
    codec: TreeCodeConfig | None = None
    slot_threshold_scale: float = DEFAULT_SLOT_THRESHOLD_SCALE
    axis: str = "L"
    grid: tuple = (40,)
    trials: int = 1
    master_seed: int = 0
    schema_version: int = SCHEMA_VERSION

    def validate(self) -> None:
        if self.mode not in ("sourced", "unsourced"):
            raise ConfigurationError(f"mode must be sourced or unsourced, got {self.mode!r}")
        if self.axis not in SWEEP_AXES:
            raise ConfigurationError(f"axis must be one of {SWEEP_AXES}, got {self.axis!r}")
        if not self.grid:
            raise ConfigurationError("grid must be non-empty")
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if self.signature_length < 1 or self.antennas < 1:
            raise ConfigurationError("signature_length and antennas must be >= 1")
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigurationError(
                f"unsupported schema_version {self.schema_version}, expected {SCHEMA_VERSION}"
            )
        self.topology.validate()
        self.solver.validate()
        if self.mode == "sourced":
            if self.active_count is None and self.activity_prob is None:
                raise ConfigurationError("sourced mode needs active_count or activity_prob")
        else:
            if self.codec is None:
                raise ConfigurationError("unsourced mode needs a codec config")
            self.codec.validate()
            if self.active_count is None:
                raise ConfigurationError("unsourced mode needs active_count")


def apply_axis(config: ExperimentConfig, value) -> ExperimentConfig:
    """Return the configuration of one grid point."""
    axis = config.axis
    if axis == "L":
        return replace(config, signature_length=int(value))
    if axis == "M":
        return replace(config, antennas=int(value))
    if axis in ("SNR", "transmit-power"):
        return replace(config, snr_db=float(value))
    if axis == "cooperation-degree":
        topo = replace(config.topology, neighbor_degree=int(value))
        return replace(config, topology=topo)
    if axis == "activity-prob":
        return replace(config, activity_prob=float(value), active_count=None)
    raise ConfigurationError(f"unknown sweep axis {axis!r}")


def compute_aer(truth: ActivityPattern, estimate: ActivityPattern) -> float:
    """Missed-detection fraction plus false-alarm fraction.

    A degenerate denominator (no active or no inactive devices) contributes
    zero to the sum.
    """
    t = truth.indicators
    e = estimate.indicators
    if t.shape != e.shape:
        raise DomainError("activity patterns must have equal length")
    active = int(t.sum())
    inactive = t.size - active
    missed = int(np.sum((t == 1) & (e == 0)))
    false = int(np.sum((t == 0) & (e == 1)))
    aer = 0.0
    if active:
        aer += missed / active
    if inactive:
        aer += false / inactive
    return aer


@dataclass
class TrialResult:
    seed: int
    metric: float
    missed: float
    false_alarm: float
    grad_evals: int
    messages: int
    aborted: bool = False


def _draw_activity(config: ExperimentConfig, rng) -> ActivityPattern:
    if config.activity_prob is not None:
        return sample_activity_bernoulli(config.topology.num_devices, config.activity_prob, rng)
    return sample_activity(config.topology.num_devices, config.active_count, rng)


def build_problem(config: ExperimentConfig, trial_seed: int):
    """Synthesize one sourced detection instance: (problem, topology, activity)."""
    topo_cfg = replace(config.topology, snr_target_db=config.snr_db)
    topology = build_topology(topo_cfg, stream(trial_seed, "topology"))
    activity = _draw_activity(config, stream(trial_seed, "activity"))
    signatures = generate_signatures(
        config.signature_length, topo_cfg.num_devices, stream(trial_seed, "signatures")
    )
    noise = topo_cfg.noise_power
    sample_covs = []
    for b in range(topology.num_aps):
        gamma_true = true_state_vector(topology, activity, b)
        received = synthesize_received(
            signatures, gamma_true, config.antennas, noise, stream(trial_seed, "rx", b)
        )
        sample_covs.append(sample_covariance(received))
    problem = DetectionProblem(
        signatures=signatures,
        sample_covs=sample_covs,
        noise_power=noise,
        neighbor_sets=topology.neighbor_sets,
    )
    return problem, topology, activity


def run_trial_sourced(config: ExperimentConfig, trial_seed: int) -> TrialResult:
    """One end-to-end sourced trial: synthesize, solve, threshold, score."""
    problem, topology, activity = build_problem(config, trial_seed)
    noise = problem.noise_power
    result = run(problem, config.solver, spawn_seed(trial_seed, "solver"))
    aers = np.empty(topology.num_aps)
    missed = np.empty(topology.num_aps)
    false = np.empty(topology.num_aps)
    for b in range(topology.num_aps):
        est = threshold_activity(result.estimates[b], noise, config.solver.threshold_scale)
        aers[b] = compute_aer(activity, est)
        t, e = activity.indicators, est.indicators
        n_act = max(int(t.sum()), 1)
        n_inact = max(int(t.size - t.sum()), 1)
        missed[b] = int(np.sum((t == 1) & (e == 0))) / n_act
        false[b] = int(np.sum((t == 0) & (e == 1))) / n_inact
    return TrialResult(
        seed=trial_seed,
        metric=float(aers.mean()),
        missed=float(missed.mean()),
        false_alarm=float(false.mean()),
        grad_evals=result.trace.grad_evals,
        messages=result.trace.total_messages,
    )


def run_trial_unsourced(config: ExperimentConfig, trial_seed: int) -> TrialResult:
    """One end-to-end unsourced trial: encode, transmit, decode, score."""
    codec = config.codec
    topo_cfg = replace(config.topology, snr_target_db=config.snr_db)
    topology = build_topology(topo_cfg, stream(trial_seed, "topology"))
    activity = sample_activity(
        topo_cfg.num_devices, config.active_count, stream(trial_seed, "activity")
    )
    active = activity.active_set
    msg_rng = stream(trial_seed, "messages")
    messages = [int(m) for m in
                msg_rng.integers(0, 1 << codec.total_bits, size=len(active), dtype=np.int64)]
    slots = np.stack([tree_encode(m, codec) for m in messages]) if messages else \
        np.zeros((0, codec.num_subblocks), dtype=np.int64)
    codebook = generate_signatures(
        config.signature_length, 1 << codec.slot_bits,
        stream(trial_seed, "codebook"), normalize_columns=True,
    )
    noise = topo_cfg.noise_power
    gains = topology.large_scale_gains[:, active]  # (B, K)

    grad_evals = 0
    messages_on_wire = 0
    slot_sets = [[] for _ in range(topology.num_aps)]
    for i in range(codec.num_subblocks):
        signals = []
        for b in range(topology.num_aps):
            sig, _ = synthesize_subblock(
                codebook, slots[:, i], gains[b], config.antennas, noise,
                stream(trial_seed, "subblock", i, b),
            )
            signals.append(sig)
        estimates, trace = inner_decode(
            signals, codebook, topology.neighbor_sets, config.solver,
            spawn_seed(trial_seed, "inner", i), with_trace=True,
        )
        grad_evals += trace.grad_evals
        messages_on_wire += trace.total_messages
        for b in range(topology.num_aps):
            slot_sets[b].append(
                select_active_slots(estimates[b], noise, config.slot_threshold_scale)
            )
    lists = [tree_decode(slot_sets[b], codec) for b in range(topology.num_aps)]
    metrics = unsourced_metrics(messages, lists)
    return TrialResult(
        seed=trial_seed,
        metric=metrics.error_probability,
        missed=float(metrics.missed_detection.mean()),
        false_alarm=float(metrics.false_alarm.mean()),
        grad_evals=grad_evals,
        messages=messages_on_wire,
    )


def _run_point_trial(args):
    point_config, trial_seed, mode = args
    try:
        if mode == "sourced":
            return run_trial_sourced(point_config, trial_seed)
        return run_trial_unsourced(point_config, trial_seed)
    except TrialAbort:
        return TrialResult(seed=trial_seed, metric=float("nan"), missed=float("nan"),
                           false_alarm=float("nan"), grad_evals=0, messages=0, aborted=True)


@dataclass
class RunRecord:
    """Persisted outcome of one sweep, reproducible from its seed."""

    fingerprint: str
    master_seed: int
    mode: str
    axis: str
    config: dict
    points: list
    schema_version: int = SCHEMA_VERSION
    diagnostics: dict | None = None

    def to_json_bytes(self) -> bytes:
        payload = {
            "schema_version": self.schema_version,
            "fingerprint": self.fingerprint,
            "master_seed": self.master_seed,
            "mode": self.mode,
            "axis": self.axis,
            "config": self.config,
            "points": self.points,
        }
        if self.diagnostics is not None:
            payload["diagnostics"] = self.diagnostics
        return (json.dumps(payload, sort_keys=True, indent=1, allow_nan=False) + "\n").encode()

    def to_csv(self) -> str:
        def cell(v):
            return "" if v is None else repr(v)

        lines = ["axis,mean,stderr,trials,aborts"]
        for point in self.points:
            lines.append(
                f"{cell(point['value'])},{cell(point['metric_mean'])},"
                f"{cell(point['metric_stderr'])},{point['trials']},{point['aborts']}"
            )
        return "\n".join(lines) + "\n"


def config_to_dict(config: ExperimentConfig) -> dict:
    out = asdict(config)
    out["grid"] = list(config.grid)
    if config.codec is not None:
        out["codec"]["data_bits"] = list(config.codec.data_bits)
    return out


def config_from_dict(data: dict) -> ExperimentConfig:
    try:
        topo = TopologyConfig(**data["topology"])
        solver = SolverConfig(**data["solver"])
        codec = None
        if data.get("codec"):
            codec_data = dict(data["codec"])
            codec_data["data_bits"] = tuple(codec_data["data_bits"])
            codec = TreeCodeConfig(**codec_data)
        known = {
            "mode", "signature_length", "antennas", "snr_db", "active_count",
            "activity_prob", "slot_threshold_scale", "axis", "grid", "trials",
            "master_seed", "schema_version",
        }
        extra = set(data) - known - {"topology", "solver", "codec"}
        if extra:
            raise ConfigurationError(f"unknown config fields: {sorted(extra)}")
        kwargs = {k: data[k] for k in known if k in data}
        kwargs["grid"] = tuple(kwargs.get("grid", ()))
        config = ExperimentConfig(topology=topo, solver=solver, codec=codec, **kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"bad config structure: {exc}") from exc
    except KeyError as exc:
        raise ConfigurationError(f"missing config field: {exc}") from exc
    config.validate()
    return config


def fingerprint(config: ExperimentConfig) -> str:
    """Content hash of the configuration, stable under field reordering."""
    canonical = json.dumps(config_to_dict(config), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def run_sweep(config: ExperimentConfig, workers: int = 1,
              progress=None) -> RunRecord:
    """Execute every grid point with paired per-trial seeds and aggregate."""
    config.validate()
    trial_seeds = [spawn_seed(config.master_seed, "trial", j) for j in range(config.trials)]
    points = []
    for value in config.grid:
        point_config = apply_axis(config, value)
        jobs = [(point_config, s, config.mode) for s in trial_seeds]
        if workers > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_run_point_trial, jobs))
        else:
            results = [_run_point_trial(j) for j in jobs]
        ok = [r for r in results if not r.aborted]
        metrics = np.array([r.metric for r in ok])
        mean = float(metrics.mean()) if len(ok) else None
        stderr = float(metrics.std(ddof=1) / np.sqrt(len(ok))) if len(ok) > 1 else 0.0
        points.append({
            "value": value,
            "metric_mean": mean,
            "metric_stderr": stderr,
            "trials": len(results),
            "aborts": sum(1 for r in results if r.aborted),
            "per_trial": [
                {
                    "trial": j,
                    "seed": r.seed,
                    "metric": None if r.aborted else r.metric,
                    "missed": None if r.aborted else r.missed,
                    "false_alarm": None if r.aborted else r.false_alarm,
                    "grad_evals": r.grad_evals,
                    "messages": r.messages,
                    "aborted": r.aborted,
                }
                for j, r in enumerate(results)
            ],
        })
        if progress is not None:
            progress(config.axis, value, mean, stderr)
    return RunRecord(
        fingerprint=fingerprint(config),
        master_seed=config.master_seed,
        mode=config.mode,
        axis=config.axis,
        config=config_to_dict(config),
        points=points,
    )


def save_record(record: RunRecord, path: str) -> None:
    """Atomic write (temp file then rename) of the record JSON."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(record.to_json_bytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_record(path: str) -> RunRecord:
    with open(path, "rb") as handle:
        data = json.loads(handle.read().decode())
    return RunRecord(
        fingerprint=data["fingerprint"],
        master_seed=data["master_seed"],
        mode=data["mode"],
        axis=data["axis"],
        config=data["config"],
        points=data["points"],
        schema_version=data["schema_version"],
        diagnostics=data.get("diagnostics"),
    )


# ---------------------------------------------------------------------------
# Shipped desk-scale presets.  Full-scale geometry (20 APs, 1000 devices, 32+
# antennas) runs for hours; these run in minutes and keep every mechanism.
# The solver's epsilon and rho here are recalibrated for the normalized gain
# units this package uses (noise power 1, nearest-AP gains at the SNR target):
# the literature values presume raw path-loss units about nine orders of
# magnitude smaller, where they act as light guards rather than hard caps.
# ---------------------------------------------------------------------------

DESK_EPSILON = 10.0
DESK_RHO = 0.05


def desk_topology() -> TopologyConfig:
    return TopologyConfig(
        num_aps=5,
        num_devices=200,
        ap_spacing_km=0.5,
        coverage_radius_km=1.8,
        cooperation_radius_km=1.0,  # complete graph on the 5-AP cross, degree 4
        noise_power=1.0,
    )


def desk_solver(**overrides) -> SolverConfig:
    base = dict(epsilon=DESK_EPSILON, rho=DESK_RHO, max_iters=150)
    base.update(overrides)
    return SolverConfig(**base)


def desk_sourced() -> ExperimentConfig:
    return ExperimentConfig(
        mode="sourced",
        topology=desk_topology(),
        solver=desk_solver(),
        signature_length=40,
        antennas=16,
        snr_db=10.0,
        active_count=60,
        axis="L",
        grid=(40,),
        trials=50,
        master_seed=1,
    )


def desk_unsourced() -> ExperimentConfig:
    return ExperimentConfig(
        mode="unsourced",
        topology=TopologyConfig(
            num_aps=3,
            num_devices=64,
            ap_spacing_km=0.5,
            coverage_radius_km=0.6,
            device_radius_km=0.25,
            cooperation_radius_km=1.1,
            min_link_distance_km=0.25,
            noise_power=1.0,
        ),
        solver=desk_solver(max_iters=100),
        signature_length=40,
        antennas=32,
        snr_db=10.0,
        active_count=5,
        # Parity widths taper toward an all-parity tail: late-deviating stitch
        # paths face the widest checks, which is where false stitches
        # concentrate with short subblock counts.
        codec=TreeCodeConfig(slot_bits=8, data_bits=(8, 4, 2, 0)),
        axis="M",
        grid=(32,),
        trials=30,
        master_seed=1,
    )


PRESETS = {
    "desk_sourced": desk_sourced,
    "desk_unsourced": desk_unsourced,
}


def resolve_config(name_or_path: str) -> ExperimentConfig:
    """Load a preset by name or a JSON config file by path."""
    if name_or_path in PRESETS:
        return PRESETS[name_or_path]()
    try:
        with open(name_or_path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ConfigurationError(
            f"config {name_or_path!r} is neither a preset {sorted(PRESETS)} nor a readable file: {exc}"
        ) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"{name_or_path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}"
        ) from exc
    return config_from_dict(data)
