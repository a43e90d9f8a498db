"""Unsourced random access: tree outer code, shared-codebook inner code, metrics.

Messages are split into subblocks; every subblock after the first is padded to
J bits with parity bits that are random binary linear functions of all
preceding data bits (identical for all devices, fixed by a seed).  Each
subblock selects one column of a common codebook; the cooperative detector
recovers the active columns per subblock and the outer decoder stitches the
parity-consistent paths back into messages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError
from .network import ReceivedSignal, SignatureMatrix, sample_covariance
from .seeding import complex_normal, stream
from .solver import DetectionProblem, SolverConfig, run

_MAX_SLOT_BITS = 20  # slot indices stay machine-int sized


@dataclass(frozen=True)
class TreeCodeConfig:
    """Subblock/parity layout of the tree outer code."""

    slot_bits: int  # J: bits per subblock slot
    data_bits: tuple  # q_i per subblock; q_1 == J, q_i < J afterwards
    parity_seed: int = 0

    @property
    def num_subblocks(self) -> int:
        return len(self.data_bits)

    @property
    def total_bits(self) -> int:
        return int(sum(self.data_bits))

    @property
    def parity_bits(self) -> tuple:
        return tuple(self.slot_bits - q for q in self.data_bits)

    @property
    def total_parity_bits(self) -> int:
        return int(sum(self.parity_bits[1:]))

    @classmethod
    def from_parity_width(
        cls, slot_bits: int, num_subblocks: int, parity_width: int, parity_seed: int = 0
    ) -> "TreeCodeConfig":
        """Uniform allocation: every subblock after the first carries
        `parity_width` parity bits."""
        data = (slot_bits,) + (slot_bits - parity_width,) * (num_subblocks - 1)
        return cls(slot_bits=slot_bits, data_bits=data, parity_seed=parity_seed)

    @classmethod
    def with_parity_tail(
        cls, slot_bits: int, num_subblocks: int, parity_width: int, parity_seed: int = 0
    ) -> "TreeCodeConfig":
        """Uniform parity width but an all-parity final subblock.

        A path that deviates from a valid message only in the last subblock
        faces every one of that subblock's parity bits, so the heavier tail
        suppresses the dominant false-stitch mode.
        """
        if num_subblocks < 2:
            return cls(slot_bits=slot_bits, data_bits=(slot_bits,), parity_seed=parity_seed)
        data = (slot_bits,) + (slot_bits - parity_width,) * (num_subblocks - 2) + (0,)
        return cls(slot_bits=slot_bits, data_bits=data, parity_seed=parity_seed)

    def validate(self) -> None:
        if not 1 <= self.slot_bits <= _MAX_SLOT_BITS:
            raise ConfigurationError(f"slot_bits must lie in [1, {_MAX_SLOT_BITS}]")
        if self.num_subblocks < 1:
            raise ConfigurationError("need at least one subblock")
        if self.data_bits[0] != self.slot_bits:
            raise ConfigurationError("the first subblock must be all data bits")
        for q in self.data_bits[1:]:
            if not 0 <= q < self.slot_bits:
                raise ConfigurationError(
                    "later subblocks must carry fewer data bits than slot_bits"
                )

    def parity_matrices(self) -> list:
        """Random binary parity maps, one per subblock (empty for the first).

        Matrix i has shape (parity_bits_i, data bits of subblocks < i); the
        draw depends only on the parity seed, so all devices share it.
        """
        matrices = [np.zeros((0, 0), dtype=np.uint8)]
        preceding = self.data_bits[0]
        for i in range(1, self.num_subblocks):
            rng = stream(self.parity_seed, "parity", i)
            rows = self.slot_bits - self.data_bits[i]
            matrices.append(rng.integers(0, 2, size=(rows, preceding), dtype=np.uint8))
            preceding += self.data_bits[i]
        return matrices


@dataclass
class MessageList:
    """Decoded message set of one AP (messages as total_bits-wide integers)."""

    messages: set = field(default_factory=set)

    def __len__(self) -> int:
        return len(self.messages)


def _int_to_bits(value: int, width: int) -> np.ndarray:
    return np.array([(value >> (width - 1 - i)) & 1 for i in range(width)], dtype=np.uint8)


def _bits_to_int(bits) -> int:
    out = 0
    for b in bits:
        out = (out << 1) | int(b)
    return out


def tree_encode(message: int, config: TreeCodeConfig) -> np.ndarray:
    """Map a total_bits-wide message to its sequence of slot indices."""
    config.validate()
    if not 0 <= message < (1 << config.total_bits):
        raise DomainError(f"message does not fit in {config.total_bits} bits")
    bits = _int_to_bits(message, config.total_bits)
    matrices = config.parity_matrices()
    slots = np.empty(config.num_subblocks, dtype=np.int64)
    consumed = 0
    for i, q in enumerate(config.data_bits):
        data = bits[consumed : consumed + q]
        if i == 0:
            slot_bits = data
        else:
            parity = (matrices[i] @ bits[:consumed]) % 2
            slot_bits = np.concatenate([data, parity.astype(np.uint8)])
        slots[i] = _bits_to_int(slot_bits)
        consumed += q
    return slots


def tree_decode(slot_sets, config: TreeCodeConfig) -> MessageList:
    """Depth-first stitch over per-subblock candidate sets with parity pruning."""
    config.validate()
    matrices = config.parity_matrices()
    sets = [sorted(int(r) for r in s) for s in slot_sets]
    if len(sets) != config.num_subblocks:
        raise DomainError("one candidate set per subblock is required")
    survivors = set()
    # Stack entries: (next subblock index, accumulated data bits).
    stack = [(1, _int_to_bits(r, config.slot_bits)) for r in reversed(sets[0])]
    while stack:
        i, data = stack.pop()
        if i == config.num_subblocks:
            survivors.add(_bits_to_int(data))
            continue
        q = config.data_bits[i]
        want_parity = (matrices[i] @ data) % 2
        p_width = config.slot_bits - q
        for r in sets[i]:
            bits = _int_to_bits(r, config.slot_bits)
            if np.array_equal(bits[q:], want_parity.astype(np.uint8)):
                stack.append((i + 1, np.concatenate([data, bits[:q]])))
    return MessageList(messages=survivors)


def synthesize_subblock(
    codebook: SignatureMatrix,
    slot_choices: np.ndarray,
    gains: np.ndarray,
    antennas: int,
    noise_power: float,
    rng: np.random.Generator,
):
    """Received signal of one AP for one subblock plus the true codeword state.

    `slot_choices[k]` is the column sent by active device k and `gains[k]` its
    large-scale gain at this AP; colliding devices add their gains.
    """
    if noise_power <= 0:
        raise DomainError("noise_power must be > 0")
    slot_choices = np.asarray(slot_choices, dtype=int)
    gains = np.asarray(gains, dtype=float)
    if slot_choices.shape != gains.shape:
        raise DomainError("one gain per transmitted slot is required")
    if slot_choices.size and (slot_choices.min() < 0 or slot_choices.max() >= codebook.count):
        raise DomainError("slot index out of codebook range")
    truth = np.zeros(codebook.count)
    np.add.at(truth, slot_choices, gains)
    fading = complex_normal(rng, (codebook.count, antennas))
    noise = complex_normal(rng, (codebook.length, antennas), var=noise_power)
    samples = codebook.entries @ (np.sqrt(truth)[:, None] * fading) + noise
    return ReceivedSignal(samples=samples, noise_power=noise_power), truth


def inner_decode(
    signals_by_ap,
    codebook: SignatureMatrix,
    neighbor_sets: tuple,
    solver_config: SolverConfig,
    seed: int,
    with_trace: bool = False,
):
    """Cooperative detection of the active codebook columns for one subblock.

    Returns the per-AP codeword state estimates; with `with_trace` the solver
    round trace is returned alongside them.
    """
    problem = DetectionProblem(
        signatures=codebook,
        sample_covs=[sample_covariance(sig) for sig in signals_by_ap],
        noise_power=signals_by_ap[0].noise_power,
        neighbor_sets=neighbor_sets,
    )
    result = run(problem, solver_config, seed)
    if with_trace:
        return result.estimates, result.trace
    return result.estimates


def select_active_slots(
    gamma_hat: np.ndarray, noise_power: float, threshold_scale: float
) -> np.ndarray:
    """Active-column set: slots whose estimate reaches scale * noise power."""
    if threshold_scale <= 0:
        raise ConfigurationError("threshold_scale must be > 0")
    return np.flatnonzero(np.asarray(gamma_hat) >= threshold_scale * noise_power)


@dataclass(frozen=True)
class UnsourcedMetrics:
    missed_detection: np.ndarray  # per AP
    false_alarm: np.ndarray  # per AP
    error_probability: float  # network average of (P_MD + P_FA)


def unsourced_metrics(sent_messages, lists_by_ap) -> UnsourcedMetrics:
    """Per-AP missed-detection/false-alarm fractions and their network average.

    An empty decoded list contributes zero false alarms by convention.
    """
    sent = set(int(m) for m in sent_messages)
    k = len(sent_messages)
    p_md = np.zeros(len(lists_by_ap))
    p_fa = np.zeros(len(lists_by_ap))
    for b, message_list in enumerate(lists_by_ap):
        decoded = message_list.messages if isinstance(message_list, MessageList) else set(message_list)
        if k:
            p_md[b] = sum(1 for m in sent_messages if int(m) not in decoded) / k
        if decoded:
            p_fa[b] = len(decoded - sent) / len(decoded)
    p_e = float(np.mean(p_md + p_fa)) if len(lists_by_ap) else 0.0
    return UnsourcedMetrics(missed_detection=p_md, false_alarm=p_fa, error_probability=p_e)
