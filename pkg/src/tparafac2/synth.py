"""Topic-style synthetic benchmarks: drifting concepts, strength profiles, noise.

Each of R concepts owns a set of authors (rows of A) and evolving sets of
words (rows of the B_k). Word activity follows one of four drift kinds;
concept importance over slices follows a strength profile. Values are drawn
from N(0.5, 0.5) clipped at zero, so everything is non-negative.

Slice indices in drift semantics are 1-based (a sudden switch at t0 means
slices 1..t0-1 use the first word set); word and author indices are 0-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .core import Parafac2Factors, TensorSlices

__all__ = [
    "DriftSpec",
    "StrengthProfile",
    "SyntheticConfig",
    "drift_activity",
    "generate",
    "generate_to_dir",
    "easy_preset",
    "almostzero_preset",
    "overlap_preset",
    "make_overlapping",
    "config_to_dict",
    "config_from_dict",
    "DRIFT_KINDS",
    "STRENGTH_KINDS",
]

DRIFT_KINDS = ("sudden", "gradual", "reoccurring", "incremental")
STRENGTH_KINDS = ("constant", "increasing", "decreasing", "periodic")

# probability that a pre-switch slice shows the second word set under gradual drift
GRADUAL_P = 0.5


@dataclass(frozen=True)
class DriftSpec:
    """How one concept's active word set evolves over the K slices.

    ``word_sets`` holds two disjoint index tuples. For sudden and gradual
    drift the switch happens at slice ``t0``; reoccurring drift alternates
    sets every ``tp`` slices. Incremental drift starts from the first set and
    activates candidate words from the second with per-slice probability
    ``p_new`` from slice 2 on, ramping their weight by a sigmoid of slope
    ``steepness``; ``replaces[i]``, when given, is the initial word retired
    the moment candidate ``word_sets[1][i]`` activates.
    """

    kind: str
    word_sets: tuple[tuple[int, ...], ...]
    t0: int | None = None
    tp: int | None = None
    p_new: float | None = None
    steepness: float | None = None
    replaces: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in DRIFT_KINDS:
            raise ValueError(f"unknown drift kind {self.kind!r}")
        if len(self.word_sets) != 2:
            raise ValueError("word_sets must hold exactly two index tuples")
        s1, s2 = (tuple(int(w) for w in s) for s in self.word_sets)
        object.__setattr__(self, "word_sets", (s1, s2))
        if not s1:
            raise ValueError("the first word set must be non-empty")
        if not s2 and self.kind != "incremental":
            raise ValueError("the second word set must be non-empty")
        if len(set(s1)) != len(s1) or len(set(s2)) != len(s2):
            raise ValueError("word sets must not repeat indices")
        if set(s1) & set(s2):
            raise ValueError("the two word sets must be disjoint")
        if any(w < 0 for w in s1 + s2):
            raise ValueError("word indices must be non-negative")
        if self.kind in ("sudden", "gradual"):
            if self.t0 is None:
                raise ValueError(f"{self.kind} drift needs t0")
        if self.kind == "reoccurring" and self.tp is None:
            raise ValueError("reoccurring drift needs tp")
        if self.kind == "incremental":
            if self.p_new is None or not 0 < self.p_new <= 1:
                raise ValueError("incremental drift needs p_new in (0, 1]")
            if self.steepness is None:
                raise ValueError("incremental drift needs a sigmoid steepness")
        repl = tuple(int(w) for w in self.replaces)
        object.__setattr__(self, "replaces", repl)
        if repl:
            if self.kind != "incremental":
                raise ValueError("replacement pairing applies to incremental drift only")
            if len(repl) != len(s2):
                raise ValueError("replaces must pair one initial word per candidate")
            if not set(repl) <= set(s1):
                raise ValueError("replaced words must come from the first word set")

    @property
    def words(self) -> tuple[int, ...]:
        return self.word_sets[0] + self.word_sets[1]


@dataclass(frozen=True)
class StrengthProfile:
    """Concept importance over slices, with an optional near-zero window."""

    kind: str
    base: float = 1.0
    amp: float = 0.0
    period: float | None = None
    phase: float = 0.0
    low_window: tuple[int, int] | None = None
    low_level: float = 0.01

    def __post_init__(self):
        if self.kind not in STRENGTH_KINDS:
            raise ValueError(f"unknown strength kind {self.kind!r}")
        if self.base < 0 or self.amp < 0 or self.low_level < 0:
            raise ValueError("strength parameters must be non-negative")
        if self.kind == "periodic" and (self.period is None or self.period <= 0):
            raise ValueError("periodic strength needs a positive period")
        if self.low_window is not None:
            start, length = self.low_window
            if start < 0 or length < 1:
                raise ValueError("low_window must be (start >= 0, length >= 1)")
            object.__setattr__(self, "low_window", (int(start), int(length)))

    def values(self, K: int) -> np.ndarray:
        if self.kind == "constant":
            v = np.full(K, self.base)
        elif self.kind == "increasing":
            v = np.linspace(self.base, self.base + self.amp, K)
        elif self.kind == "decreasing":
            v = np.linspace(self.base + self.amp, self.base, K)
        else:
            t = np.arange(K)
            v = self.base + self.amp * 0.5 * (
                1.0 + np.sin(2.0 * math.pi * t / self.period + self.phase))
        if self.low_window is not None:
            start, length = self.low_window
            if start + length > K:
                raise ValueError(f"low_window {self.low_window} exceeds K={K}")
            v[start:start + length] = self.low_level
        return v


@dataclass(frozen=True)
class SyntheticConfig:
    """Full recipe for one synthetic dataset."""

    I: int
    J: int
    K: int
    R: int
    drifts: tuple[DriftSpec, ...]
    strengths: tuple[StrengthProfile, ...]
    author_set_size: int
    eta: float = 0.0
    overlap_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.I, self.J, self.K, self.R) < 1:
            raise ValueError("all dimensions must be positive")
        object.__setattr__(self, "drifts", tuple(self.drifts))
        object.__setattr__(self, "strengths", tuple(self.strengths))
        if len(self.drifts) != self.R or len(self.strengths) != self.R:
            raise ValueError("need exactly one drift and one strength profile per concept")
        if not 1 <= self.author_set_size <= self.I:
            raise ValueError("author_set_size must lie in [1, I]")
        if self.eta < 0:
            raise ValueError("noise level must be non-negative")
        if not 0 <= self.overlap_fraction < 1:
            raise ValueError("overlap_fraction must lie in [0, 1)")
        kinds = [d.kind for d in self.drifts]
        # concepts must not evolve identically; the all-incremental family
        # (shared-word benchmarks) is the one sanctioned exception
        if self.R <= 4 and len(set(kinds)) != self.R and set(kinds) != {"incremental"}:
            raise ValueError("drift kinds must be pairwise distinct")
        for d in self.drifts:
            if any(w >= self.J for w in d.words):
                raise ValueError("word index out of range")
            for t in (d.t0, d.tp):
                if t is not None and not 2 <= t <= self.K - 2:
                    raise ValueError(f"switch time {t} outside [2, K-2] for K={self.K}")
        for p in self.strengths:
            if p.low_window is not None:
                start, length = p.low_window
                if start + length > self.K:
                    raise ValueError("low_window exceeds K")


def _drift_weights(spec: DriftSpec, K: int, J: int, rng) -> np.ndarray:
    """(K, J) multiplier array; zero marks an inactive word."""
    W = np.zeros((K, J))
    s1, s2 = spec.word_sets
    s1 = list(s1)
    s2 = list(s2)
    if spec.kind == "sudden":
        for t in range(K):
            W[t, s1 if t + 1 < spec.t0 else s2] = 1.0
    elif spec.kind == "gradual":
        for t in range(K):
            if t + 1 < spec.t0:
                W[t, s2 if rng.random() < GRADUAL_P else s1] = 1.0
            else:
                W[t, s2] = 1.0
    elif spec.kind == "reoccurring":
        for t in range(K):
            W[t, s1 if (t // spec.tp) % 2 == 0 else s2] = 1.0
    else:
        W[:, s1] = 1.0
        activation = {}
        pending = list(s2)
        for t in range(2, K + 1):
            still = []
            for w in pending:
                if rng.random() < spec.p_new:
                    activation[w] = t
                else:
                    still.append(w)
            pending = still
        if spec.replaces:
            # replacement schedules must finish: late stragglers land on the
            # final slice so the ending word sets are disjoint across concepts
            for w in pending:
                activation[w] = K
            pending = []
        for i, w in enumerate(s2):
            ta = activation.get(w)
            if ta is None:
                continue
            t_idx = np.arange(ta, K + 1)
            W[t_idx - 1, w] = expit(spec.steepness * (t_idx - ta + 1))
            if i < len(spec.replaces):
                W[ta - 1:, spec.replaces[i]] = 0.0
    return W


def drift_activity(spec: DriftSpec, K: int, rng=None) -> list[frozenset[int]]:
    """Active word sets per slice. Random drift kinds consume ``rng``."""
    if rng is None:
        rng = np.random.default_rng(0)
    J = max(spec.words) + 1 if spec.words else 1
    W = _drift_weights(spec, K, J, rng)
    return [frozenset(np.flatnonzero(W[t] > 0).tolist()) for t in range(K)]


def _clipped_values(rng, n: int) -> np.ndarray:
    return np.maximum(0.0, rng.normal(0.5, 0.5, size=n))


def generate(config: SyntheticConfig):
    """Build one dataset: ``(noisy, clean, truth)``.

    Draw order is fixed (author sets and values, then per-concept word values
    and drift schedules, then the noise tensor), so a seed pins the dataset
    bit-for-bit. For the two-set drift kinds the second set's value vector is
    rescaled to the first set's norm, which keeps the ground-truth cross
    products B_k^T B_k constant over slices whenever the concepts' word sets
    are disjoint. Noise is additive Gaussian scaled to
    ``eta * ||clean||_F / ||noise||_F``.
    """
    I, J, K, R = config.I, config.J, config.K, config.R
    rng = np.random.default_rng([config.seed, 1])

    A = np.zeros((I, R))
    for r in range(R):
        authors = rng.choice(I, size=config.author_set_size, replace=False)
        A[authors, r] = _clipped_values(rng, config.author_set_size)

    B = np.zeros((K, J, R))
    for r, spec in enumerate(config.drifts):
        s1, s2 = spec.word_sets
        v = np.zeros(J)
        v[list(s1)] = _clipped_values(rng, len(s1))
        if s2:
            v2 = _clipped_values(rng, len(s2))
            if spec.kind in ("sudden", "gradual", "reoccurring"):
                n1 = float(np.linalg.norm(v[list(s1)]))
                n2 = float(np.linalg.norm(v2))
                if n2 > 0:
                    v2 = v2 * (n1 / n2)
            v[list(s2)] = v2
        W = _drift_weights(spec, K, J, rng)
        B[:, :, r] = W * v[None, :]

    C = np.stack([p.values(K) for p in config.strengths], axis=1)

    truth = Parafac2Factors(A, B, C)
    scaled = A[None, :, :] * C[:, None, :]
    clean = scaled @ np.swapaxes(B, 1, 2)

    theta = rng.standard_normal((K, I, J))
    noisy = clean + config.eta * float(np.linalg.norm(clean)) * theta / float(
        np.linalg.norm(theta))
    return TensorSlices(noisy), TensorSlices(clean), truth


def generate_to_dir(config: SyntheticConfig, path, overwrite: bool = False):
    """Generate and persist one dataset directory; returns its path."""
    from . import slab

    noisy, _, truth = generate(config)
    return slab.write_dataset(
        path, noisy, seed=config.seed, R_true=config.R,
        generator_config=config_to_dict(config), truth=truth,
        overwrite=overwrite,
    )


def _auto_set_size(J: int, R: int, cap: float) -> int:
    return max(1, min(round(J / 5), int(J // cap)))


def _draw_strengths(rng, R: int, K: int) -> list[StrengthProfile]:
    kinds = [str(k) for k in rng.permutation(["constant", "periodic", "decreasing"])][:R]
    out = []
    for kind in kinds:
        if kind == "constant":
            out.append(StrengthProfile("constant", base=float(rng.uniform(0.75, 1.25))))
        elif kind == "decreasing":
            out.append(StrengthProfile("decreasing", base=0.5,
                                       amp=float(rng.uniform(0.5, 1.0))))
        else:
            out.append(StrengthProfile(
                "periodic", base=0.5, amp=float(rng.uniform(0.5, 1.0)),
                period=K / 2.0, phase=float(rng.uniform(0.0, 2.0 * math.pi))))
    return out


def easy_preset(seed: int, *, I: int = 60, J: int = 40, K: int = 15, R: int = 3,
                eta: float = 0.5, word_set_size: int | None = None,
                author_set_size: int | None = None) -> SyntheticConfig:
    """Well-separated concepts: disjoint word sets, strengths bounded away
    from zero, one distinct drift kind per concept."""
    if not 1 <= R <= 3:
        raise ValueError("easy presets support one to three concepts")
    if K < 6:
        raise ValueError("need at least six slices for the drift switch window")
    rng = np.random.default_rng(seed)
    s = word_set_size or _auto_set_size(J, R, 2 * R)
    if 2 * R * s > J:
        raise ValueError(f"word sets of size {s} do not fit {R} concepts in J={J}")
    a = author_set_size or max(1, I // 3)
    pool = rng.permutation(J)
    kinds = [str(k) for k in rng.permutation(["sudden", "gradual", "reoccurring"])][:R]
    drifts = []
    cursor = 0
    for r in range(R):
        set1 = tuple(int(w) for w in pool[cursor:cursor + s])
        set2 = tuple(int(w) for w in pool[cursor + s:cursor + 2 * s])
        cursor += 2 * s
        kind = kinds[r]
        t0 = int(rng.integers(2, K - 2, endpoint=True)) if kind in ("sudden", "gradual") else None
        tp = int(rng.integers(2, K - 2, endpoint=True)) if kind == "reoccurring" else None
        drifts.append(DriftSpec(kind=kind, word_sets=(set1, set2), t0=t0, tp=tp))
    strengths = _draw_strengths(rng, R, K)
    return SyntheticConfig(I=I, J=J, K=K, R=R, drifts=tuple(drifts),
                           strengths=tuple(strengths), author_set_size=a,
                           eta=eta, seed=seed)


def almostzero_preset(seed: int, n_low_concepts: int = 1, *, eta: float = 0.25,
                      **kwargs) -> SyntheticConfig:
    """Easy structure, but some concepts nearly vanish for a few slices."""
    if n_low_concepts not in (1, 2):
        raise ValueError("n_low_concepts must be 1 or 2")
    cfg = easy_preset(seed, eta=eta, **kwargs)
    if cfg.K < 6:
        raise ValueError("need at least six slices for a low window")
    rng = np.random.default_rng([seed, 3])
    low_idx = rng.choice(cfg.R, size=n_low_concepts, replace=False)
    strengths = list(cfg.strengths)
    for r in sorted(int(i) for i in low_idx):
        length = int(rng.integers(4, min(6, cfg.K), endpoint=True))
        start = int(rng.integers(0, cfg.K - length, endpoint=True))
        strengths[r] = replace(strengths[r], low_window=(start, length),
                               low_level=0.01)
    return replace(cfg, strengths=tuple(strengths))


def _overlap_drifts(rng, J: int, R: int, s: int, fraction: float,
                    p_new: float, steepness: float) -> tuple[DriftSpec, ...]:
    m = int(round(fraction * s))
    if m + R * s > J:
        raise ValueError(
            f"{R} concepts of {s} words plus {m} shared do not fit in J={J}")
    pool = rng.permutation(J)
    shared = tuple(int(w) for w in pool[:m])
    cursor = m
    drifts = []
    for _ in range(R):
        private = tuple(int(w) for w in pool[cursor:cursor + s - m])
        cursor += s - m
        candidates = tuple(int(w) for w in pool[cursor:cursor + m])
        cursor += m
        drifts.append(DriftSpec(
            kind="incremental",
            word_sets=(shared + private, candidates),
            p_new=p_new,
            steepness=steepness,
            replaces=shared,
        ))
    return tuple(drifts)


def make_overlapping(config: SyntheticConfig, overlap_fraction: float, *,
                     p_new: float = 0.3, steepness: float = 1.0) -> SyntheticConfig:
    """Rebuild a config's drifts so every concept starts with a shared word
    block and incrementally swaps it for fresh private words; ending sets are
    disjoint by the final slice."""
    if not 0 <= overlap_fraction < 1:
        raise ValueError("overlap_fraction must lie in [0, 1)")
    s = len(config.drifts[0].word_sets[0])
    rng = np.random.default_rng([config.seed, 2])
    drifts = _overlap_drifts(rng, config.J, config.R, s, overlap_fraction,
                             p_new, steepness)
    return replace(config, drifts=drifts, overlap_fraction=float(overlap_fraction))


def overlap_preset(seed: int, fraction: float, *, I: int = 60, J: int = 40,
                   K: int = 15, R: int = 3, eta: float = 0.5,
                   word_set_size: int | None = None,
                   author_set_size: int | None = None, p_new: float = 0.3,
                   steepness: float = 1.0) -> SyntheticConfig:
    """Concepts that share an initial block of words (``fraction`` of each
    concept's set) and drift apart incrementally."""
    if not 0 <= fraction < 1:
        raise ValueError("fraction must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    s = word_set_size or _auto_set_size(J, R, R + fraction)
    a = author_set_size or max(1, I // 3)
    strengths = _draw_strengths(rng, R, K)
    drifts = _overlap_drifts(np.random.default_rng([seed, 2]), J, R, s,
                             fraction, p_new, steepness)
    return SyntheticConfig(I=I, J=J, K=K, R=R, drifts=drifts,
                           strengths=tuple(strengths), author_set_size=a,
                           eta=eta, overlap_fraction=float(fraction), seed=seed)


def config_to_dict(config: SyntheticConfig) -> dict:
    """JSON-ready mirror of a config; inverse of :func:`config_from_dict`."""
    return {
        "I": config.I,
        "J": config.J,
        "K": config.K,
        "R": config.R,
        "author_set_size": config.author_set_size,
        "eta": config.eta,
        "overlap_fraction": config.overlap_fraction,
        "seed": config.seed,
        "drifts": [
            {
                "kind": d.kind,
                "word_sets": [list(d.word_sets[0]), list(d.word_sets[1])],
                "t0": d.t0,
                "tp": d.tp,
                "p_new": d.p_new,
                "steepness": d.steepness,
                "replaces": list(d.replaces),
            }
            for d in config.drifts
        ],
        "strengths": [
            {
                "kind": p.kind,
                "base": p.base,
                "amp": p.amp,
                "period": p.period,
                "phase": p.phase,
                "low_window": list(p.low_window) if p.low_window else None,
                "low_level": p.low_level,
            }
            for p in config.strengths
        ],
    }


def config_from_dict(d: dict) -> SyntheticConfig:
    drifts = tuple(
        DriftSpec(
            kind=item["kind"],
            word_sets=(tuple(item["word_sets"][0]), tuple(item["word_sets"][1])),
            t0=item.get("t0"),
            tp=item.get("tp"),
            p_new=item.get("p_new"),
            steepness=item.get("steepness"),
            replaces=tuple(item.get("replaces") or ()),
        )
        for item in d["drifts"]
    )
    strengths = tuple(
        StrengthProfile(
            kind=item["kind"],
            base=item["base"],
            amp=item["amp"],
            period=item.get("period"),
            phase=item.get("phase", 0.0),
            low_window=tuple(item["low_window"]) if item.get("low_window") else None,
            low_level=item.get("low_level", 0.01),
        )
        for item in d["strengths"]
    )
    return SyntheticConfig(
        I=d["I"], J=d["J"], K=d["K"], R=d["R"], drifts=drifts,
        strengths=strengths, author_set_size=d["author_set_size"],
        eta=d.get("eta", 0.0), overlap_fraction=d.get("overlap_fraction", 0.0),
        seed=d.get("seed", 0),
    )
