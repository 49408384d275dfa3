"""Event selection: a dynamic program links detected onsets into the best
S1/S2 chain, non-alternating stretches are repaired by inserting the missing
sound, and the heart rate is read off the S1 cycle.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .onset import OnsetEnvelope, OnsetSequence, backtrack_to_minimum

S1 = "S1"
S2 = "S2"


class HeartRateUndefinedError(ValueError):
    """Too few labeled onsets to define a rate."""


@dataclass(frozen=True)
class DpConfig:
    """Gap thresholds (seconds) and scoring weight for the onset DP.

    tau1 is the expected S1->S2 (systole) gap and tau2 the S2->S1 (diastole)
    gap at resting heart rates. alpha trades envelope strength against gap
    penalties; None resolves to 0.8 * median envelope strength so the balance
    does not depend on recording gain. max_gap bounds the backward search.
    """

    tau1: float = 0.30
    tau2: float = 0.50
    alpha: float | None = None
    max_gap: float = 1.6

    def __post_init__(self):
        if self.tau1 <= 0 or self.tau2 <= 0:
            raise ValueError("tau1 and tau2 must be positive")
        if self.tau1 + self.tau2 >= self.max_gap:
            raise ValueError("need tau1 + tau2 < max_gap")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive")


@dataclass(frozen=True)
class LabeledOnset:
    time: float  # seconds
    env_strength: float
    label: str
    dp_value: float
    parent: int | None
    inserted: bool = False


@dataclass(frozen=True)
class LabeledSequence:
    onsets: list[LabeledOnset] = field(default_factory=list)
    config: DpConfig = DpConfig()

    def __len__(self) -> int:
        return len(self.onsets)

    def labels(self) -> list[str]:
        return [o.label for o in self.onsets]

    def times(self, label: str | None = None) -> np.ndarray:
        return np.array(
            [o.time for o in self.onsets if label is None or o.label == label]
        )


def penalty(dt: float, tau: float, alpha: float) -> float:
    """Gap penalty -alpha * ln(dt/tau)^2: zero at dt == tau, sharply negative
    for gaps shorter than tau, gently negative for longer ones."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if tau <= 0 or alpha <= 0:
        raise ValueError("tau and alpha must be positive")
    return -alpha * math.log(dt / tau) ** 2


def resolve_alpha(cfg: DpConfig, strengths: np.ndarray) -> float:
    if cfg.alpha is not None:
        return cfg.alpha
    alpha = 0.8 * float(np.median(strengths)) if strengths.size else 0.0
    return alpha if alpha > 0 else 1e-12


def label_onsets(seq: OnsetSequence, cfg: DpConfig = DpConfig()) -> LabeledSequence:
    """Run the chain DP over onsets and read back the best parent chain.

    Each onset's score starts at its envelope strength; linking to an earlier
    onset within max_gap adds the better of the two gap penalties, and the
    winning branch fixes the state (tau1 branch means the previous onset was
    S1, so the current one is S2). The chain is recovered from the highest
    score among onsets within max_gap of the end; onsets off that chain are
    dropped. Labels are not yet forced to alternate; see correct_sequence.
    """
    n = len(seq)
    if n == 0:
        return LabeledSequence(onsets=[], config=cfg)
    times = seq.times.astype(np.float64) / seq.source_rate
    env = seq.strengths.astype(np.float64)
    alpha = resolve_alpha(cfg, env)

    dp = env.copy()
    parent: list[int | None] = [None] * n
    state = [S1] * n
    for i in range(1, n):
        for j in range(i - 1, -1, -1):
            dt = times[i] - times[j]
            if dt >= cfg.max_gap:
                break
            f1 = penalty(dt, cfg.tau1, alpha)
            f2 = penalty(dt, cfg.tau2, alpha)
            if f1 >= f2:
                best, label = f1, S2
            else:
                best, label = f2, S1
            cand = env[i] + (dp[j] + best)
            if cand > dp[i]:
                dp[i] = cand
                parent[i] = j
                state[i] = label

    eligible = np.flatnonzero(times > times[-1] - cfg.max_gap)
    terminal = int(eligible[np.argmax(dp[eligible])])

    chain: list[int] = []
    k: int | None = terminal
    while k is not None:
        chain.append(k)
        k = parent[k]
    chain.reverse()

    onsets = [
        LabeledOnset(
            time=float(times[i]),
            env_strength=float(env[i]),
            label=state[i] if pos > 0 else S1,
            dp_value=float(dp[i]),
            parent=pos - 1 if pos > 0 else None,
        )
        for pos, i in enumerate(chain)
    ]
    return LabeledSequence(onsets=onsets, config=cfg)


def correct_sequence(seq: LabeledSequence) -> LabeledSequence:
    """Insert the missing sound between same-label neighbors.

    Between two S1s an S2 goes at t1 + tau1/(tau1+tau2) * (t2-t1); between two
    S2s an S1 goes at t1 + tau2/(tau1+tau2) * (t2-t1). One left-to-right pass;
    the result alternates strictly. Inserted onsets carry zero strength and
    no parent.
    """
    tau1, tau2 = seq.config.tau1, seq.config.tau2
    out: list[LabeledOnset] = []
    for onset in seq.onsets:
        if out and out[-1].label == onset.label:
            t1, t2 = out[-1].time, onset.time
            if onset.label == S1:
                t_new, label = t1 + tau1 / (tau1 + tau2) * (t2 - t1), S2
            else:
                t_new, label = t1 + tau2 / (tau1 + tau2) * (t2 - t1), S1
            out.append(
                LabeledOnset(
                    time=t_new,
                    env_strength=0.0,
                    label=label,
                    dp_value=0.0,
                    parent=None,
                    inserted=True,
                )
            )
        out.append(onset)
    return LabeledSequence(onsets=out, config=seq.config)


def backtrack_onsets(seq: LabeledSequence, env: OnsetEnvelope) -> LabeledSequence:
    """Move every detected onset from its peak to the preceding envelope
    minimum, i.e. the sound's start. Inserted onsets stay put; ordering is
    preserved by clamping to one frame past the previous onset."""
    frame_s = env.frame_hop / env.sample_rate
    n_frames = env.strength.size
    out: list[LabeledOnset] = []
    for onset in seq.onsets:
        t = onset.time
        if not onset.inserted:
            frame = min(n_frames - 1, max(0, int(round(t * env.sample_rate / env.frame_hop))))
            t = backtrack_to_minimum(env, frame) * frame_s
        if out and t <= out[-1].time:
            t = out[-1].time + frame_s
        out.append(replace(onset, time=t))
    return LabeledSequence(onsets=out, config=seq.config)


def heart_rate(seq: LabeledSequence, cycle: str = "s1s1") -> float:
    """Beats per minute from the labeled sequence.

    cycle="s1s1" averages successive S1->S1 intervals (one full cardiac
    cycle). cycle="s1s2" averages S1->S2 pair durations instead; it is kept
    for comparison but overestimates the rate whenever systole is shorter
    than the full cycle.
    """
    if cycle == "s1s1":
        s1_times = [o.time for o in seq.onsets if o.label == S1]
        if len(s1_times) < 2:
            raise HeartRateUndefinedError("need at least 2 S1 onsets")
        avg = float(np.mean(np.diff(s1_times)))
    elif cycle == "s1s2":
        durations = [
            nxt.time - cur.time
            for cur, nxt in zip(seq.onsets, seq.onsets[1:])
            if cur.label == S1 and nxt.label == S2
        ]
        if not durations:
            raise HeartRateUndefinedError("no S1->S2 pairs present")
        avg = float(np.mean(durations))
    else:
        raise ValueError(f"unknown cycle definition {cycle!r}")
    return 60.0 / avg
