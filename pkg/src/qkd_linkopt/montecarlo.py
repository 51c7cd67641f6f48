"""Gate-by-gate Monte Carlo simulation of the two-detector receiver.

Each gate of a frame draws an intensity and a pair of phases, gives each
detector the click probability 1 - (1 - p_dc) exp(-gamma_ijw mu_k),
raises it by the afterpulsing left over from earlier clicks in the same
frame, and samples the click. A click blinds that detector for the next
N_d = dt F gates and adds afterpulsing

    p(m') <- 1 - (1 - p(m')) (1 - (Q / tau) exp(-(m' - m) / (F tau)))

to every later live gate m'. Double clicks are dropped at sifting.

Afterpulsing from all earlier clicks compounds multiplicatively. The
product over clicks is carried as a log-survival built from the power
series log(1 - a x) = -sum_r (a x)^r / r; each power decays geometrically
gate to gate, so it is updated in O(1) per gate and truncated once the
next term is below double precision.

Frames are independent trials with their own random stream derived from
the master seed, so the result does not depend on how frames are batched.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvariantError
from .params import gate_count
from .scenario import Scenario

__all__ = ["SimConfig", "SimResult", "simulate", "relative_deviation", "frame_generator"]

_CHUNK = 512
_SERIES_EPS = 1e-18


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo settings for one link configuration.

    Parameters
    ----------
    scenario : Scenario
        Link configuration; every field must be scalar.
    frames : int
        Number of independent frames N_fr.
    seed : int
        Master seed.
    stream : tuple of int
        Extra spawn key mixed into every frame's stream; a sweep gives each
        point its own key so points are statistically independent.
    photon_tagging : bool
        Draw the photon number of each pulse explicitly and report
        photon-number-resolved yields. The click statistics are the same.
    max_tagged_photons : int
        Largest photon number with a reported yield.
    allow_experimental : bool
        Needed for SARG04 sifting, which is not validated against the model.
    record_events : bool
        Keep the click positions of every frame (memory grows with frames).
    """

    scenario: Scenario
    frames: int = 10_000
    seed: int = 0
    stream: tuple = ()
    photon_tagging: bool = False
    max_tagged_photons: int = 3
    allow_experimental: bool = False
    record_events: bool = False

    def __post_init__(self):
        if self.frames < 1:
            raise InvariantError("frames must be >= 1")
        sc = self.scenario
        values = [sc.timing.frequency, sc.timing.frame_duration, sc.link.length, sc.mu1]
        for d in sc.detectors:
            values += [d.efficiency, d.dark_count_prob, d.afterpulse_amplitude, d.afterpulse_decay, d.dead_time]
        if any(np.ndim(v) for v in values):
            raise InvariantError("Monte Carlo needs a scalar scenario (no swept fields)")
        if self.gates_per_frame < 1:
            raise InvariantError("frame holds no gates (t_S F < 1)")
        if sc.protocol.family == "SARG04" and not self.allow_experimental:
            raise InvariantError("SARG04 sifting in the simulator is experimental; pass allow_experimental=True")
        for d in sc.detectors:
            if float(d.decay_rate * d.afterpulse_amplitude) >= 1:
                raise InvariantError("afterpulse probability Q / tau must be < 1")

    @property
    def gates_per_frame(self) -> int:
        """N_S = t_S F."""
        return int(gate_count(self.scenario.timing, 0.0))

    def dead_gates(self, w: int) -> int:
        """N_d = dt F for detector ``w``."""
        t = self.scenario.timing
        return int(np.floor(float(t.frequency) * float(self.scenario.detectors[w].dead_time) + 1e-7))


@dataclass(frozen=True)
class SimResult:
    """Empirical rates from a simulation run.

    ``sifted_rate`` and ``qber`` estimate the same quantities as the
    analytic model: for each detector and outcome class the frequency of
    single (non-double) clicks among signal-state gates of that class,
    summed over the key class and the error class.

    Attributes
    ----------
    click_prob : ndarray, shape (2,)
        Fraction of all gates in which each detector clicked.
    class_click_prob : ndarray, shape (2, 3)
        Click frequency per detector in signal gates of class 1, 2, 3
        (double clicks included).
    single_prob : ndarray, shape (2, 3)
        As ``class_click_prob`` with double clicks removed.
    gate_counts : ndarray, shape (2, N_S)
        Clicks per gate position, summed over frames.
    yields, yields_se : ndarray or None
        Photon-number-resolved yields Y_n, n = 0..max_tagged_photons.
    events : list or None
        Per frame, a pair of arrays with the click gates of each detector.
    """

    frames: int
    sifted_rate: float
    sifted_rate_se: float
    qber: float
    qber_se: float
    qber_defined: bool
    click_prob: np.ndarray
    click_prob_se: np.ndarray
    class_click_prob: np.ndarray
    single_prob: np.ndarray
    gate_counts: np.ndarray
    yields: np.ndarray = None
    yields_se: np.ndarray = None
    events: list = None


def frame_generator(seed: int, stream: tuple, frame: int) -> np.random.Generator:
    """Independent PCG64 stream of one frame."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(stream) + (frame,))
    return np.random.Generator(np.random.PCG64(ss))


def _pick(cum, u):
    return np.minimum(np.searchsorted(cum, u, side="right"), cum.size - 1)


class _Setup:
    """Per-configuration constants shared by all chunks."""

    def __init__(self, cfg: SimConfig):
        sc = cfg.scenario
        self.n_s = cfg.gates_per_frame
        self.n_d = np.array([cfg.dead_gates(w) for w in (0, 1)])
        src = sc.resolved_source()
        self.mus = np.array([float(m) for m in src.mean_photon_numbers])
        # One draw picks the joint state (k, i, j) with probability eps_k theta_i theta_j.
        joint = np.multiply.outer(np.asarray(src.probabilities), sc.phases.weights())
        self.state_shape = joint.shape
        self.cum_state = np.cumsum(joint.ravel())
        link = sc.link
        # gamma[w, i, j]
        self.gamma = np.stack(
            [float(link.reduced_efficiency(d.efficiency)) * sc.phases.interference(w) for w, d in enumerate(sc.detectors)]
        )
        self.pdc = np.array([float(d.dark_count_prob) for d in sc.detectors])
        self.classes = np.stack([sc.phases.nominal_classes(w) for w in (0, 1)])
        self.q = sc.protocol.q
        self.tagging = cfg.photon_tagging
        self.n_tag = cfg.max_tagged_photons

        t_f = float(sc.timing.gate_period)
        a = np.array([float(d.decay_rate * d.afterpulse_amplitude) for d in sc.detectors])
        rho = np.array([math.exp(-t_f * float(d.decay_rate)) for d in sc.detectors])
        # Bound on the afterpulse memory sum_e rho^(m-e) given the dead-time spacing.
        a_max = 1.0 / -np.expm1((self.n_d + 1) * np.log(rho))
        order = 1
        while order < 64 and np.any(a ** (order + 1) * a_max / ((order + 1) * (1 - a)) > _SERIES_EPS):
            order += 1
        r = np.arange(1, order + 1)[:, None]
        self.decay = (rho[None, :] ** r)[:, :, None]  # (R, 2, 1)
        self.coef = (a[None, :] ** r / r)[:, :, None]
        self.any_afterpulse = bool(np.any(a > 0))


def _simulate_chunk(setup: _Setup, rngs):
    n_s, b = setup.n_s, len(rngs)
    k = np.empty((b, n_s), dtype=np.int64)
    i = np.empty_like(k)
    j = np.empty_like(k)
    u = np.empty((n_s, 2, b))
    photons = np.empty((b, n_s), dtype=np.int64) if setup.tagging else None
    for f, rng in enumerate(rngs):
        draw = rng.random((3, n_s))
        k[f], i[f], j[f] = np.unravel_index(_pick(setup.cum_state, draw[0]), setup.state_shape)
        u[:, 0, f] = draw[1]
        u[:, 1, f] = draw[2]
        if setup.tagging:
            photons[f] = rng.poisson(setup.mus[k[f]])

    gamma = setup.gamma[:, i, j]  # (2, b, n_s)
    if setup.tagging:
        no_photo = (1.0 - gamma) ** photons[None]
    else:
        no_photo = np.exp(-gamma * setup.mus[k][None])
    # Probability that neither light nor a dark count fires, laid out (n_s, 2, b).
    quiet = np.ascontiguousarray(((1.0 - setup.pdc)[:, None, None] * no_photo).transpose(2, 0, 1))

    clicks = np.zeros((n_s, 2, b), dtype=bool)
    next_live = np.zeros((2, b), dtype=np.int64)
    memory = np.zeros((setup.decay.shape[0], 2, b))
    hold = (setup.n_d + 1)[:, None]
    for m in range(n_s):
        if setup.any_afterpulse:
            memory *= setup.decay
            survive = quiet[m] * np.exp(-np.einsum("rwb,rwb->wb", setup.coef, memory))
        else:
            survive = quiet[m]
        fire = (u[m] < 1.0 - survive) & (next_live <= m)
        if fire.any():
            clicks[m] = fire
            memory += fire
            next_live = np.where(fire, m + hold, next_live)
    return clicks.transpose(1, 2, 0), k, i, j, photons  # clicks (2, b, n_s)


def _tally(setup: _Setup, clicks, k, i, j, photons):
    """Integer counts per frame for one chunk."""
    b = k.shape[0]
    other = clicks[::-1]
    single = clicks & ~other
    signal = k == 0
    n_cls = np.zeros((b, 2, 3), dtype=np.int64)
    n_click = np.zeros((b, 2, 3), dtype=np.int64)
    n_single = np.zeros((b, 2, 3), dtype=np.int64)
    n_tag = setup.n_tag + 1
    t_cls = np.zeros((b, 2, 3, n_tag), dtype=np.int64) if setup.tagging else None
    t_single = np.zeros_like(t_cls) if setup.tagging else None
    for w in (0, 1):
        cls = setup.classes[w][i, j]
        for c in (1, 2, 3):
            mask = signal & (cls == c)
            n_cls[:, w, c - 1] = mask.sum(axis=1)
            n_click[:, w, c - 1] = (mask & clicks[w]).sum(axis=1)
            n_single[:, w, c - 1] = (mask & single[w]).sum(axis=1)
            if setup.tagging:
                for n in range(n_tag):
                    tm = mask & (photons == n)
                    t_cls[:, w, c - 1, n] = tm.sum(axis=1)
                    t_single[:, w, c - 1, n] = (tm & single[w]).sum(axis=1)
    return {
        "clicks": clicks.sum(axis=2).T,  # (b, 2)
        "gate_counts": clicks.sum(axis=1),  # (2, n_s)
        "n_cls": n_cls,
        "n_click": n_click,
        "n_single": n_single,
        "t_cls": t_cls,
        "t_single": t_single,
    }


def _ratio_se(num_f, den_f):
    """Standard error of sum(num) / sum(den) over frames (delta method)."""
    frames = num_f.shape[0]
    den = den_f.mean()
    if den == 0 or frames < 2:
        return math.nan
    ratio = num_f.mean() / den
    return float(np.std(num_f - ratio * den_f, ddof=1) / (math.sqrt(frames) * den))


def simulate(config: SimConfig) -> SimResult:
    """Run the simulation; deterministic for a given config and seed."""
    setup = _Setup(config)
    parts = []
    events = [] if config.record_events else None
    for start in range(0, config.frames, _CHUNK):
        idx = range(start, min(start + _CHUNK, config.frames))
        rngs = [frame_generator(config.seed, config.stream, f) for f in idx]
        clicks, k, i, j, photons = _simulate_chunk(setup, rngs)
        parts.append(_tally(setup, clicks, k, i, j, photons))
        if events is not None:
            events.extend((np.flatnonzero(clicks[0, f]), np.flatnonzero(clicks[1, f])) for f in range(len(rngs)))

    cat = {key: np.concatenate([p[key] for p in parts]) for key in ("clicks", "n_cls", "n_click", "n_single")}
    gate_counts = sum(p["gate_counts"] for p in parts)
    frames = config.frames
    n_s = setup.n_s

    totals_cls = cat["n_cls"].sum(axis=0).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        class_click = cat["n_click"].sum(axis=0) / totals_cls
        single_prob = cat["n_single"].sum(axis=0) / totals_cls

    # Per-frame contributions scaled by the mean class occupancy; their
    # mean is the pooled estimate and their spread gives the standard error.
    mean_cls = totals_cls / frames
    q = setup.q
    keep = [(w, c) for w in (0, 1) for c in sorted({q, 2}) if mean_cls[w, c - 1] > 0]
    errs = [(w, 2) for w in (0, 1) if mean_cls[w, 1] > 0]
    x_f = sum(cat["n_single"][:, w, c - 1] / mean_cls[w, c - 1] for w, c in keep)
    y_f = sum(cat["n_single"][:, w, c - 1] / mean_cls[w, c - 1] for w, c in errs)
    x_f = np.asarray(x_f, dtype=float) * np.ones(frames)
    y_f = np.asarray(y_f, dtype=float) * np.ones(frames)
    rate = float(sum(single_prob[w, c - 1] for w, c in keep))
    rate_se = float(np.std(x_f, ddof=1) / math.sqrt(frames)) if frames > 1 else math.nan
    err_rate = float(sum(single_prob[w, c - 1] for w, c in errs))
    defined = rate > 0
    qber = err_rate / rate if defined else math.nan
    qber_se = _ratio_se(y_f, x_f) if defined else math.nan

    click_f = cat["clicks"] / n_s
    click_prob = click_f.mean(axis=0)
    click_se = click_f.std(axis=0, ddof=1) / math.sqrt(frames) if frames > 1 else np.full(2, math.nan)

    yields = yields_se = None
    if setup.tagging:
        t_cls = np.concatenate([p["t_cls"] for p in parts])
        t_single = np.concatenate([p["t_single"] for p in parts])
        yields = np.zeros(setup.n_tag + 1)
        yields_se = np.zeros(setup.n_tag + 1)
        for n in range(setup.n_tag + 1):
            num = np.zeros(frames)
            for w, c in keep:
                tot = t_cls[:, w, c - 1, n].sum()
                if tot == 0:
                    continue
                yields[n] += t_single[:, w, c - 1, n].sum() / tot
                num = num + t_single[:, w, c - 1, n] / (tot / frames)
            yields_se[n] = np.std(num, ddof=1) / math.sqrt(frames) if frames > 1 else math.nan

    return SimResult(
        frames=frames,
        sifted_rate=rate,
        sifted_rate_se=rate_se,
        qber=qber,
        qber_se=qber_se,
        qber_defined=defined,
        click_prob=click_prob,
        click_prob_se=click_se,
        class_click_prob=class_click,
        single_prob=single_prob,
        gate_counts=gate_counts,
        yields=yields,
        yields_se=yields_se,
        events=events,
    )


def relative_deviation(sim_values, model_values) -> float:
    """Root-mean-square relative deviation between simulated and modelled values.

    sigma_e = sqrt( sum_n ((X_sim - X_mod) / X_mod)^2 / (M - 1) )
    """
    sim = np.asarray(sim_values, dtype=float)
    mod = np.asarray(model_values, dtype=float)
    if sim.shape != mod.shape or sim.ndim != 1:
        raise DomainError("need two one-dimensional sequences of equal length")
    if sim.size < 2:
        raise DomainError("need at least two points")
    if np.any(mod == 0):
        raise DomainError("model values must be nonzero")
    rel = (sim - mod) / mod
    return math.sqrt(math.fsum(rel**2) / (sim.size - 1))
