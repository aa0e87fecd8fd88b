"""FedAvg, Nesterov FedAvg and FedMaSS simulation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import rng as rngmod
from .errors import DivergenceError, InvalidInput
from .objectives import Objective
from .schedules import Schedule

SGD = "sgd"
NESTEROV = "nesterov"
MASS = "mass"
RULES = (SGD, NESTEROV, MASS)

FULL = "full"
WITH_REPLACEMENT = "with_replacement"  # scheme I
WITHOUT_REPLACEMENT = "without_replacement"  # scheme II
SCHEMES = (FULL, WITH_REPLACEMENT, WITHOUT_REPLACEMENT)

BLOWUP = 1e12
MASS_BROADCASTS = ("local", "three_sequence")
CSV_HEADER = ("t", "loss", "drift", "grad_norm", "comm_round")


@dataclass(frozen=True)
class FederationConfig:
    """One simulation setup.

    ``batch_size=None`` means every device uses its whole shard each step
    (deterministic local gradient descent).  ``eval_stride=None`` picks 1 for
    datasets of at most 10^4 samples and 10 otherwise.  ``mass_grad_at``
    selects where FedMaSS evaluates its stochastic gradient: ``"u"`` (the
    extrapolated point, default) or ``"w"``.

    ``mass_broadcast`` picks how FedMaSS devices rebuild ``u`` after an
    average.  ``"local"`` (default) applies the two-sequence update to the
    broadcast ``w`` and the device's own previous ``w``.  ``"three_sequence"``
    keeps the auxiliary ``v`` of the equivalent three-sequence form private,
    which amounts to ``u <- u + (1 + gamma)/2 (w_bar - w)``.  The two agree
    when ``N == 1``; with ``E > 1`` and heavy momentum only the second is
    stable in practice.
    """

    N: int
    E: int
    T: int
    schedule: Schedule
    K: int | None = None
    batch_size: int | None = 4
    rule: str = SGD
    sampling: str = FULL
    master_seed: int = 0
    eval_stride: int | None = None
    mass_grad_at: str = "u"
    mass_broadcast: str = "local"
    store_iterates: bool = False

    def __post_init__(self) -> None:
        if self.K is None:
            object.__setattr__(self, "K", self.N)
        if self.rule not in RULES:
            raise InvalidInput(f"unknown rule {self.rule!r}")
        if self.sampling not in SCHEMES:
            raise InvalidInput(f"unknown sampling scheme {self.sampling!r}")
        if self.N < 1 or self.E < 1 or self.T < 1:
            raise InvalidInput("N, E and T must be positive")
        if not 1 <= self.K <= self.N:
            raise InvalidInput(f"need 1 <= K <= N, got K={self.K}, N={self.N}")
        if self.sampling == FULL and self.K != self.N:
            raise InvalidInput("full participation requires K == N")
        if self.batch_size is not None and self.batch_size < 1:
            raise InvalidInput("batch_size must be positive")
        if self.eval_stride is not None and self.eval_stride < 1:
            raise InvalidInput("eval_stride must be positive")
        if self.mass_grad_at not in ("u", "w"):
            raise InvalidInput("mass_grad_at must be 'u' or 'w'")
        if self.mass_broadcast not in MASS_BROADCASTS:
            raise InvalidInput(f"mass_broadcast must be one of {MASS_BROADCASTS}")

    def with_(self, **changes) -> "FederationConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class DeviceState:
    """Local iterates.  Arrays may carry a leading device axis.

    ``v_prev`` is used by Nesterov only, ``u`` and ``w_prev`` by FedMaSS only.
    """

    w: np.ndarray
    v_prev: np.ndarray | None = None
    u: np.ndarray | None = None
    w_prev: np.ndarray | None = None

    @classmethod
    def initial(cls, w0: np.ndarray, rule: str) -> "DeviceState":
        if rule == NESTEROV:
            return cls(w0.copy(), v_prev=w0.copy())
        if rule == MASS:
            return cls(w0.copy(), u=w0.copy(), w_prev=w0.copy())
        return cls(w0.copy())


def local_step_sgd(state: DeviceState, g: np.ndarray, alpha: float) -> DeviceState:
    return DeviceState(state.w - alpha * g)


def local_step_nesterov(state: DeviceState, g: np.ndarray, alpha: float, beta: float) -> DeviceState:
    v = state.w - alpha * g
    return DeviceState(v + beta * (v - state.v_prev), v_prev=v)


def local_step_mass(
    state: DeviceState, g_at_u: np.ndarray, eta1: float, eta2: float, gamma: float
) -> DeviceState:
    w = state.u - eta1 * g_at_u
    return DeviceState(w, u=_mass_extrapolate(w, state.w, g_at_u, eta2, gamma), w_prev=state.w)


def _mass_extrapolate(w_new, w_old, g, eta2, gamma):
    return w_new + gamma * (w_new - w_old) + eta2 * g


# ---------------------------------------------------------------- sampling


def sample_devices(scheme: str, K: int, weights, rng: np.random.Generator) -> np.ndarray:
    """Participants of one round, sorted by device index.

    Scheme I (``with_replacement``) returns a multiset of ``K`` i.i.d. draws
    with probabilities ``weights``; scheme II (``without_replacement``) a
    uniformly random ``K``-subset.
    """
    p = np.asarray(weights, dtype=np.float64)
    N = p.size
    if scheme == WITH_REPLACEMENT:
        if K < 1:
            raise InvalidInput("K must be positive")
        return np.sort(rng.choice(N, size=K, replace=True, p=p))
    if scheme == WITHOUT_REPLACEMENT:
        if not 1 <= K <= N:
            raise InvalidInput(f"cannot draw {K} of {N} devices without replacement")
        return np.sort(rng.choice(N, size=K, replace=False))
    raise InvalidInput(f"sample_devices needs a partial scheme, got {scheme!r}")


def aggregate(scheme: str, participants: Sequence[int], iterates: np.ndarray, weights) -> np.ndarray:
    """Server average of device iterates (row ``k`` of ``iterates`` belongs to device ``k``).

    Full: ``sum_k p_k v_k``.  Scheme I: plain mean over the multiset.
    Scheme II: ``(N/K) sum_{k in S} p_k v_k``.  Each is unbiased for the
    full average.  Sums run in participant order.
    """
    p = np.asarray(weights, dtype=np.float64)
    participants = np.asarray(participants, dtype=np.int64)
    if participants.size == 0:
        raise InvalidInput("no participants")
    N, K = p.size, participants.size
    acc = np.zeros(iterates.shape[1:])
    if scheme == FULL:
        for k in range(N):
            acc += p[k] * iterates[k]
        return acc
    if scheme == WITH_REPLACEMENT:
        for k in participants:
            acc += iterates[k]
        return acc / K
    if scheme == WITHOUT_REPLACEMENT:
        for k in participants:
            acc += p[k] * iterates[k]
        return acc * (N / K)
    raise InvalidInput(f"unknown scheme {scheme!r}")


def weighted_average(iterates: np.ndarray, weights) -> np.ndarray:
    return aggregate(FULL, np.arange(len(weights)), iterates, weights)


def drift(states: np.ndarray, weights) -> float:
    """``sum_k p_k ||w_k - w_bar||^2`` with ``w_bar`` the weighted average."""
    p = np.asarray(weights, dtype=np.float64)
    if np.all(states == states[0]):
        return 0.0  # the weighted mean of equal rows can be off by an ulp
    wbar = weighted_average(states, p)
    diff = states - wbar
    return float(p @ np.einsum("ij,ij->i", diff, diff))


# ---------------------------------------------------------------- trajectory


@dataclass
class Trajectory:
    """Recorded evaluations of the virtual average ``w_bar_t``.

    ``comm_round`` counts completed communication rounds at ``t``.
    ``step_size`` is the local step size in force at ``t``.  ``comm_drift``
    holds the drift of the pre-aggregation iterates at each round, and
    ``iterates`` (when requested) maps ``t`` to device-averaged state arrays.
    """

    t: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    drift: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    comm_round: list[int] = field(default_factory=list)
    step_size: list[float] = field(default_factory=list)
    comm_drift: list[float] = field(default_factory=list)
    iterates: dict[int, dict[str, np.ndarray]] = field(default_factory=dict)
    final_w: np.ndarray | None = None
    stopped_early: bool = False

    def __len__(self) -> int:
        return len(self.t)

    def append(self, t, loss, drift_, grad_norm, comm_round, step_size) -> None:
        if self.t and t <= self.t[-1]:
            raise ValueError("trajectory times must increase")
        self.t.append(int(t))
        self.loss.append(float(loss))
        self.drift.append(float(drift_))
        self.grad_norm.append(float(grad_norm))
        self.comm_round.append(int(comm_round))
        self.step_size.append(float(step_size))

    def rows(self):
        return zip(self.t, self.loss, self.drift, self.grad_norm, self.comm_round)

    def to_csv(self, dest=None) -> str | None:
        """Write ``t,loss,drift,grad_norm,comm_round``; return the text when ``dest`` is None."""
        buf = io.StringIO() if dest is None else dest
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for t, loss, dr, gn, cr in self.rows():
            w.writerow([t, repr(loss), repr(dr), repr(gn), cr])
        return buf.getvalue() if dest is None else None

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != CSV_HEADER:
            raise InvalidInput("not a trajectory CSV")
        out = cls()
        for r in rows[1:]:
            out.append(int(r[0]), float(r[1]), float(r[2]), float(r[3]), int(r[4]), math.nan)
        return out


# ---------------------------------------------------------------- run


def default_eval_stride(n: int) -> int:
    return 1 if n <= 10_000 else 10


def run(
    config: FederationConfig,
    objective: Objective,
    w0: np.ndarray | None = None,
    target_loss: float | None = None,
) -> Trajectory:
    """Simulate ``config.T`` local iterations on ``objective``.

    Every device takes one local step per iteration; after iterations
    ``E, 2E, ...`` the server samples participants, aggregates and broadcasts.
    The virtual average is recorded at ``t = 0``, every ``eval_stride``
    iterations, at every communication round and at ``T``.  With
    ``target_loss`` the run stops at the first record at or below it.
    """
    cfg = config
    part = objective.partition
    if part.N != cfg.N:
        raise InvalidInput(f"objective has {part.N} devices, config has N={cfg.N}")
    p = part.weights
    N, d = cfg.N, objective.d
    w0 = np.zeros(d) if w0 is None else np.asarray(w0, dtype=np.float64)
    if w0.shape != (d,):
        raise InvalidInput(f"w0 must have shape ({d},)")
    stride = cfg.eval_stride or default_eval_stride(objective.dataset.n)
    sizes = part.sizes
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    flat_shards = np.concatenate(part.shards)
    full_batch = cfg.batch_size is None
    full_idx = (
        np.stack(part.shards) if full_batch and np.all(sizes == sizes[0]) else list(part.shards)
    )

    st = DeviceState.initial(np.tile(w0, (N, 1)), cfg.rule)
    traj = Trajectory()
    sp0 = cfg.schedule.at(0)

    def record(t: int, wbar: np.ndarray, step: float, rounds: int) -> bool:
        loss = objective.value(wbar)
        if not math.isfinite(loss) or loss > BLOWUP:
            raise DivergenceError(t, step, loss)
        g = objective.grad(wbar)
        traj.append(t, loss, drift(st.w, p), math.sqrt(g @ g), rounds, step)
        return target_loss is not None and loss <= target_loss

    def store(t: int, wbar: np.ndarray) -> None:
        entry = {"w": wbar.copy()}
        for name in ("v_prev", "u"):
            arr = getattr(st, name)
            if arr is not None:
                entry[name] = weighted_average(arr, p)
        traj.iterates[t] = entry

    if cfg.store_iterates:
        store(0, w0)
    if record(0, w0, sp0.descent, 0):
        traj.stopped_early = True
        traj.final_w = w0.copy()
        return traj

    rounds = 0
    wbar = w0
    grad_at_u = cfg.rule == MASS and cfg.mass_grad_at == "u"
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(cfg.T):
            sp = cfg.schedule.at(t)
            if full_batch:
                idx = full_idx
            else:
                local = rngmod.batch_offsets(cfg.master_seed, t, sizes, cfg.batch_size)
                idx = flat_shards[offsets[:, None] + local]
            G = objective.batch_grads(st.u if grad_at_u else st.w, idx)

            if cfg.rule == SGD:
                st = local_step_sgd(st, G, sp.alpha)
            elif cfg.rule == NESTEROV:
                st = local_step_nesterov(st, G, sp.alpha, sp.beta)
            else:
                st = local_step_mass(st, G, sp.descent, sp.eta2, sp.mass_gamma)

            comm = (t + 1) % cfg.E == 0
            if comm:
                if cfg.sampling == FULL:
                    S = np.arange(N)
                else:
                    gen = rngmod.stream(cfg.master_seed, rngmod.PARTICIPANTS, rounds)
                    S = sample_devices(cfg.sampling, cfg.K, p, gen)
                traj.comm_drift.append(drift(st.w, p))
                wbar = aggregate(cfg.sampling, S, st.w, p)
                Wb = np.tile(wbar, (N, 1))
                if cfg.rule == MASS and cfg.mass_broadcast == "local":
                    # devices rebuild u from the broadcast w and their own previous w
                    u = _mass_extrapolate(Wb, st.w_prev, G, sp.eta2, sp.mass_gamma)
                    st = replace(st, w=Wb, u=u)
                elif cfg.rule == MASS:
                    # private v, so u moves by the w correction scaled by 1/(1 + alpha)
                    u = st.u + 0.5 * (1.0 + sp.mass_gamma) * (Wb - st.w)
                    st = replace(st, w=Wb, u=u)
                else:
                    # Nesterov keeps each device's private v_prev
                    st = replace(st, w=Wb)
                rounds += 1

            t1 = t + 1
            if comm or t1 % stride == 0 or t1 == cfg.T:
                if not comm:
                    wbar = weighted_average(st.w, p)
                if cfg.store_iterates and comm:
                    store(t1, wbar)
                nxt = cfg.schedule.at(t1).descent if t1 < cfg.T else sp.descent
                if record(t1, wbar, nxt, rounds):
                    traj.stopped_early = True
                    break
    traj.final_w = wbar.copy()
    return traj
