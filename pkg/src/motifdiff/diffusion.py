"""Discrete diffusion kernel over motif-token matrices.

Transitions live in the family ``a*I + (1-a)*1 m'`` around data marginals,
with a cosine cumulative-retention schedule.  The family is closed under
products, so cumulative matrices have a closed form and all sampling paths
use the rank-one structure directly instead of materializing K x K matrices.
Bond categories diffuse on the upper triangle and are mirrored; attachment
attributes are not diffused and are filled from the denoiser at the final
step only.

Transition and posterior math is pure.  A reverse trajectory is sequential
in t; run multiple trajectories concurrently by giving each its own
generator (the CLI derives one per sample from the run seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .tokenizer import (
    NULL_BOND,
    FeatureLayout,
    GraphTokenMatrix,
    MotifGraph,
    defeaturize,
)

DIST_TOL = 1e-9
ROW_TOL = 1e-12


class OutOfRangeStepError(ValueError):
    pass


class ScheduleDegeneracyError(ValueError):
    pass


class EmptyCorpusError(ValueError):
    pass


class ZeroMassPosteriorError(ValueError):
    pass


class DenoiserContractViolationError(ValueError):
    pass


class ShapeMismatchError(ValueError):
    pass


class NonDistributionInputError(ValueError):
    pass


class NonDecodableFinalStateError(ValueError):
    """Raised with the partial trajectory attached as ``.trajectory``."""

    def __init__(self, message: str, trajectory: list):
        super().__init__(message)
        self.trajectory = trajectory


# ---------------------------------------------------------------------------
# Schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Schedule:
    """Cosine cumulative retention: cos(0.5*pi*(t/T + s)/(1 + s))^2.

    The endpoints are pinned exactly: alpha_bar(0) == 1 (an empty product of
    per-step transitions is the identity) and alpha_bar(T) == 0.
    """

    t_max: int
    s: float = 0.008

    def __post_init__(self) -> None:
        if self.t_max < 1:
            raise ValueError("schedule needs at least one step")
        if self.s < 0:
            raise ValueError("schedule offset must be >= 0")

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.t_max:
            raise OutOfRangeStepError(f"step {t} outside [0, {self.t_max}]")
        if t == 0:
            return 1.0
        if t == self.t_max:
            return 0.0
        return math.cos(0.5 * math.pi * (t / self.t_max + self.s) / (1 + self.s)) ** 2


def alpha_bar(t: int, sched: Schedule) -> float:
    """Cumulative retention coefficient at step ``t``."""
    return sched.alpha_bar(t)


# ---------------------------------------------------------------------------
# Marginals
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Marginals:
    """Stationary category distributions estimated from an encoded corpus.

    ``m_ev`` rows give, per bond category, the distribution of motif types at
    the source end of such pairs; ``m_ve`` is the row-normalized transpose of
    the same co-occurrence counts.  Count-free rows fall back to the global
    marginal of the target axis so every row stays a distribution.
    """

    m_v: np.ndarray
    m_e: np.ndarray
    m_ev: np.ndarray
    m_ve: np.ndarray

    def __post_init__(self) -> None:
        for name, arr, rows in (
            ("m_v", self.m_v, 1),
            ("m_e", self.m_e, 1),
            ("m_ev", self.m_ev, 4),
            ("m_ve", self.m_ve, len(self.m_v)),
        ):
            if np.any(arr < 0):
                raise ValueError(f"{name} has negative entries")
            sums = arr.sum(axis=-1)
            if not np.all(np.abs(sums - 1.0) <= ROW_TOL):
                raise ValueError(f"{name} rows must sum to 1 within {ROW_TOL}")
        if self.m_e.shape != (4,) or self.m_ev.shape != (4, len(self.m_v)):
            raise ValueError("marginal shapes are inconsistent")

    @property
    def n_motif_types(self) -> int:
        return len(self.m_v)


def estimate_marginals(encoded_corpus: list[MotifGraph], n_motif_types: int) -> Marginals:
    """Count motif and dense bond-category frequencies over an encoded corpus.

    Bond counts run over ordered node pairs (i, j), i != j, within each
    graph; absent edges count as null.  Diagonal and padding blocks are
    structural nulls and are excluded.
    """
    if not encoded_corpus:
        raise EmptyCorpusError("cannot estimate marginals from an empty corpus")
    v_counts = np.zeros(n_motif_types, dtype=np.float64)
    e_counts = np.zeros(4, dtype=np.float64)
    ev_counts = np.zeros((4, n_motif_types), dtype=np.float64)
    for graph in encoded_corpus:
        n = graph.n
        for motif_id in graph.nodes:
            if motif_id >= n_motif_types:
                raise ValueError(f"motif id {motif_id} outside {n_motif_types} types")
            v_counts[motif_id] += 1
        null_per_node = np.full(graph.n, float(max(n - 1, 0)))
        for edge in graph.edges:
            e_counts[edge.bond_order] += 1
            ev_counts[edge.bond_order, graph.nodes[edge.source]] += 1
            null_per_node[edge.source] -= 1
        for i in range(n):
            if null_per_node[i]:
                e_counts[NULL_BOND] += null_per_node[i]
                ev_counts[NULL_BOND, graph.nodes[i]] += null_per_node[i]
    m_v = v_counts / v_counts.sum()
    if e_counts.sum() == 0:
        # Single-node corpus: no pairs at all; the bond space is trivially null.
        e_counts[NULL_BOND] = 1.0
    m_e = e_counts / e_counts.sum()
    m_ev = _rows_or_fallback(ev_counts, m_v)
    m_ve = _rows_or_fallback(ev_counts.T, m_e)
    return Marginals(m_v, m_e, m_ev, m_ve)


def _rows_or_fallback(counts: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    out = np.empty_like(counts, dtype=np.float64)
    for i, row in enumerate(counts):
        total = row.sum()
        out[i] = row / total if total > 0 else fallback
    return out


# ---------------------------------------------------------------------------
# Transition matrices
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class TransitionSet:
    """Per-step and cumulative transition operators at one timestep.

    Matrices are materialized lazily; samplers use the rank-one structure
    through the ``alpha``/``alpha_bar`` coefficients instead.
    """

    marginals: Marginals
    t: int
    alpha_t: float
    alpha_bar_t: float
    alpha_bar_prev: float
    _cache: dict = field(default_factory=dict, repr=False)

    def _family(self, a: float, m: np.ndarray) -> np.ndarray:
        return a * np.eye(len(m)) + (1.0 - a) * np.outer(np.ones(len(m)), m)

    @property
    def q_v(self) -> np.ndarray:
        if "q_v" not in self._cache:
            self._cache["q_v"] = self._family(self.alpha_t, self.marginals.m_v)
        return self._cache["q_v"]

    @property
    def q_e(self) -> np.ndarray:
        if "q_e" not in self._cache:
            self._cache["q_e"] = self._family(self.alpha_t, self.marginals.m_e)
        return self._cache["q_e"]

    @property
    def q_ev(self) -> np.ndarray:
        # Rectangular transitions interpolate the co-occurrence coupling
        # toward the target-axis marginal; rows stay stochastic.
        if "q_ev" not in self._cache:
            m = self.marginals
            self._cache["q_ev"] = self.alpha_t * m.m_ev + (1.0 - self.alpha_t) * np.outer(
                np.ones(4), m.m_v
            )
        return self._cache["q_ev"]

    @property
    def q_ve(self) -> np.ndarray:
        if "q_ve" not in self._cache:
            m = self.marginals
            self._cache["q_ve"] = self.alpha_t * m.m_ve + (1.0 - self.alpha_t) * np.outer(
                np.ones(m.n_motif_types), m.m_e
            )
        return self._cache["q_ve"]

    @property
    def q_bar_v(self) -> np.ndarray:
        if "q_bar_v" not in self._cache:
            self._cache["q_bar_v"] = self._family(self.alpha_bar_t, self.marginals.m_v)
        return self._cache["q_bar_v"]

    @property
    def q_bar_e(self) -> np.ndarray:
        if "q_bar_e" not in self._cache:
            self._cache["q_bar_e"] = self._family(self.alpha_bar_t, self.marginals.m_e)
        return self._cache["q_bar_e"]

    @property
    def q_bar_v_prev(self) -> np.ndarray:
        if "q_bar_v_prev" not in self._cache:
            self._cache["q_bar_v_prev"] = self._family(self.alpha_bar_prev, self.marginals.m_v)
        return self._cache["q_bar_v_prev"]

    @property
    def q_bar_e_prev(self) -> np.ndarray:
        if "q_bar_e_prev" not in self._cache:
            self._cache["q_bar_e_prev"] = self._family(self.alpha_bar_prev, self.marginals.m_e)
        return self._cache["q_bar_e_prev"]


def build_transitions(m: Marginals, t: int, sched: Schedule) -> TransitionSet:
    """Transition operators at step ``t`` in 1..T.

    The per-step coefficient is the ratio of consecutive cumulative
    coefficients; a vanished previous coefficient makes the ratio undefined.
    """
    if not 1 <= t <= sched.t_max:
        raise OutOfRangeStepError(f"step {t} outside [1, {sched.t_max}]")
    a_bar_t = sched.alpha_bar(t)
    a_bar_prev = sched.alpha_bar(t - 1)
    if a_bar_prev == 0.0:
        raise ScheduleDegeneracyError(f"alpha_bar({t - 1}) is zero; per-step ratio undefined")
    return TransitionSet(
        marginals=m,
        t=t,
        alpha_t=a_bar_t / a_bar_prev,
        alpha_bar_t=a_bar_t,
        alpha_bar_prev=a_bar_prev,
    )


def assemble_graph_transition(ts: TransitionSet, n: int, normalize: bool = True) -> np.ndarray:
    """Joint node/edge block operator for an ``n``-node graph.

    Layout: ``[[Q_V, row-ones (x) Q_VE], [col-ones (x) Q_EV, ones (x) Q_E]]``.
    Stacked blocks do not form a stochastic matrix on their own, so rows are
    renormalized unless ``normalize`` is False.  Sampling never uses this
    operator; it applies the node and edge transitions separately.
    """
    if n < 1:
        raise ValueError("graph transition needs n >= 1")
    top = np.hstack([ts.q_v, np.kron(np.ones((1, n)), ts.q_ve)])
    bottom = np.hstack([np.kron(np.ones((n, 1)), ts.q_ev), np.kron(np.ones((n, n)), ts.q_e)])
    q_g = np.vstack([top, bottom])
    if normalize:
        q_g = q_g / q_g.sum(axis=1, keepdims=True)
    return q_g


# ---------------------------------------------------------------------------
# Forward corruption
# ---------------------------------------------------------------------------


def _family_row(a: float, m: np.ndarray, category: int) -> np.ndarray:
    row = (1.0 - a) * m
    row[category] += a
    return row


def _sample_categories(
    a: float, m: np.ndarray, categories: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Sample one category per entry from rows of ``a*I + (1-a)*1 m'``."""
    out = np.empty(len(categories), dtype=int)
    for i, cat in enumerate(categories):
        row = _family_row(a, m.copy(), int(cat))
        out[i] = rng.choice(len(row), p=row / row.sum())
    return out


def forward_sample(
    x0: GraphTokenMatrix, t: int, ts: TransitionSet | None, rng: np.random.Generator
) -> GraphTokenMatrix:
    """Draw the corrupted state at step ``t`` directly from the clean state.

    Motif and bond categories are corrupted independently; bonds are sampled
    on the upper triangle and mirrored so both directions agree.  Diagonal
    and padding blocks stay null, and attachment blocks are zeroed.
    """
    if t == 0:
        return x0.copy()
    if ts is None or ts.t != t:
        raise ValueError("transition set does not match the requested step")
    layout = x0.layout
    n = x0.n
    a = ts.alpha_bar_t
    m = ts.marginals

    motif_now = _sample_categories(a, m.m_v, x0.motif_ids(), rng)
    bonds_x0 = x0.bond_categories()
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    if pairs:
        cats = np.array([bonds_x0[i, j] for i, j in pairs])
        bonds_now = _sample_categories(a, m.m_e, cats, rng)
    else:
        bonds_now = np.empty(0, dtype=int)

    data = np.zeros((n, layout.width), dtype=np.float64)
    for i, cat in enumerate(motif_now):
        data[i, cat] = 1.0
    bond_cat = np.zeros((n, layout.n_max), dtype=int)
    for (i, j), cat in zip(pairs, bonds_now):
        bond_cat[i, j] = cat
        bond_cat[j, i] = cat
    for i in range(n):
        for j in range(layout.n_max):
            data[i, layout.bond_block(j).start + bond_cat[i, j]] = 1.0
    return GraphTokenMatrix(data, layout, n)


def _attach_start(layout: FeatureLayout) -> int:
    return layout.f_motif + layout.n_max * layout.f_bond


# ---------------------------------------------------------------------------
# Posterior
# ---------------------------------------------------------------------------


def posterior(xt: int, x0: int, t: int, ts: TransitionSet, axis: str = "motif") -> np.ndarray:
    """Exact category posterior for step t-1 given states at steps t and 0.

    Computes the normalized elementwise product of the reverse-step column
    and the cumulative row, using the rank-one family structure.
    """
    m = ts.marginals.m_v if axis == "motif" else ts.marginals.m_e
    k = len(m)
    if not (0 <= xt < k and 0 <= x0 < k):
        raise ValueError("category index out of range")
    # column q_t[., xt] and row q_bar_{t-1}[x0, .]
    col = np.full(k, (1.0 - ts.alpha_t) * m[xt])
    col[xt] += ts.alpha_t
    row = (1.0 - ts.alpha_bar_prev) * m
    row[x0] += ts.alpha_bar_prev
    unnorm = col * row
    total = unnorm.sum()
    if total <= 0.0:
        raise ZeroMassPosteriorError(
            f"posterior mass is zero for xt={xt}, x0={x0} on axis {axis}"
        )
    return unnorm / total


# ---------------------------------------------------------------------------
# Denoiser contract and reference denoisers
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class DenoiserOutput:
    """Per-element categorical predictions of the clean state."""

    motif: np.ndarray  # (n, f_motif)
    bond: np.ndarray  # (n, n_max, 4)
    attach: np.ndarray  # (n, n_max, f_attach)


class DenoiserContract(Protocol):
    def __call__(
        self, noisy: GraphTokenMatrix, t: int, context, query_score: float
    ) -> DenoiserOutput: ...


class OracleDenoiser:
    """Returns point masses on a known clean state; recovery reference."""

    def __init__(self, truth: GraphTokenMatrix):
        self.truth = truth

    def __call__(self, noisy, t, context, query_score) -> DenoiserOutput:
        layout = self.truth.layout
        n = self.truth.n
        motif = np.zeros((n, layout.f_motif))
        motif[np.arange(n), self.truth.motif_ids()] = 1.0
        bond = np.zeros((n, layout.n_max, 4))
        cats = self.truth.bond_categories()
        for i in range(n):
            bond[i, np.arange(layout.n_max), cats[i]] = 1.0
        attach = np.zeros((n, layout.n_max, layout.f_attach))
        truth_attach = self.truth.attachment_blocks()
        for i in range(n):
            for j in range(layout.n_max):
                block = truth_attach[i, j]
                if block.any():
                    attach[i, j] = block
                else:
                    attach[i, j, 0] = 1.0
        return DenoiserOutput(motif, bond, attach)


class UniformDenoiser:
    """Maximum-entropy predictions; exercises the sampler without a model."""

    def __call__(self, noisy, t, context, query_score) -> DenoiserOutput:
        layout = noisy.layout
        n = noisy.n
        return DenoiserOutput(
            np.full((n, layout.f_motif), 1.0 / layout.f_motif),
            np.full((n, layout.n_max, 4), 0.25),
            np.full((n, layout.n_max, layout.f_attach), 1.0 / layout.f_attach),
        )


def _check_denoiser_output(pred: DenoiserOutput, layout: FeatureLayout, n: int) -> None:
    shapes = {
        "motif": (pred.motif, (n, layout.f_motif)),
        "bond": (pred.bond, (n, layout.n_max, layout.f_bond)),
        "attach": (pred.attach, (n, layout.n_max, layout.f_attach)),
    }
    for name, (arr, expected) in shapes.items():
        if arr.shape != expected:
            raise DenoiserContractViolationError(
                f"{name} head shape {arr.shape} != expected {expected}"
            )
        if np.any(arr < 0) or np.any(np.abs(arr.sum(axis=-1) - 1.0) > DIST_TOL):
            raise DenoiserContractViolationError(f"{name} head is not a distribution")


# ---------------------------------------------------------------------------
# Reverse sampling
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class SamplingResult:
    trajectory: list[GraphTokenMatrix]  # x^T .. x^0, length T+1
    final: GraphTokenMatrix
    motif_graph: MotifGraph


def _mix_posterior(
    pred_row: np.ndarray, current: int, ts: TransitionSet, m: np.ndarray
) -> np.ndarray:
    """Expected posterior over step t-1, marginalizing the predicted clean state.

    Branches the current state cannot reach (zero forward mass) are dropped
    and the prediction renormalizes over the rest.
    """
    k = len(m)
    col = np.full(k, (1.0 - ts.alpha_t) * m[current])
    col[current] += ts.alpha_t
    base = (1.0 - ts.alpha_bar_prev) * (col * m)
    base_sum = base.sum()
    z = base_sum + ts.alpha_bar_prev * col  # z[v] = normalizer of branch x0=v
    valid = z > 0
    weight = np.where(valid, pred_row, 0.0)
    mass = weight.sum()
    if mass <= 0.0:
        raise ZeroMassPosteriorError("all predicted clean states are unreachable")
    weight = weight / mass
    ratios = np.divide(weight, z, out=np.zeros_like(weight), where=valid)
    mixture = base * ratios.sum() + ts.alpha_bar_prev * col * ratios
    return mixture / mixture.sum()


def reverse_sample(
    denoiser: DenoiserContract,
    task,
    layout: FeatureLayout,
    sched: Schedule,
    marginals: Marginals,
    rng: np.random.Generator,
    n_nodes: int,
    x0_mixing: str = "expectation",
) -> SamplingResult:
    """Run the full reverse chain from stationary noise to a motif graph.

    ``task`` supplies the demonstration context and query score passed to
    the denoiser.  The number of nodes is fixed for the whole trajectory.
    Attachments for non-null bonds are drawn from the denoiser's attachment
    head at the final step.
    """
    if n_nodes < 1 or n_nodes > layout.n_max:
        raise ValueError(f"n_nodes must be in [1, {layout.n_max}]")
    if x0_mixing not in ("expectation", "argmax"):
        raise ValueError("x0_mixing must be 'expectation' or 'argmax'")
    n = n_nodes
    context = getattr(task, "context", None)
    query_score = getattr(task, "query_score", 1.0)

    motif_cat = rng.choice(layout.f_motif, size=n, p=marginals.m_v)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    bond_cat = np.zeros((n, layout.n_max), dtype=int)
    for i, j in pairs:
        cat = rng.choice(4, p=marginals.m_e)
        bond_cat[i, j] = cat
        bond_cat[j, i] = cat

    trajectory = [_assemble_state(motif_cat, bond_cat, layout, n)]
    last_pred: DenoiserOutput | None = None
    for t in range(sched.t_max, 0, -1):
        ts = build_transitions(marginals, t, sched)
        pred = denoiser(trajectory[-1], t, context, query_score)
        _check_denoiser_output(pred, layout, n)
        last_pred = pred

        new_motif = np.empty(n, dtype=int)
        for i in range(n):
            pred_row = pred.motif[i]
            if x0_mixing == "argmax":
                pred_row = _onehot(len(pred_row), int(np.argmax(pred_row)))
            mixture = _mix_posterior(pred_row, int(motif_cat[i]), ts, marginals.m_v)
            new_motif[i] = rng.choice(layout.f_motif, p=mixture)
        new_bond = np.zeros((n, layout.n_max), dtype=int)
        for i, j in pairs:
            pred_row = pred.bond[i, j]
            if x0_mixing == "argmax":
                pred_row = _onehot(4, int(np.argmax(pred_row)))
            mixture = _mix_posterior(pred_row, int(bond_cat[i, j]), ts, marginals.m_e)
            cat = rng.choice(4, p=mixture)
            new_bond[i, j] = cat
            new_bond[j, i] = cat
        motif_cat, bond_cat = new_motif, new_bond
        trajectory.append(_assemble_state(motif_cat, bond_cat, layout, n))

    final = trajectory[-1]
    if last_pred is not None:
        for i in range(n):
            for j in range(n):
                if i != j and bond_cat[i, j] != NULL_BOND:
                    dist = last_pred.attach[i, j]
                    attachment = rng.choice(layout.f_attach, p=dist / dist.sum())
                    final.data[i, layout.attach_block(j).start + attachment] = 1.0
    try:
        motif_graph = defeaturize(final, layout)
    except ValueError as exc:
        raise NonDecodableFinalStateError(str(exc), trajectory) from exc
    return SamplingResult(trajectory, final, motif_graph)


def _onehot(k: int, index: int) -> np.ndarray:
    row = np.zeros(k)
    row[index] = 1.0
    return row


def _assemble_state(
    motif_cat: np.ndarray, bond_cat: np.ndarray, layout: FeatureLayout, n: int
) -> GraphTokenMatrix:
    data = np.zeros((n, layout.width), dtype=np.float64)
    for i in range(n):
        data[i, int(motif_cat[i])] = 1.0
        for j in range(layout.n_max):
            data[i, layout.bond_block(j).start + int(bond_cat[i, j])] = 1.0
    return GraphTokenMatrix(data, layout, n)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossBreakdown:
    """Negative log-likelihood split by prediction head, in nats."""

    l_motif: float
    l_bond: float
    l_attach: float

    @property
    def total(self) -> float:
        return self.l_motif + self.l_bond + self.l_attach


def pretrain_loss(pred: DenoiserOutput, x0: GraphTokenMatrix) -> LossBreakdown:
    """Per-head negative log-likelihood of the clean state.

    The bond term covers every dense pair block including nulls; the
    attachment term covers only blocks whose true bond is non-null.
    """
    layout = x0.layout
    n = x0.n
    try:
        _check_denoiser_output(pred, layout, n)
    except DenoiserContractViolationError as exc:
        message = str(exc)
        if "shape" in message:
            raise ShapeMismatchError(message) from exc
        raise NonDistributionInputError(message) from exc

    with np.errstate(divide="ignore"):
        motif_ids = x0.motif_ids()
        l_motif = float(-np.log(pred.motif[np.arange(n), motif_ids]).sum())

        bonds = np.zeros((n, layout.n_max), dtype=int)
        cats = x0.bond_categories()
        bonds[:, : cats.shape[1]] = cats
        rows = np.repeat(np.arange(n), layout.n_max)
        cols = np.tile(np.arange(layout.n_max), n)
        l_bond = float(-np.log(pred.bond[rows, cols, bonds.ravel()]).sum())

        l_attach = 0.0
        attach_truth = x0.attachment_blocks()
        for i in range(n):
            for j in range(n):
                if i != j and j < layout.n_max and bonds[i, j] != NULL_BOND:
                    block = attach_truth[i, j]
                    hits = np.flatnonzero(block == 1.0)
                    if len(hits) != 1:
                        raise NonDistributionInputError(
                            f"clean state lacks a one-hot attachment at ({i},{j})"
                        )
                    p = pred.attach[i, j, hits[0]]
                    l_attach += -math.log(p) if p > 0 else math.inf
    return LossBreakdown(l_motif, l_bond, float(l_attach))
