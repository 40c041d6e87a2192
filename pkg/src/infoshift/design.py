"""Exact finite-alphabet machinery for the nudge-design problem.

An environment is a joint distribution over (E, U) with conditional decision
channels for the machine and human observers. Transformations act on the
controllable component E only. With the unrestricted predictive family on a
finite instance, usable information reduces to Shannon mutual information,
so the solver evaluates candidates exactly by enumeration.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .vinfo import InfoEstimate

logger = logging.getLogger(__name__)

EXACT_FAMILY_ID = "exact_table"
ALPHABET_CAP = 64
PROB_TOL = 1e-12
IDENTITY_TOL = 1e-9


def _entropy_bits(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=float).ravel()
    mask = p > 0
    return float(-np.sum(p[mask] * np.log2(p[mask])))


def mutual_information_bits(joint: np.ndarray) -> float:
    """I(X;Y) in bits from a joint table, by the direct double sum."""
    joint = np.asarray(joint, dtype=float)
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    total = 0.0
    for i in range(joint.shape[0]):
        for j in range(joint.shape[1]):
            p = joint[i, j]
            if p > 0:
                total += p * math.log2(p / (px[i] * py[j]))
    return total


def exact_vinformation(joint: np.ndarray) -> float:
    """Usable information of the unrestricted family on a finite joint table.

    Computed along the pointwise route: the expectation over (x, y) of the
    content log score log2 p(y|x) minus the null log score log2 p(y).
    """
    joint = np.asarray(joint, dtype=float)
    if joint.min() < -PROB_TOL or abs(joint.sum() - 1.0) > 1e-9:
        raise DataError("joint table must be a probability distribution")
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    total = 0.0
    for i in range(joint.shape[0]):
        if px[i] <= 0:
            continue
        for j in range(joint.shape[1]):
            p = joint[i, j]
            if p > 0:
                pointwise = -math.log2(py[j]) + math.log2(p / px[i])
                total += p * pointwise
    return total


# ---------------------------------------------------------------------------
# Environments and transformations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Environment:
    e_space: tuple[str, ...]
    u_space: tuple[str, ...]
    joint: np.ndarray           # shape (|E|, |U|), sums to 1
    machine_labels: tuple[str, ...]
    human_labels: tuple[str, ...]
    machine_channel: np.ndarray  # shape (|E|, |U|, |Y_M|), rows sum to 1
    human_channel: np.ndarray    # shape (|E|, |U|, |Y_H|)

    def __post_init__(self) -> None:
        ne, nu = len(self.e_space), len(self.u_space)
        if ne > ALPHABET_CAP or nu > ALPHABET_CAP:
            raise ConfigError(
                f"alphabet exceeds the exact-mode cap of {ALPHABET_CAP}; "
                "use the trained-family path for large instances"
            )
        joint = np.asarray(self.joint, dtype=float)
        if joint.shape != (ne, nu):
            raise ConfigError(f"joint shape {joint.shape} != ({ne}, {nu})")
        if joint.min() < -PROB_TOL or abs(float(joint.sum()) - 1.0) > PROB_TOL:
            raise ConfigError("joint must be nonnegative and sum to 1 within 1e-12")
        for name, channel, labels in (
            ("machine_channel", self.machine_channel, self.machine_labels),
            ("human_channel", self.human_channel, self.human_labels),
        ):
            arr = np.asarray(channel, dtype=float)
            if arr.shape != (ne, nu, len(labels)):
                raise ConfigError(f"{name} shape {arr.shape} != ({ne}, {nu}, {len(labels)})")
            if arr.min() < -PROB_TOL:
                raise ConfigError(f"{name} has negative entries")
            rows = arr.sum(axis=2)
            if np.abs(rows - 1.0).max() > PROB_TOL:
                raise ConfigError(f"{name} rows must sum to 1 within 1e-12")

    def channel(self, which: str) -> np.ndarray:
        if which == "machine":
            return np.asarray(self.machine_channel, dtype=float)
        if which == "human":
            return np.asarray(self.human_channel, dtype=float)
        raise ConfigError(f"unknown channel {which!r} (expected 'machine' or 'human')")


@dataclass(frozen=True)
class Transformation:
    id: str
    mapping: dict[str, str]  # total map on E

    def validate(self, e_space: tuple[str, ...]) -> None:
        missing = set(e_space) - set(self.mapping)
        if missing:
            raise ConfigError(f"transformation {self.id!r} is not total on E: missing {sorted(missing)}")
        bad = set(self.mapping.values()) - set(e_space)
        if bad:
            raise ConfigError(f"transformation {self.id!r} maps outside E: {sorted(bad)}")

    def is_identity(self, e_space: tuple[str, ...]) -> bool:
        return all(self.mapping[e] == e for e in e_space)


def identity_transformation(e_space: tuple[str, ...]) -> Transformation:
    return Transformation("identity", {e: e for e in e_space})


def pushforward_joint(env: Environment, tau: Transformation, which: str) -> np.ndarray:
    """Joint table over (tau(X), Y): rows indexed by (e', u) pairs, columns by labels.

    The decision variable Y is generated from the original (e, u); the
    transformation changes only what the observer sees.
    """
    tau.validate(env.e_space)
    channel = env.channel(which)
    ne, nu = len(env.e_space), len(env.u_space)
    ny = channel.shape[2]
    e_index = {e: i for i, e in enumerate(env.e_space)}
    joint = np.asarray(env.joint, dtype=float)
    out = np.zeros((ne * nu, ny))
    for i, e in enumerate(env.e_space):
        ti = e_index[tau.mapping[e]]
        for u in range(nu):
            out[ti * nu + u, :] += joint[i, u] * channel[i, u, :]
    return out


def info_exact(env: Environment, tau: Transformation, which: str = "machine") -> float:
    """Mutual information I(tau(X); Y) in bits from the exact pushforward."""
    return mutual_information_bits(pushforward_joint(env, tau, which))


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CandidateRow:
    tau_id: str
    machine_info: float
    human_info: float
    feasible: bool


@dataclass(frozen=True)
class DesignSolution:
    chosen: str
    rows: tuple[CandidateRow, ...]
    epsilon: float
    baseline_human_info: float
    unconstrained: bool
    binding: bool

    @property
    def feasible_set(self) -> tuple[str, ...]:
        return tuple(r.tau_id for r in self.rows if r.feasible)


def solve(env: Environment, transformations: list[Transformation], epsilon: float) -> DesignSolution:
    """Exhaustively evaluate candidates and pick the feasible machine-info maximizer.

    The identity transformation must be included: it anchors the human-side
    constraint and guarantees feasibility. Ties break lexicographically on id.
    """
    if epsilon < 0:
        raise ConfigError("epsilon must be nonnegative")
    ids = [t.id for t in transformations]
    if len(set(ids)) != len(ids):
        raise ConfigError("transformation ids must be unique")
    identity = next((t for t in transformations if t.is_identity(env.e_space)), None)
    if identity is None:
        raise ConfigError("the identity transformation must be included in the candidate set")
    baseline_human = float(info_exact(env, identity, "human"))
    rows = []
    for tau in sorted(transformations, key=lambda t: t.id):
        machine = float(info_exact(env, tau, "machine"))
        human = float(info_exact(env, tau, "human"))
        rows.append(CandidateRow(
            tau_id=tau.id,
            machine_info=machine,
            human_info=human,
            feasible=bool(human >= baseline_human - epsilon),
        ))
    feasible = [r for r in rows if r.feasible]
    if not feasible:
        table = "; ".join(
            f"{r.tau_id}: M={r.machine_info:.6f}, H={r.human_info:.6f}" for r in rows
        )
        raise DataError(f"no feasible transformation (epsilon={epsilon}); per-candidate table: {table}")
    chosen = min(feasible, key=lambda r: (-r.machine_info, r.tau_id))
    best_any = min(rows, key=lambda r: (-r.machine_info, r.tau_id))
    unconstrained = epsilon >= baseline_human
    return DesignSolution(
        chosen=chosen.tau_id,
        rows=tuple(rows),
        epsilon=epsilon,
        baseline_human_info=baseline_human,
        unconstrained=unconstrained,
        binding=(not unconstrained) and best_any.machine_info > chosen.machine_info,
    )


# ---------------------------------------------------------------------------
# Identity check: best log-score equals negative conditional entropy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LogScoreRow:
    tau_id: str
    machine_info: float
    best_log_score: float
    identity_gap: float


def _argmax_with_ties(rows, key, tol: float = IDENTITY_TOL) -> str:
    best = max(key(r) for r in rows)
    return min(r.tau_id for r in rows if key(r) >= best - tol)


@dataclass(frozen=True)
class LogScoreReport:
    rows: tuple[LogScoreRow, ...]
    ordering_by_info: tuple[str, ...]
    ordering_by_log_score: tuple[str, ...]
    value_identity_ok: bool
    argmax_agrees: bool
    counterexample_candidate: bool


def check_log_score_identity(env: Environment, transformations: list[Transformation]) -> LogScoreReport:
    """Verify, per candidate, that the best achievable expected log score equals
    the negative conditional entropy of the pushforward, and that both
    orderings pick the same maximizer.

    The two sides are computed along different routes: the log-score side
    plugs the conditional row distributions into the scoring rule directly,
    while the entropy side uses H(Y|X') = H(X', Y) - H(X'). A gap beyond
    tolerance flags an implementation bug, not a property failure.
    """
    rows = []
    for tau in sorted(transformations, key=lambda t: t.id):
        joint = pushforward_joint(env, tau, "machine")
        px = joint.sum(axis=1)
        # route A: conditional entropy via the chain rule
        cond_entropy = _entropy_bits(joint) - _entropy_bits(px)
        h_y = _entropy_bits(joint.sum(axis=0))
        machine_info = h_y - cond_entropy
        # route B: expected log score of the per-row optimal predictor
        best_score = 0.0
        for i in range(joint.shape[0]):
            if px[i] <= 0:
                continue
            cond = joint[i] / px[i]
            mask = cond > 0
            best_score += px[i] * float(np.sum(cond[mask] * np.log2(cond[mask])))
        rows.append(LogScoreRow(
            tau_id=tau.id,
            machine_info=machine_info,
            best_log_score=best_score,
            identity_gap=abs(best_score - (-cond_entropy)),
        ))
    by_info = tuple(r.tau_id for r in sorted(rows, key=lambda r: (-r.machine_info, r.tau_id)))
    by_score = tuple(r.tau_id for r in sorted(rows, key=lambda r: (-r.best_log_score, r.tau_id)))
    identity_ok = all(r.identity_gap <= IDENTITY_TOL for r in rows)
    # argmax with the shared tie rule: candidates within tolerance of the route
    # maximum are tied, and the lexicographically first tied id wins, so float
    # noise between the two routes cannot flip the pick
    argmax_info = _argmax_with_ties(rows, lambda r: r.machine_info)
    argmax_score = _argmax_with_ties(rows, lambda r: r.best_log_score)
    argmax_ok = bool(rows) and argmax_info == argmax_score
    return LogScoreReport(
        rows=tuple(rows),
        ordering_by_info=by_info,
        ordering_by_log_score=by_score,
        value_identity_ok=identity_ok,
        argmax_agrees=argmax_ok,
        counterexample_candidate=not (identity_ok and argmax_ok),
    )


# ---------------------------------------------------------------------------
# Realized-nudge verdicts from estimated information
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabeledEstimate:
    estimate: InfoEstimate
    family_id: str


@dataclass(frozen=True)
class RealizedVerdict:
    verdict: str  # "realized" | "unconstrained-realized" | "not-realized"
    machine_delta: float
    human_delta: float
    epsilon_slack: float
    epsilon_trivial: bool
    machine_increase: bool
    human_ok: bool


def check_realized(
    baseline_machine: LabeledEstimate,
    transformed_machine: LabeledEstimate,
    baseline_human: LabeledEstimate,
    transformed_human: LabeledEstimate,
    epsilon: float,
    margin_se: float = 0.0,
) -> RealizedVerdict:
    """Evaluate the realized-nudge inequalities on paired information estimates.

    With ``margin_se > 0`` the machine-side increase must clear that many
    combined standard errors instead of a bare point comparison.
    """
    if baseline_machine.family_id != transformed_machine.family_id:
        raise DataError(
            f"machine families differ: {baseline_machine.family_id!r} vs "
            f"{transformed_machine.family_id!r}"
        )
    if baseline_human.family_id != transformed_human.family_id:
        raise DataError(
            f"human families differ: {baseline_human.family_id!r} vs "
            f"{transformed_human.family_id!r}"
        )
    machine_delta = transformed_machine.estimate.v_information - baseline_machine.estimate.v_information
    human_delta = transformed_human.estimate.v_information - baseline_human.estimate.v_information
    threshold = 0.0
    if margin_se > 0:
        se = math.hypot(
            baseline_machine.estimate.standard_error,
            transformed_machine.estimate.standard_error,
        )
        threshold = margin_se * se
    machine_increase = machine_delta > threshold
    epsilon_trivial = epsilon >= baseline_human.estimate.v_information
    human_ok = epsilon_trivial or (human_delta >= -epsilon)
    if machine_increase and epsilon_trivial:
        verdict = "unconstrained-realized"
    elif machine_increase and human_ok:
        verdict = "realized"
    else:
        verdict = "not-realized"
    return RealizedVerdict(
        verdict=verdict,
        machine_delta=machine_delta,
        human_delta=human_delta,
        epsilon_slack=human_delta + epsilon,
        epsilon_trivial=epsilon_trivial,
        machine_increase=machine_increase,
        human_ok=human_ok,
    )


# ---------------------------------------------------------------------------
# Scenario files and random instances
# ---------------------------------------------------------------------------

def load_scenario(path: str | Path) -> tuple[Environment, list[Transformation], float]:
    """Read a scenario document: spaces, joint, channels, transformations, epsilon."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"scenario file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"scenario file is not valid JSON: {exc}") from exc
    required = {"e_space", "u_space", "joint", "machine_labels", "human_labels",
                "machine_channel", "human_channel", "transformations", "epsilon"}
    missing = required - set(doc)
    if missing:
        raise ConfigError(f"scenario missing keys: {sorted(missing)}")
    unknown = set(doc) - required
    if unknown:
        raise ConfigError(f"scenario has unknown keys: {sorted(unknown)}")
    env = Environment(
        e_space=tuple(doc["e_space"]),
        u_space=tuple(doc["u_space"]),
        joint=np.asarray(doc["joint"], dtype=float),
        machine_labels=tuple(doc["machine_labels"]),
        human_labels=tuple(doc["human_labels"]),
        machine_channel=np.asarray(doc["machine_channel"], dtype=float),
        human_channel=np.asarray(doc["human_channel"], dtype=float),
    )
    taus = [Transformation(tid, dict(mapping)) for tid, mapping in sorted(doc["transformations"].items())]
    for tau in taus:
        tau.validate(env.e_space)
    return env, taus, float(doc["epsilon"])


def random_instance(
    rng: np.random.Generator,
    n_e: int = 4,
    n_u: int = 4,
    n_y: int = 3,
    n_transformations: int = 5,
) -> tuple[Environment, list[Transformation]]:
    """Random dirichlet environment plus random E-maps (identity always included)."""
    e_space = tuple(f"e{i}" for i in range(n_e))
    u_space = tuple(f"u{i}" for i in range(n_u))
    joint = rng.dirichlet(np.ones(n_e * n_u)).reshape(n_e, n_u)
    machine = rng.dirichlet(np.ones(n_y), size=(n_e, n_u))
    human = rng.dirichlet(np.ones(n_y), size=(n_e, n_u))
    taus = [identity_transformation(e_space)]
    for t in range(n_transformations - 1):
        mapping = {e: e_space[int(rng.integers(0, n_e))] for e in e_space}
        taus.append(Transformation(f"tau{t:02d}", mapping))
    env = Environment(
        e_space=e_space,
        u_space=u_space,
        joint=joint,
        machine_labels=tuple(f"y{i}" for i in range(n_y)),
        human_labels=tuple(f"y{i}" for i in range(n_y)),
        machine_channel=machine,
        human_channel=human,
    )
    return env, taus
