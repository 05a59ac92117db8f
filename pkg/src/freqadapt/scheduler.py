"""Plateau-driven dynamic region scheduler for amplitude mixup.

The scheduler watches a validation score stream. While the score improves
it holds the mixing region fraction ``beta`` fixed; once the score fails
to improve for more than ``patience`` consecutive epochs it asks the
caller to probe the model at ``beta + tau`` and ``beta - tau`` and then
commits whichever direction scored higher (ties fall to the minus
branch). ``beta`` is stored as an integer count of ``tau`` units so long
schedules stay exactly reproducible, and it is clamped to the configured
region bounds after each probe decision.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class SchedulerProtocolError(Exception):
    """resolve_probe called without a pending probe (or vice versa)."""


def _to_units(name: str, value: float, tau: float) -> int:
    units = round(value / tau)
    if abs(units * tau - value) > 1e-9:
        raise ValueError(f"{name}={value} is not an integer multiple of tau={tau}")
    return units


@dataclass(frozen=True)
class DyMixConfig:
    tau: float = 0.05
    patience: int = 5
    min_region: float = 0.1
    max_region: float = 1.0
    initial_beta: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.tau <= 1.0):
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if not (0.0 <= self.min_region <= self.initial_beta <= self.max_region <= 1.0):
            raise ValueError(
                "need 0 <= min_region <= initial_beta <= max_region <= 1, got "
                f"min={self.min_region} initial={self.initial_beta} max={self.max_region}"
            )
        # Validates tau alignment of every region parameter.
        _to_units("min_region", self.min_region, self.tau)
        _to_units("max_region", self.max_region, self.tau)
        _to_units("initial_beta", self.initial_beta, self.tau)


@dataclass(frozen=True)
class Hold:
    pass


@dataclass(frozen=True)
class ProbeRequested:
    beta_plus: float
    beta_minus: float


Decision = Hold | ProbeRequested


@dataclass
class DyMixState:
    cfg: DyMixConfig
    beta_units: int
    best_score: float = 0.0
    num_bad_epochs: int = 0
    pending_probe: bool = False
    min_units: int = field(init=False)
    max_units: int = field(init=False)

    def __post_init__(self):
        self.min_units = _to_units("min_region", self.cfg.min_region, self.cfg.tau)
        self.max_units = _to_units("max_region", self.cfg.max_region, self.cfg.tau)

    @property
    def beta(self) -> float:
        return self.beta_units * self.cfg.tau

    def _clamp(self, units: int) -> int:
        return max(self.min_units, min(self.max_units, units))


def new_scheduler(cfg: DyMixConfig) -> DyMixState:
    return DyMixState(cfg=cfg, beta_units=_to_units("initial_beta", cfg.initial_beta, cfg.tau))


def step(state: DyMixState, auc_score: float) -> Decision:
    """Feed one validation score; returns Hold or a probe request.

    Only a strict improvement over the best score counts; equality is a
    bad epoch. The counter resets when the probe is emitted, and beta only
    moves in :func:`resolve_probe`.
    """
    if not (0.0 <= auc_score <= 1.0):
        raise ValueError(f"auc score must lie in [0, 1], got {auc_score}")
    if state.pending_probe:
        raise SchedulerProtocolError("step called while a probe is pending")
    if auc_score > state.best_score:
        state.best_score = auc_score
        state.num_bad_epochs = 0
        return Hold()
    state.num_bad_epochs += 1
    if state.num_bad_epochs > state.cfg.patience:
        state.num_bad_epochs = 0
        state.pending_probe = True
        plus = state._clamp(state.beta_units + 1)
        minus = state._clamp(state.beta_units - 1)
        return ProbeRequested(plus * state.cfg.tau, minus * state.cfg.tau)
    return Hold()


def resolve_probe(state: DyMixState, eval_plus: float, eval_minus: float) -> float:
    """Commit the probe: move beta one tau toward the better-scoring side.

    A tie takes the minus branch. The move is clamped to the region
    bounds, so a winning direction that is already at its bound leaves
    beta unchanged. Probe scores never touch best_score.
    """
    if not state.pending_probe:
        raise SchedulerProtocolError("resolve_probe called without a pending probe")
    state.pending_probe = False
    if eval_plus > eval_minus:
        state.beta_units = state._clamp(state.beta_units + 1)
    else:
        state.beta_units = state._clamp(state.beta_units - 1)
    return state.beta


def state_to_dict(state: DyMixState) -> dict:
    return {
        "tau": state.cfg.tau,
        "patience": state.cfg.patience,
        "min_region": state.cfg.min_region,
        "max_region": state.cfg.max_region,
        "initial_beta": state.cfg.initial_beta,
        "beta_units": state.beta_units,
        "best_score": state.best_score,
        "num_bad_epochs": state.num_bad_epochs,
        "pending_probe": state.pending_probe,
    }


def state_from_dict(d: dict) -> DyMixState:
    cfg = DyMixConfig(
        tau=d["tau"],
        patience=d["patience"],
        min_region=d["min_region"],
        max_region=d["max_region"],
        initial_beta=d["initial_beta"],
    )
    state = DyMixState(cfg=cfg, beta_units=d["beta_units"])
    state.best_score = d["best_score"]
    state.num_bad_epochs = d["num_bad_epochs"]
    state.pending_probe = d["pending_probe"]
    return state
