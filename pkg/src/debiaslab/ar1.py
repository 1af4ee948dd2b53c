"""AR(1) process simulation and the multi-round forecasting game.

The game protocol: a forecaster first has `history_len` realizations, then
plays `rounds` rounds. At each round it sees the trailing `history_len`
values (rendered at display precision), submits changes for one and two
steps ahead, and the next realization is revealed before the following
round. Two forecasts of the same target are therefore collected across
consecutive rounds, which is what the error-revision diagnostic consumes.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError, EmptyInputError

logger = logging.getLogger(__name__)

# Extra realizations simulated past the last round so the final round's
# two-step-ahead target always exists.
TAIL_VALUES = 2

# Agents see histories coarsened to this many decimal places; panels keep
# full precision.
DISPLAY_DECIMALS = 2


def display_round(values) -> list[float]:
    """Coarsen values to what a forecaster is shown (2 decimal places)."""
    return [float(f"{v:.{DISPLAY_DECIMALS}f}") for v in values]


@dataclass(frozen=True)
class Ar1Config:
    """Parameters of one simulated forecasting session."""

    rho: float
    sigma: float = 20.0
    mean: float = 0.0
    history_len: int = 40
    rounds: int = 40
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigurationError(f"rho must be in [0, 1], got {self.rho}")
        if not self.sigma > 0:
            raise ConfigurationError(f"sigma must be positive, got {self.sigma}")
        if self.history_len < 2:
            raise ConfigurationError(
                f"history_len must be >= 2, got {self.history_len}"
            )
        if self.rounds < 2:
            raise ConfigurationError(f"rounds must be >= 2, got {self.rounds}")

    @property
    def n_values(self) -> int:
        return self.history_len + self.rounds + TAIL_VALUES


@dataclass(frozen=True)
class ForecastPair:
    """Elicited changes relative to the newest observed value."""

    change_one: float
    change_two: float

    def __post_init__(self):
        if not (np.isfinite(self.change_one) and np.isfinite(self.change_two)):
            raise DataError("forecast changes must be finite")


@dataclass
class Ar1Session:
    """One simulated participant: realized path plus per-round forecasts.

    ``forecasts[r]`` holds the pair elicited at round r+1 (rounds are
    1-based in the protocol); None marks a round whose agent call failed.
    """

    config: Ar1Config
    values: np.ndarray
    forecasts: list[ForecastPair | None] = field(default_factory=list)
    failed_rounds: int = 0

    def newest_index(self, round_no: int) -> int:
        """0-based index of the latest revealed value at round `round_no` (1-based)."""
        return self.config.history_len + round_no - 2

    def history_at(self, round_no: int) -> np.ndarray:
        """The trailing window a forecaster sees at `round_no`, full precision."""
        end = self.newest_index(round_no) + 1
        return self.values[end - self.config.history_len : end]


def stream_rng(master_seed: int, stream_id: int) -> np.random.Generator:
    """Independent, reorder-stable generator for one simulation stream.

    Streams are split from the master seed by feeding (master, stream) as
    SeedSequence entropy, so adding or reordering streams never perturbs
    the others.
    """
    return np.random.default_rng(np.random.SeedSequence([master_seed, stream_id]))


def simulate_ar1(config: Ar1Config, rng: np.random.Generator | None = None) -> Ar1Session:
    """Simulate the realization path for one session; forecasts left empty.

    x_1 starts one innovation away from the mean (same code path for all
    rho including the random walk); the pre-game history dominates any
    transient before the first round.
    """
    if rng is None:
        rng = stream_rng(config.seed, 0)
    eps = rng.normal(0.0, config.sigma, size=config.n_values)
    values = np.empty(config.n_values)
    values[0] = config.mean + eps[0]
    for t in range(1, config.n_values):
        values[t] = config.mean + config.rho * (values[t - 1] - config.mean) + eps[t]
    return Ar1Session(config=config, values=values)


def run_session(config: Ar1Config, agent, rng: np.random.Generator | None = None) -> Ar1Session:
    """Play the forecasting game: one agent, `config.rounds` rounds.

    The agent sees only the trailing window at display precision; a failed
    agent call flags that round invalid (logged, never imputed) and the
    session continues.
    """
    from .errors import AgentFailure, ForecastParseError, TransportError, ProtocolError

    session = simulate_ar1(config, rng=rng)
    for round_no in range(1, config.rounds + 1):
        history = display_round(session.history_at(round_no))
        try:
            pair = agent.forecast(history)
        except (AgentFailure, ForecastParseError, TransportError, ProtocolError) as exc:
            raw = getattr(exc, "raw_text", "")
            logger.warning(
                "round %d flagged invalid (%s: %s)%s",
                round_no,
                type(exc).__name__,
                exc,
                f"; raw text: {raw[:200]!r}" if raw else "",
            )
            session.forecasts.append(None)
            session.failed_rounds += 1
            continue
        session.forecasts.append(pair)
    return session


@dataclass
class PanelRow:
    subject_id: int
    t: int
    f_one: float
    f_two_lag: float
    realized: float


@dataclass
class ForecastPanel:
    """Aligned forecast rows: two predictions of the same target per row."""

    rows: list[PanelRow]

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    @property
    def errors(self) -> np.ndarray:
        return self.column("realized") - self.column("f_one")

    @property
    def revisions(self) -> np.ndarray:
        return self.column("f_one") - self.column("f_two_lag")


def build_forecast_panel(sessions: list[Ar1Session]) -> ForecastPanel:
    """Align per-round forecasts into error-revision rows.

    Row for subject i at round t pairs round t's one-step forecast with
    round t-1's two-step forecast of the same target x_{t+1}; a failed
    round therefore removes the row at t and at t+1.
    """
    if not sessions:
        raise EmptyInputError("no sessions supplied")
    rounds = sessions[0].config.rounds
    for s in sessions:
        if s.config.rounds != rounds:
            raise DataError("sessions disagree on round count")
        if len(s.forecasts) != rounds:
            raise DataError("session has no recorded forecasts; run_session first")

    rows: list[PanelRow] = []
    for subject_id, s in enumerate(sessions):
        for t in range(2, rounds + 1):
            prev, cur = s.forecasts[t - 2], s.forecasts[t - 1]
            if prev is None or cur is None:
                continue
            idx = s.newest_index(t)
            rows.append(
                PanelRow(
                    subject_id=subject_id,
                    t=t,
                    f_one=s.values[idx] + cur.change_one,
                    f_two_lag=s.values[idx - 1] + prev.change_two,
                    realized=s.values[idx + 1],
                )
            )
    return ForecastPanel(rows=rows)


PANEL_HEADER = ["subject_id", "t", "f_one", "f_two_lag", "realized"]


def write_panel_csv(panel: ForecastPanel, path) -> None:
    """Export a panel at full double precision (17 significant digits)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PANEL_HEADER)
        for r in panel.rows:
            writer.writerow(
                [r.subject_id, r.t, f"{r.f_one:.17g}", f"{r.f_two_lag:.17g}", f"{r.realized:.17g}"]
            )


def read_panel_csv(path) -> ForecastPanel:
    if not os.path.exists(path):
        raise DataError(f"panel file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PANEL_HEADER:
            raise DataError(f"unexpected panel header in {path}: {header}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != 5:
                raise DataError(f"{path}:{lineno}: expected 5 fields, got {len(rec)}")
            try:
                rows.append(
                    PanelRow(int(rec[0]), int(rec[1]), float(rec[2]), float(rec[3]), float(rec[4]))
                )
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return ForecastPanel(rows=rows)
