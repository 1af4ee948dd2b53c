"""Monthly stock-return panels: CSV ingestion, trailing-window construction,
temporal splits, and a synthetic reversal panel for self-contained runs.

File contract (``load_returns_csv``): header ``firm_key,month,ret``, months
as YYYY-MM, simple (not log) monthly returns as decimals, one row per
(firm, month).
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .datasets import SplitPlan, month_index, month_label
from .errors import ConfigurationError, DataError, EmptyInputError


@dataclass
class ReturnsPanel:
    """Long-format returns: parallel arrays sorted by (firm, month)."""

    firm_keys: list[str]
    month_indices: np.ndarray  # integer months (year*12 + month-1)
    rets: np.ndarray

    def __len__(self) -> int:
        return len(self.firm_keys)


@dataclass
class PromptRow:
    """One forecasting row: 12 consecutive trailing returns plus target."""

    firm_key: str
    formation_month: str
    window: list[float]  # oldest first; window[-1] is the formation month
    target: float | None  # realized return one month after formation


def load_returns_csv(path) -> ReturnsPanel:
    if not os.path.exists(path):
        raise DataError(f"returns file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyInputError(f"{path}: empty file")
        if header != ["firm_key", "month", "ret"]:
            raise DataError(f"{path}: expected header firm_key,month,ret, got {header}")
        firms, months, rets = [], [], []
        seen: set[tuple[str, int]] = set()
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(rec)}")
            firm, month, ret_text = rec
            midx = month_index(month)
            key = (firm, midx)
            if key in seen:
                raise DataError(f"{path}:{lineno}: duplicate (firm, month) = ({firm}, {month})")
            seen.add(key)
            try:
                ret = float(ret_text)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric ret {ret_text!r}") from exc
            if not math.isfinite(ret):
                raise DataError(f"{path}:{lineno}: non-finite ret")
            firms.append(firm)
            months.append(midx)
            rets.append(ret)
    if not firms:
        raise EmptyInputError(f"{path}: no data rows")
    order = sorted(range(len(firms)), key=lambda i: (firms[i], months[i]))
    return ReturnsPanel(
        firm_keys=[firms[i] for i in order],
        month_indices=np.array([months[i] for i in order], dtype=int),
        rets=np.array([rets[i] for i in order]),
    )


def write_returns_csv(panel: ReturnsPanel, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["firm_key", "month", "ret"])
        for firm, midx, ret in zip(panel.firm_keys, panel.month_indices, panel.rets):
            writer.writerow([firm, month_label(int(midx)), f"{ret:.17g}"])


def build_windows(
    panel: ReturnsPanel, window_len: int = 12, clamp: tuple[float, float] | None = None
) -> list[PromptRow]:
    """Emit one row per (firm, month) with a full consecutive window and an
    existing next-month return; calendar gaps break consecutiveness.

    `clamp` optionally clips extreme returns to (lo, hi) for robustness
    runs; the default applies no winsorization.
    """
    rows: list[PromptRow] = []
    by_firm: dict[str, list[int]] = {}
    for i, firm in enumerate(panel.firm_keys):
        by_firm.setdefault(firm, []).append(i)
    clamped = panel.rets if clamp is None else np.clip(panel.rets, clamp[0], clamp[1])
    for firm in sorted(by_firm):
        idx = by_firm[firm]
        months = panel.month_indices[idx]
        rets = clamped[np.asarray(idx)]
        pos_by_month = {int(m): j for j, m in enumerate(months)}
        for j, formation in enumerate(months):
            needed = [int(formation) - s for s in range(window_len - 1, -1, -1)]
            target_month = int(formation) + 1
            if target_month not in pos_by_month:
                continue
            if not all(m in pos_by_month for m in needed):
                continue
            window = [float(rets[pos_by_month[m]]) for m in needed]
            rows.append(
                PromptRow(
                    firm_key=firm,
                    formation_month=month_label(int(formation)),
                    window=window,
                    target=float(rets[pos_by_month[target_month]]),
                )
            )
    return rows


def temporal_split(rows: list[PromptRow], plan: SplitPlan):
    """Assign rows to train/val/test by formation month.

    Returns ({split: rows}, dropped_count); rows outside every range drop.
    """
    out = {"train": [], "val": [], "test": []}
    dropped = 0
    for row in rows:
        assigned = False
        for split in out:
            if plan.stock_range(split).contains(row.formation_month):
                out[split].append(row)
                assigned = True
                break
        if not assigned:
            dropped += 1
    return out, dropped


def synth_reversal_panel(
    n_firms: int,
    n_months: int,
    phi: float,
    vol: float,
    seed: int,
    start_month: str = "2001-01",
    mean_return: float = 0.01,
    factor_vol_frac: float = 0.25,
) -> ReturnsPanel:
    """Stand-in panel with a planted short-term reversal.

    Per-firm returns follow an AR(1) with negative persistence phi around a
    common month factor: r_{i,t} = mu + f_t + u_{i,t}, u AR(1, phi). The
    month factor keeps the time fixed effect meaningful while small enough
    that the pooled lag-1 autocorrelation stays near phi.
    """
    if not -1.0 < phi < 0.0:
        raise ConfigurationError(f"phi must lie in (-1, 0), got {phi}")
    if vol <= 0:
        raise ConfigurationError(f"vol must be positive, got {vol}")
    if n_firms < 1 or n_months < 2:
        raise ConfigurationError("need n_firms >= 1 and n_months >= 2")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x72657473]))
    factor = rng.normal(0.0, factor_vol_frac * vol, size=n_months)
    innov = rng.normal(0.0, vol, size=(n_firms, n_months))
    u = np.empty((n_firms, n_months))
    u[:, 0] = innov[:, 0]
    for t in range(1, n_months):
        u[:, t] = phi * u[:, t - 1] + innov[:, t]
    returns = mean_return + factor[None, :] + u

    start = month_index(start_month)
    width = len(str(n_firms - 1))
    firms, months, rets = [], [], []
    for i in range(n_firms):
        key = f"F{i:0{width}d}"
        for t in range(n_months):
            firms.append(key)
            months.append(start + t)
            rets.append(float(returns[i, t]))
    return ReturnsPanel(
        firm_keys=firms,
        month_indices=np.array(months, dtype=int),
        rets=np.array(rets),
    )


def rows_to_matrices(rows: list[PromptRow]):
    """(lag matrix with column s = r_{t-s}, targets, firm labels, months).

    Column 0 is the formation-month return, column s the return s months
    earlier, matching the regression's lag ordering.
    """
    if not rows:
        raise EmptyInputError("no prompt rows")
    window_len = len(rows[0].window)
    X = np.array([[row.window[window_len - 1 - s] for s in range(window_len)] for row in rows])
    y = np.array([row.target if row.target is not None else np.nan for row in rows])
    firms = [row.firm_key for row in rows]
    months = [row.formation_month for row in rows]
    return X, y, firms, months


def write_prompt_rows_csv(rows: list[PromptRow], path) -> None:
    if not rows:
        raise EmptyInputError("no prompt rows")
    window_len = len(rows[0].window)
    header = ["firm_key", "formation"] + [
        f"r_lag{window_len - 1 - j}" for j in range(window_len)
    ] + ["target"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [row.firm_key, row.formation_month]
                + [f"{v:.17g}" for v in row.window]
                + [f"{row.target:.17g}" if row.target is not None else ""]
            )
