"""End-to-end experiment drivers.

Two self-contained replications:

* Controlled series experiment: pretrain a dense net on overreacting
  (extrapolative) targets to manufacture a biased base, diagnose it with
  the error-revision regression per persistence cell, then LoRA-SFT it on
  the conditional-expectation instruction set and re-diagnose on untouched
  test realizations.
* Stock panel experiment: pretrain on momentum-extrapolation targets over
  a synthetic reversal panel, diagnose with the forecast-on-lags panel
  regression, then LoRA-SFT on realized next-month returns under strict
  temporal splits and re-diagnose on the test period.

Both drivers are deterministic given their config and are reused verbatim
by the CLI and the acceptance suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .agents import NetAgent, parse_forecast_response
from .ar1 import Ar1Config, ForecastPanel, build_forecast_panel, run_session, stream_rng
from .datasets import (
    InstructionExample,
    SplitPlan,
    build_ar1_instruction_set,
    extract_window,
    series_stream_id,
)
from .econ import PanelSpec, RegressionResult, error_revision_regression, panel_fe_regression
from .errors import ConfigurationError, DataError
from .net import (
    InputNormalizer,
    attach_lora,
    forward_batch,
    init_dense,
    merge_lora,
)
from .returns import (
    PromptRow,
    build_windows,
    rows_to_matrices,
    synth_reversal_panel,
    temporal_split,
)
from .train import TrainConfig, TrainReport, train_dense, train_sft

DEFAULT_RHOS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
DEFAULT_MASTER_SEED = 20260810

# Momentum teacher for the stock pretraining stage: positive, front-loaded
# loadings on trailing returns (recency-weighted extrapolation).
MOMENTUM_LOADINGS = 0.4 * 0.35 ** np.arange(12)


def extrapolative_target_text(rho: float, window, theta: float, mean: float = 0.0) -> str:
    """Assistant text a latest-innovation overweighter would give."""
    x_t, x_prev = window[-1], window[-2]
    innovation = (x_t - mean) - rho * (x_prev - mean)
    level_one = mean + rho * (x_t - mean) + theta * innovation
    level_two = mean + rho * (level_one - mean)
    from .datasets import _fmt

    return (
        f"change_1: {_fmt(level_one - x_t, 2)}\n"
        f"change_2: {_fmt(level_two - x_t, 2)}"
    )


def series_examples_to_matrices(
    examples: list[InstructionExample], feature_window: int
) -> tuple[np.ndarray, np.ndarray]:
    """(features, targets) for net training from series-task chat examples.

    Features are the trailing `feature_window` values of each prompt's
    history; targets are the two changes parsed from the assistant text.
    """
    feats, targs = [], []
    for ex in examples:
        window = extract_window(ex.prompt_text)
        if len(window) < feature_window:
            raise DataError(
                f"prompt window {len(window)} shorter than feature window {feature_window}"
            )
        pair = parse_forecast_response(ex.target_text)
        feats.append(window[-feature_window:])
        targs.append([pair.change_one, pair.change_two])
    return np.array(feats), np.array(targs)


def stock_examples_to_matrices(
    examples: list[InstructionExample],
) -> tuple[np.ndarray, np.ndarray]:
    feats, targs = [], []
    for ex in examples:
        feats.append(extract_window(ex.prompt_text))
        targs.append([float(ex.target_text)])
    return np.array(feats), np.array(targs)


def evaluate_agent_on_cells(
    agent,
    rhos=DEFAULT_RHOS,
    master_seed: int = DEFAULT_MASTER_SEED,
    sessions_per_cell: int = 32,
    split: str = "test",
    sigma: float = 20.0,
    mean: float = 0.0,
    history_len: int = 40,
    rounds: int = 40,
    se_mode: str = "classical",
):
    """Run the forecasting game per persistence cell and fit the
    error-revision regression.

    `agent` is either one Forecaster used everywhere or a callable
    rho -> Forecaster for agents parameterized by the cell. Returns
    (results by rho, panels by rho). Test realizations depend only on
    (master_seed, rho, split, series), so every forecaster and prompt
    variant sees identical series.
    """
    results: dict[float, RegressionResult] = {}
    panels: dict[float, ForecastPanel] = {}
    for rho in rhos:
        cell_agent = agent(rho) if callable(agent) else agent
        config = Ar1Config(
            rho=rho, sigma=sigma, mean=mean, history_len=history_len,
            rounds=rounds, seed=master_seed,
        )
        sessions = []
        for series in range(sessions_per_cell):
            stream = series_stream_id(rho, split, series)
            sessions.append(
                run_session(config, cell_agent, rng=stream_rng(master_seed, stream))
            )
        panel = build_forecast_panel(sessions)
        panels[rho] = panel
        results[rho] = error_revision_regression(panel, se_mode=se_mode)
    return results, panels


@dataclass(frozen=True)
class SeriesExperimentConfig:
    """Everything the controlled experiment needs, in one place."""

    rhos: tuple = DEFAULT_RHOS
    master_seed: int = DEFAULT_MASTER_SEED
    sigma: float = 20.0
    mean: float = 0.0
    history_len: int = 40
    rounds: int = 40
    sessions_per_cell: int = 32
    theta: float = 0.5
    feature_window: int = 40
    hidden_width: int = 64
    lora_rank: int = 8
    lora_alpha: float | None = None
    net_seed: int = 11
    lora_seed: int = 21
    pretrain: TrainConfig = field(
        default_factory=lambda: TrainConfig(
            learning_rate=0.03, batch_size=64, max_epochs=60, patience=15,
            eval_every=480, seed=3, momentum=0.9,
        )
    )
    sft: TrainConfig = field(
        default_factory=lambda: TrainConfig(
            learning_rate=0.03, batch_size=64, max_epochs=60, patience=15,
            eval_every=480, seed=5, momentum=0.9,
        )
    )


@dataclass
class SeriesExperimentResult:
    base_results: dict
    sft_results: dict
    base_panels: dict
    sft_panels: dict
    pretrain_report: TrainReport
    sft_report: TrainReport
    base_net: object
    merged_net: object
    normalizer: InputNormalizer


def _series_training_sets(cfg: SeriesExperimentConfig, plan: SplitPlan):
    """Instruction sets for both stages, featurized.

    The extrapolative (pretraining) stage reuses the train/val realizations
    with overreacting targets; the rational stage is the instruction set
    proper. Test realizations are never touched here.
    """
    rational = build_ar1_instruction_set(
        plan, rhos=cfg.rhos, master_seed=cfg.master_seed, sigma=cfg.sigma,
        mean=cfg.mean, history_len=cfg.history_len, rounds=cfg.rounds,
    )
    biased = {"train": [], "val": []}
    for split in ("train", "val"):
        for ex in rational[split]:
            window = extract_window(ex.prompt_text)
            target = extrapolative_target_text(
                ex.meta["rho"], window, cfg.theta, cfg.mean
            )
            biased[split].append(
                InstructionExample(
                    messages=ex.messages[:-1] + [{"role": "assistant", "content": target}],
                    meta=dict(ex.meta),
                )
            )

    def matrices(examples):
        return series_examples_to_matrices(examples, cfg.feature_window)

    return (
        {split: matrices(biased[split]) for split in ("train", "val")},
        {split: matrices(rational[split]) for split in ("train", "val")},
        rational,
    )


def run_series_experiment(
    cfg: SeriesExperimentConfig | None = None,
    plan: SplitPlan | None = None,
) -> SeriesExperimentResult:
    """Pretrain-bias -> diagnose -> LoRA SFT -> re-diagnose, per cell."""
    cfg = cfg or SeriesExperimentConfig()
    plan = plan or SplitPlan()
    biased_xy, rational_xy, _ = _series_training_sets(cfg, plan)

    normalizer = InputNormalizer.fit(*biased_xy["train"])

    def norm_xy(xy):
        X, Y = xy
        return normalizer.normalize_x(X), normalizer.normalize_y(Y)

    base = init_dense(
        [cfg.feature_window, cfg.hidden_width, cfg.hidden_width, 2], seed=cfg.net_seed
    )
    base, pretrain_report = train_dense(
        base, norm_xy(biased_xy["train"]), norm_xy(biased_xy["val"]), cfg.pretrain
    )

    base_results, base_panels = evaluate_agent_on_cells(
        NetAgent(base, normalizer),
        rhos=cfg.rhos, master_seed=cfg.master_seed,
        sessions_per_cell=cfg.sessions_per_cell, sigma=cfg.sigma, mean=cfg.mean,
        history_len=cfg.history_len, rounds=cfg.rounds,
    )

    adapted = attach_lora(base, rank=cfg.lora_rank, alpha=cfg.lora_alpha, seed=cfg.lora_seed)
    adapted, sft_report = train_sft(
        adapted, norm_xy(rational_xy["train"]), norm_xy(rational_xy["val"]), cfg.sft
    )
    merged = merge_lora(adapted)

    sft_results, sft_panels = evaluate_agent_on_cells(
        NetAgent(merged, normalizer),
        rhos=cfg.rhos, master_seed=cfg.master_seed,
        sessions_per_cell=cfg.sessions_per_cell, sigma=cfg.sigma, mean=cfg.mean,
        history_len=cfg.history_len, rounds=cfg.rounds,
    )

    return SeriesExperimentResult(
        base_results=base_results,
        sft_results=sft_results,
        base_panels=base_panels,
        sft_panels=sft_panels,
        pretrain_report=pretrain_report,
        sft_report=sft_report,
        base_net=base,
        merged_net=merged,
        normalizer=normalizer,
    )


@dataclass(frozen=True)
class StockExperimentConfig:
    n_firms: int = 500
    n_months: int = 120
    phi: float = -0.1
    vol: float = 0.08
    master_seed: int = DEFAULT_MASTER_SEED
    hidden_width: int = 32
    lora_rank: int = 8
    lora_alpha: float | None = None
    net_seed: int = 11
    lora_seed: int = 21
    window_len: int = 12
    pretrain: TrainConfig = field(
        default_factory=lambda: TrainConfig(
            learning_rate=0.05, batch_size=64, max_epochs=40, patience=10,
            eval_every=200, seed=3, momentum=0.9,
        )
    )
    sft: TrainConfig = field(
        default_factory=lambda: TrainConfig(
            learning_rate=0.01, batch_size=64, max_epochs=60, patience=10,
            eval_every=200, seed=3, momentum=0.9,
        )
    )

    def default_plan(self) -> SplitPlan:
        """Temporal splits scaled to the synthetic panel: 60% train, 20%
        val, 20% test of the simulated months."""
        from .datasets import MonthRange, month_index, month_label

        start = month_index("2001-01")
        train_end = start + int(self.n_months * 0.6) - 1
        val_end = start + int(self.n_months * 0.8) - 1
        end = start + self.n_months - 1
        return SplitPlan(
            stock_train=MonthRange(month_label(start), month_label(train_end)),
            stock_val=MonthRange(month_label(train_end + 1), month_label(val_end)),
            stock_test=MonthRange(month_label(val_end + 1), month_label(end)),
        )


@dataclass
class StockExperimentResult:
    base_result: object
    sft_result: object
    base_forecasts: np.ndarray
    sft_forecasts: np.ndarray
    test_rows: list
    pretrain_report: TrainReport
    sft_report: TrainReport
    base_net: object
    merged_net: object
    normalizer: InputNormalizer
    splits: dict


def stock_panel_regression(forecasts, rows: list[PromptRow], spec: PanelSpec | None = None):
    """Fit the forecast-on-lags panel regression for the given rows."""
    X, _, firms, months = rows_to_matrices(rows)
    spec = spec or PanelSpec()
    return panel_fe_regression(np.asarray(forecasts), X, firms, months, spec)


def run_stock_experiment(
    cfg: StockExperimentConfig | None = None,
    plan: SplitPlan | None = None,
    panel=None,
) -> StockExperimentResult:
    """Momentum pretraining -> diagnose -> realized-return SFT -> re-diagnose.

    `panel` (a ReturnsPanel) overrides the synthetic default so the same
    driver runs on user-supplied return data.
    """
    cfg = cfg or StockExperimentConfig()
    plan = plan or cfg.default_plan()
    if panel is None:
        panel = synth_reversal_panel(
            cfg.n_firms, cfg.n_months, cfg.phi, cfg.vol, cfg.master_seed
        )
    rows = build_windows(panel, window_len=cfg.window_len)
    splits, _ = temporal_split(rows, plan)
    for split in ("train", "val", "test"):
        if not splits[split]:
            raise ConfigurationError(f"stock split {split!r} is empty under this plan")

    loadings = MOMENTUM_LOADINGS[: cfg.window_len]

    def matrices(rows_split, kind):
        X, y, _, _ = rows_to_matrices(rows_split)
        target = (X @ loadings)[:, None] if kind == "momentum" else y[:, None]
        return X, target

    Xtr, Ytr = matrices(splits["train"], "momentum")
    Xva, Yva = matrices(splits["val"], "momentum")
    normalizer = InputNormalizer.fit(Xtr, Ytr)

    def norm_xy(X, Y):
        return normalizer.normalize_x(X), normalizer.normalize_y(Y)

    base = init_dense(
        [cfg.window_len, cfg.hidden_width, cfg.hidden_width, 1], seed=cfg.net_seed
    )
    base, pretrain_report = train_dense(
        base, norm_xy(Xtr, Ytr), norm_xy(Xva, Yva), cfg.pretrain
    )

    def forecast_rows(net, rows_split):
        X, _, _, _ = rows_to_matrices(rows_split)
        out = normalizer.denormalize_y(forward_batch(net, normalizer.normalize_x(X)))
        return out[:, 0]

    base_forecasts = forecast_rows(base, splits["test"])
    base_result = stock_panel_regression(base_forecasts, splits["test"])

    Xtr2, Ytr2 = matrices(splits["train"], "realized")
    Xva2, Yva2 = matrices(splits["val"], "realized")
    adapted = attach_lora(base, rank=cfg.lora_rank, alpha=cfg.lora_alpha, seed=cfg.lora_seed)
    adapted, sft_report = train_sft(
        adapted, norm_xy(Xtr2, Ytr2), norm_xy(Xva2, Yva2), cfg.sft
    )
    merged = merge_lora(adapted)

    sft_forecasts = forecast_rows(merged, splits["test"])
    sft_result = stock_panel_regression(sft_forecasts, splits["test"])

    return StockExperimentResult(
        base_result=base_result,
        sft_result=sft_result,
        base_forecasts=base_forecasts,
        sft_forecasts=sft_forecasts,
        test_rows=splits["test"],
        pretrain_report=pretrain_report,
        sft_report=sft_report,
        base_net=base,
        merged_net=merged,
        normalizer=normalizer,
        splits=splits,
    )
