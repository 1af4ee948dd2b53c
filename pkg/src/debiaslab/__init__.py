"""debiaslab: a desk-scale harness for diagnosing extrapolation bias in
forecasting agents and correcting it with low-rank adapter fine-tuning.

The package simulates the controlled forecasting experiment (AR(1)
processes, two-horizon elicitation), measures overreaction with the
error-revision regression and return extrapolation with a two-way
fixed-effects panel regression, builds instruction datasets with strict
split hygiene, trains a small dense forecaster with from-scratch LoRA
adapters, and can elicit the same forecasts from any OpenAI-compatible
endpoint through a cached, bounded-parallel client.
"""

from .agents import (
    ExtrapConfig,
    ExtrapolativeAgent,
    LlmAgent,
    NetAgent,
    RationalAgent,
    extrapolative_slope,
    parse_forecast_response,
)
from .ar1 import (
    Ar1Config,
    Ar1Session,
    ForecastPair,
    ForecastPanel,
    build_forecast_panel,
    read_panel_csv,
    run_session,
    simulate_ar1,
    stream_rng,
    write_panel_csv,
)
from .client import ChatRequest, InferenceClient, ResponseCache, cache_key
from .datasets import (
    InstructionExample,
    MonthRange,
    PromptVariant,
    SplitPlan,
    build_ar1_instruction_set,
    build_stock_instruction_set,
    export_jsonl,
    import_jsonl,
    render_prompt,
    split_guard,
)
from .econ import (
    PanelResult,
    PanelSpec,
    RegressionResult,
    cluster_robust_vcov,
    descriptive_stats,
    error_revision_regression,
    ols,
    panel_fe_regression,
    within_transform,
)
from .net import (
    AdaptedNet,
    DenseNet,
    InputNormalizer,
    LoraAdapter,
    adapter_gradients,
    attach_lora,
    forward,
    forward_batch,
    init_dense,
    load_checkpoint,
    merge_lora,
    save_checkpoint,
)
from .pipeline import (
    SeriesExperimentConfig,
    StockExperimentConfig,
    evaluate_agent_on_cells,
    run_series_experiment,
    run_stock_experiment,
)
from .returns import (
    PromptRow,
    ReturnsPanel,
    build_windows,
    load_returns_csv,
    synth_reversal_panel,
    temporal_split,
)
from .train import TrainConfig, TrainReport, train_dense, train_sft

__version__ = "0.1.0"
