"""CSV report tables and plot data.

Table layouts mirror the full-scale study this harness miniaturizes:
coefficient row, t-stat row in parentheses, fit statistics, N. Reference
rows carry that study's headline coefficients so desk-scale output can be
read against them; they are annotations, not expectations.
"""

from __future__ import annotations

import csv

from .econ import PanelResult, RegressionResult, descriptive_stats

# Reference values from the original full-scale experiments (a 32B-parameter
# forecaster), by persistence cell: error-revision slope and t-stat.
FULL_SCALE_ERROR_REVISION_BASE = {
    0.0: (-0.456, -19.05),
    0.2: (-0.448, -18.38),
    0.4: (-0.365, -14.35),
    0.6: (-0.362, -14.52),
    0.8: (-0.315, -12.88),
    1.0: (-0.260, -10.37),
}
FULL_SCALE_ERROR_REVISION_FINETUNED = {
    0.0: (-0.073, -1.54),
    0.2: (-0.059, -1.24),
    0.4: (-0.068, -1.47),
    0.6: (-0.045, -1.12),
    0.8: (-0.003, -0.08),
    1.0: (-0.027, -0.97),
}
# Most-recent-lag loading in the return-extrapolation regression.
FULL_SCALE_EXTRAPOLATION_BASE = (0.394, 53.92)
FULL_SCALE_EXTRAPOLATION_FINETUNED = (-0.120, -23.21)


def write_error_revision_table(
    results: dict[float, RegressionResult],
    path,
    reference: dict[float, tuple[float, float]] | None = None,
) -> None:
    """One column per persistence cell; rows b, (t), R^2, N."""
    rhos = sorted(results)
    header = [""] + [f"rho={rho:g}" for rho in rhos]
    rows = [
        ["b"] + [f"{results[r].slope:.4f}" for r in rhos],
        ["t"] + [f"({results[r].slope_t:.2f})" for r in rhos],
        ["r_squared"] + [f"{results[r].r_squared:.4f}" for r in rhos],
        ["n"] + [str(results[r].n) for r in rhos],
        ["se_mode"] + [results[r].se_mode for r in rhos],
    ]
    if reference is not None:
        rows.append(["reference_b"] + [f"{reference[r][0]:.3f}" for r in rhos])
        rows.append(["reference_t"] + [f"({reference[r][1]:.2f})" for r in rhos])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_error_revision_plot(results: dict[float, RegressionResult], path) -> None:
    """Plot-ready coefficient data: rho, b, and the 95% confidence band."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rho", "b", "ci_low", "ci_high"])
        for rho in sorted(results):
            res = results[rho]
            b, se = res.slope, res.slope_se
            writer.writerow(
                [f"{rho:g}", f"{b:.6f}", f"{b - 1.96 * se:.6f}", f"{b + 1.96 * se:.6f}"]
            )


def write_descriptives_table(panels: dict[float, object], path) -> None:
    """Per-cell forecast descriptives (one-step and lagged two-step levels)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rho", "variable", "mean", "sd", "p25", "median", "p75", "n"])
        for rho in sorted(panels):
            panel = panels[rho]
            for name, label in (("f_one", "forecast_one_step"), ("f_two_lag", "forecast_two_step_lagged")):
                stats = descriptive_stats(panel.column(name))
                writer.writerow(
                    [f"{rho:g}", label]
                    + [f"{stats[k]:.4f}" for k in ("mean", "sd", "p25", "median", "p75")]
                    + [stats["n"]]
                )


def write_extrapolation_table(
    result: PanelResult,
    path,
    reference: tuple[float, float] | None = None,
) -> None:
    """Per-lag coefficients with t-stats, fit statistics, and FE flags."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["term", "coef", "t"])
        for name, b, t in zip(result.lag_names, result.beta, result.t):
            writer.writerow([name, f"{b:.4f}", f"({t:.2f})"])
        writer.writerow(["within_r_squared", f"{result.within_r_squared:.4f}", ""])
        writer.writerow(["n", str(result.n), ""])
        writer.writerow(["unit_fe", "Yes" if result.spec.unit_fe else "No", ""])
        writer.writerow(["time_fe", "Yes" if result.spec.time_fe else "No", ""])
        writer.writerow(["cluster", result.spec.cluster, ""])
        if reference is not None:
            writer.writerow(["reference_r_lag0", f"{reference[0]:.3f}", f"({reference[1]:.2f})"])


def write_stats_table(stats_by_name: dict[str, dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variable", "mean", "sd", "p25", "median", "p75", "n"])
        for name, stats in stats_by_name.items():
            writer.writerow(
                [name]
                + [f"{stats[k]:.4f}" for k in ("mean", "sd", "p25", "median", "p75")]
                + [stats["n"]]
            )
