"""Batch experiment driver.

Runs a seeded (team size x strategy x trial) matrix of simulated trials,
writes one CSV/JSON pair per trial plus aggregate tables, and renders
Fig-style SVG charts of baseline-minus-strategy metric differences against
edge density.  Outputs are byte-deterministic for a fixed configuration.
"""

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np

from .metrics import nmse
from .scenario import ScenarioConfig, run_trial

BASELINE = "none"


class ConfigError(ValueError):
    """The experiment configuration file is invalid."""


@dataclass
class ExperimentMatrix:
    team_sizes: list
    strategies: list
    trials_per_cell: int
    base_seed: int
    template: ScenarioConfig

    def validate(self):
        if self.trials_per_cell < 1:
            raise ConfigError("trials_per_cell must be at least 1")
        if not self.team_sizes:
            raise ConfigError("team_sizes must not be empty")
        if not self.strategies:
            raise ConfigError("strategies must not be empty")
        for s in self.strategies:
            rule = _rule_for(s, self.template.fusion_rule)
            replace(self.template, strategy=s, fusion_rule=rule).validate()
        return self


def _rule_for(strategy: str, default_rule: str) -> str:
    if strategy in ScenarioConfig.MISDP_STRATEGIES:
        return "gmf" if strategy.endswith("gmc") else "amf"
    return default_rule


def trial_config(matrix: ExperimentMatrix, size, strategy, trial) -> ScenarioConfig:
    """Seeds are base_seed + trial index, so trials pair across strategies."""
    return replace(
        matrix.template,
        n=size,
        strategy=strategy,
        fusion_rule=_rule_for(strategy, matrix.template.fusion_rule),
        seed=matrix.base_seed + trial,
    )


def _trial_name(size, strategy, trial):
    return f"n{size:02d}_{strategy}_t{trial:03d}"


def _run_one(task):
    cfg, trial_dir, name = task
    try:
        log = run_trial(cfg)
    except Exception as exc:  # recorded; the matrix keeps going
        return {"name": name, "error": f"{type(exc).__name__}: {exc}"}
    log.to_csv(os.path.join(trial_dir, name + ".csv"))
    log.events_to_json(os.path.join(trial_dir, name + ".events.json"))
    truth = log.column("n_true")
    est = log.column("est_mean")
    record = {
        "name": name,
        "ospa": float(log.column("ospa_mean").mean()) if log.rows else math.nan,
        "nmse": float(nmse(est, truth)) if truth.any() else math.nan,
        "mean_density": float(log.column("edge_density").mean())
        if log.rows
        else math.nan,
        "final_density": float(log.column("edge_density")[-1])
        if log.rows
        else math.nan,
    }
    return record


def run_matrix(matrix: ExperimentMatrix, out_dir, workers: int = 1):
    """Execute the matrix and write trials/, aggregate.csv and
    density_bins.csv under ``out_dir``.  Returns a report dict."""
    matrix.validate()
    trial_dir = os.path.join(out_dir, "trials")
    os.makedirs(trial_dir, exist_ok=True)
    tasks = []
    keys = []
    for size in matrix.team_sizes:
        for strategy in matrix.strategies:
            for t in range(matrix.trials_per_cell):
                cfg = trial_config(matrix, size, strategy, t)
                name = _trial_name(size, strategy, t)
                tasks.append((cfg, trial_dir, name))
                keys.append((size, strategy, t))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_one, tasks))
    else:
        outcomes = [_run_one(t) for t in tasks]
    cells = {}
    for (size, strategy, t), outcome in zip(keys, outcomes):
        cell = cells.setdefault((size, strategy), {"trials": {}, "errors": {}})
        if "error" in outcome:
            cell["errors"][t] = outcome["error"]
        else:
            cell["trials"][t] = outcome
    report = {"cells": cells, "failed_cells": []}
    for key, cell in sorted(cells.items()):
        if not cell["trials"]:
            report["failed_cells"].append(key)
    _write_aggregates(matrix, cells, out_dir)
    _print_summary(matrix, cells, report)
    return report


def _cell_stats(cell):
    vals = cell["trials"]
    ospa = np.array([vals[t]["ospa"] for t in sorted(vals)])
    nm = np.array([vals[t]["nmse"] for t in sorted(vals)])
    dens = np.array([vals[t]["mean_density"] for t in sorted(vals)])
    fin = np.array([vals[t]["final_density"] for t in sorted(vals)])
    return ospa, nm, dens, fin


def _paired_diffs(cells, size, strategy, metric):
    """baseline-minus-strategy values for trial indices present in both."""
    base = cells.get((size, BASELINE))
    cell = cells.get((size, strategy))
    if base is None or cell is None:
        return np.zeros(0)
    shared = sorted(set(base["trials"]) & set(cell["trials"]))
    return np.array(
        [base["trials"][t][metric] - cell["trials"][t][metric] for t in shared]
    )


AGGREGATE_COLUMNS = [
    "size",
    "strategy",
    "trials",
    "failures",
    "ospa_mean",
    "ospa_var",
    "nmse_mean",
    "nmse_var",
    "mean_edge_density",
    "final_edge_density",
    "diff_ospa_mean",
    "diff_nmse_mean",
    "norm_diff_ospa",
    "norm_diff_nmse",
]

DENSITY_COLUMNS = [
    "strategy",
    "density_bin",
    "trials",
    "diff_ospa_mean",
    "diff_nmse_mean",
    "norm_diff_ospa",
    "norm_diff_nmse",
]


def _write_aggregates(matrix, cells, out_dir):
    rows = []
    diff_table = {}
    for size in matrix.team_sizes:
        for strategy in matrix.strategies:
            cell = cells.get((size, strategy))
            if cell is None:
                continue
            ospa, nm, dens, fin = _cell_stats(cell)
            d_ospa = _paired_diffs(cells, size, strategy, "ospa")
            d_nmse = _paired_diffs(cells, size, strategy, "nmse")
            diff_table[(size, strategy)] = (
                float(d_ospa.mean()) if d_ospa.size else math.nan,
                float(d_nmse.mean()) if d_nmse.size else math.nan,
            )
            rows.append(
                {
                    "size": size,
                    "strategy": strategy,
                    "trials": len(cell["trials"]),
                    "failures": len(cell["errors"]),
                    "ospa_mean": _mean(ospa),
                    "ospa_var": _var(ospa),
                    "nmse_mean": _mean(nm),
                    "nmse_var": _var(nm),
                    "mean_edge_density": _mean(dens),
                    "final_edge_density": _mean(fin),
                    "diff_ospa_mean": diff_table[(size, strategy)][0],
                    "diff_nmse_mean": diff_table[(size, strategy)][1],
                }
            )
    # normalization: per size and metric, divide by the largest |mean diff|
    for row in rows:
        size = row["size"]
        scale_o = max(
            (abs(diff_table[(size, s)][0]) for s in matrix.strategies
             if (size, s) in diff_table and not math.isnan(diff_table[(size, s)][0])),
            default=0.0,
        )
        scale_n = max(
            (abs(diff_table[(size, s)][1]) for s in matrix.strategies
             if (size, s) in diff_table and not math.isnan(diff_table[(size, s)][1])),
            default=0.0,
        )
        row["norm_diff_ospa"] = (
            row["diff_ospa_mean"] / scale_o if scale_o > 0 else math.nan
        )
        row["norm_diff_nmse"] = (
            row["diff_nmse_mean"] / scale_n if scale_n > 0 else math.nan
        )
    _write_csv(
        os.path.join(out_dir, "aggregate.csv"), AGGREGATE_COLUMNS, rows
    )
    _write_density_bins(matrix, cells, out_dir)


def _write_density_bins(matrix, cells, out_dir):
    """Fig-style table: sizes aggregated, trials binned by mean edge density
    in 10% steps, baseline-minus-strategy differences per (strategy, bin)."""
    bins = {}
    for size in matrix.team_sizes:
        base = cells.get((size, BASELINE))
        if base is None:
            continue
        for strategy in matrix.strategies:
            if strategy == BASELINE:
                continue
            cell = cells.get((size, strategy))
            if cell is None:
                continue
            shared = sorted(set(base["trials"]) & set(cell["trials"]))
            for t in shared:
                b = cell["trials"][t]
                bin_idx = min(int(b["mean_density"] * 10), 9)
                entry = bins.setdefault((strategy, bin_idx), {"o": [], "n": []})
                entry["o"].append(
                    base["trials"][t]["ospa"] - b["ospa"]
                )
                entry["n"].append(
                    base["trials"][t]["nmse"] - b["nmse"]
                )
    rows = []
    means = {}
    for (strategy, bin_idx), entry in sorted(bins.items()):
        o = np.array(entry["o"])
        nm = np.array(entry["n"])
        means[(strategy, bin_idx)] = (_mean(o), _mean(nm))
        rows.append(
            {
                "strategy": strategy,
                "density_bin": bin_idx / 10.0,
                "trials": o.size,
                "diff_ospa_mean": _mean(o),
                "diff_nmse_mean": _mean(nm),
            }
        )
    scale_o = max(
        (abs(v[0]) for v in means.values() if not math.isnan(v[0])), default=0.0
    )
    scale_n = max(
        (abs(v[1]) for v in means.values() if not math.isnan(v[1])), default=0.0
    )
    for row in rows:
        row["norm_diff_ospa"] = (
            row["diff_ospa_mean"] / scale_o if scale_o > 0 else math.nan
        )
        row["norm_diff_nmse"] = (
            row["diff_nmse_mean"] / scale_n if scale_n > 0 else math.nan
        )
    _write_csv(os.path.join(out_dir, "density_bins.csv"), DENSITY_COLUMNS, rows)


def _mean(a):
    return float(a.mean()) if a.size else math.nan


def _var(a):
    return float(a.var()) if a.size else math.nan


def _fmt_cell(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_csv(path, columns, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt_cell(row[c]) for c in columns) + "\n")


def _print_summary(matrix, cells, report):
    for (size, strategy), cell in sorted(cells.items()):
        ospa, nm, dens, _ = _cell_stats(cell)
        print(
            f"n={size} strategy={strategy}: trials={len(cell['trials'])} "
            f"failures={len(cell['errors'])} ospa={_mean(ospa):.4f} "
            f"nmse={_mean(nm):.4f} density={_mean(dens):.3f}"
        )
    for key in report["failed_cells"]:
        print(f"cell {key} failed entirely")


# ---------------------------------------------------------------------------
# fig-style plots
# ---------------------------------------------------------------------------

def plot_aggregates(in_dir, out_dir):
    """Render OSPA/NMSE normalized-difference-vs-density charts as SVG.

    Reads density_bins.csv from ``in_dir``; output bytes are deterministic
    for identical inputs.  Raises ConfigError naming any missing column.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = os.path.join(in_dir, "density_bins.csv")
    if not os.path.exists(path):
        raise ConfigError(f"missing aggregate file {path}")
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    for needed in DENSITY_COLUMNS:
        if needed not in header:
            raise ConfigError(f"aggregate file lacks column {needed!r}")
    if not rows:
        raise ConfigError("aggregate file holds no data rows")
    idx = {c: header.index(c) for c in header}
    series = {}
    for row in rows:
        strategy = row[idx["strategy"]]
        series.setdefault(strategy, []).append(
            (
                float(row[idx["density_bin"]]),
                float(row[idx["norm_diff_ospa"]]),
                float(row[idx["norm_diff_nmse"]]),
            )
        )
    os.makedirs(out_dir, exist_ok=True)
    plt.rcParams["svg.hashsalt"] = "resilient-tracking"
    written = []
    for metric, col, label in (
        ("ospa", 1, "normalized OSPA difference (baseline - strategy)"),
        ("nmse", 2, "normalized NMSE difference (baseline - strategy)"),
    ):
        fig, ax = plt.subplots(figsize=(6, 4))
        for strategy in sorted(series):
            pts = sorted(series[strategy])
            xs = [p[0] + 0.05 for p in pts]
            ys = [p[col] for p in pts]
            ax.plot(xs, ys, marker="o", label=strategy)
        ax.set_xlabel("edge density")
        ax.set_ylabel(label)
        ax.set_ylim(-1.1, 1.1)
        ax.axhline(0.0, color="gray", linewidth=0.5)
        ax.legend(fontsize=8)
        out_path = os.path.join(out_dir, f"{metric}_diff.svg")
        fig.savefig(out_path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(out_path)
    return written


# ---------------------------------------------------------------------------
# configuration file
# ---------------------------------------------------------------------------

_MATRIX_KEYS = {"team_sizes", "strategies", "trials_per_cell", "base_seed"}
_TUPLE_KEYS = {
    "domain_min": 2,
    "domain_max": 2,
    "box_min": 3,
    "box_max": 3,
    "process_noise": 4,
}


def load_experiment_config(path) -> ExperimentMatrix:
    """Parse the flat ``key = value`` experiment file (see README for the
    schema).  Lists are comma separated; '#' starts a comment."""
    scenario_fields = {f.name: f.type for f in fields(ScenarioConfig)}
    raw = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in text.split("=", 1))
            if key in raw:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            raw[key] = value
    matrix_kwargs = {
        "team_sizes": [5],
        "strategies": ["none"],
        "trials_per_cell": 1,
        "base_seed": 0,
    }
    scenario_kwargs = {}
    for key, value in raw.items():
        try:
            if key == "team_sizes":
                matrix_kwargs[key] = [int(v) for v in value.split(",")]
            elif key == "strategies":
                matrix_kwargs[key] = [v.strip() for v in value.split(",")]
            elif key in _MATRIX_KEYS:
                matrix_kwargs[key] = int(value)
            elif key in _TUPLE_KEYS:
                parts = tuple(float(v) for v in value.split(","))
                if len(parts) != _TUPLE_KEYS[key]:
                    raise ConfigError(
                        f"{key} needs {_TUPLE_KEYS[key]} comma-separated values"
                    )
                scenario_kwargs[key] = parts
            elif key == "fusion_rule" or key == "strategy":
                scenario_kwargs[key] = value
            elif key in scenario_fields:
                current = getattr(ScenarioConfig(), key)
                caster = int if isinstance(current, int) else float
                scenario_kwargs[key] = caster(value)
            else:
                raise ConfigError(f"unknown configuration key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
    template = ScenarioConfig(**scenario_kwargs)
    return ExperimentMatrix(template=template, **matrix_kwargs).validate()
