"""Query-based black-box attacks on image retrieval."""

import json

from ._core import (
    config_schema,
    count_loss,
    default_config_json,
    drr_at_1,
    gen_synthetic_dataset,
    kendall_tau,
    load_dataset,
    quantize_to_grid,
    relevance_loss,
    relevance_weights,
    run_experiment_json,
    save_dataset,
    spearman,
)

__all__ = [
    "config_schema",
    "count_loss",
    "default_config",
    "drr_at_1",
    "gen_synthetic_dataset",
    "kendall_tau",
    "load_dataset",
    "quantize_to_grid",
    "relevance_loss",
    "relevance_weights",
    "run_experiment",
    "save_dataset",
    "spearman",
]


def default_config():
    """Default experiment config as a dict."""
    return json.loads(default_config_json())


def run_experiment(config, out_dir=None):
    """Runs one seed of the experiment described by `config` (a dict).

    Returns (summary_rows, records) as lists of dicts; with `out_dir` the
    summary.csv / results.jsonl / report.json files are written there too.
    """
    summary_csv, lines = run_experiment_json(json.dumps(config), out_dir or "")
    header, *rows = summary_csv.strip().splitlines()
    keys = header.split(",")
    summary = [dict(zip(keys, row.split(","))) for row in rows]
    return summary, [json.loads(line) for line in lines]
