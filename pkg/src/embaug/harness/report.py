"""Text and JSON renderings of experiment, evaluation and benchmark results."""

from __future__ import annotations

import json
from pathlib import Path

from .experiment import METRICS, REPORT_SCHEMA, ExperimentReport

COLUMNS = {"accuracy": "Accuracy (%)", "kappa2": "kappa^2", "nll": "NLL"}


def _cell(metric: str, mean: float, std: float) -> str:
    if metric == "accuracy":
        return f"{100 * mean:.1f} ± {100 * std:.1f}"
    return f"{mean:.3f} ± {std:.3f}"


def format_table(report: dict) -> str:
    """Mode rows x metric columns as mean ± std."""
    rows = report["rows"]
    label_w = max([len("Method")] + [len(r["label"]) for r in rows])
    head = f"{'Method':<{label_w}}  " + "  ".join(f"{COLUMNS[m]:>16}" for m in METRICS)
    lines = [head, "-" * len(head)]
    for r in rows:
        cells = "  ".join(f"{_cell(m, r[m]['mean'], r[m]['std']):>16}" for m in METRICS)
        lines.append(f"{r['label']:<{label_w}}  {cells}")
    return "\n".join(lines) + "\n"


def format_eval(result: dict) -> str:
    lines = [f"n = {result['n']}",
             f"accuracy = {result['accuracy']:.4f}",
             f"kappa2   = {result['kappa2']:.4f}",
             f"nll      = {result['nll']:.4f}",
             "confusion (rows = truth):"]
    lines += ["  " + " ".join(f"{c:4d}" for c in row) for row in result["confusion"]]
    return "\n".join(lines) + "\n"


def format_bench(rows: list[dict]) -> str:
    lines = [f"{'variant':<8}{'d':>6}{'gen FLOPs':>14}{'ref FLOPs':>16}{'FLOP ratio':>14}{'wall ratio':>12}"]
    for r in rows:
        lines.append(f"{r['variant']:<8}{r['d']:>6}{r['generator_flops']:>14,}{r['reference_flops']:>16,}"
                     f"{r['flop_ratio']:>14,.1f}{r['wall_ratio']:>12,.1f}")
    return "\n".join(lines) + "\n"


def dump_json(obj: dict) -> str:
    return json.dumps({"schema_version": REPORT_SCHEMA, **obj}, indent=2, sort_keys=True) + "\n"


def write_experiment(report: ExperimentReport, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    js = out_dir / "report.json"
    txt = out_dir / "report.txt"
    js.write_text(report.to_json(include_timing=True))
    txt.write_text(format_table(report.to_dict(include_timing=False)))
    return [js, txt]
