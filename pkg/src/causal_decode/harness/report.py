"""CSV / JSON / plot-series emission from run records (or their persisted JSON)."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable

from ..metrics import POPE_SPLITS
from .runner import RunRecord

METRIC_COLUMNS = ("source", "metric", "value")
SWEEP_COLUMNS = ("alpha", "source", "metric", "value")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _split_rank(split: str):
    return (POPE_SPLITS.index(split) if split in POPE_SPLITS else len(POPE_SPLITS), split)


def flatten_metrics(record: dict) -> list[tuple[str, str, object]]:
    """(source, metric, value) rows in a fixed order."""
    rows = []
    ci = record.get("bootstrap", {}).get("chair_i", {}).get("per_source", {})
    metrics = record["metrics"]
    order = [t for t in record.get("config", {}).get("sources", []) if t in metrics]
    order += [t for t in metrics if t not in order]
    for source in order:
        m = metrics[source]
        chair = m.get("chair")
        if chair:
            for key in ("chair_s", "chair_i", "chair_s_pct", "chair_i_pct", "n_captions",
                        "n_mentions", "n_hallucinated_mentions", "n_hallucinated_captions",
                        "no_mentions"):
                rows.append((source, key, chair[key]))
            if source in ci:
                rows.append((source, "chair_i_ci_lo", ci[source][0]))
                rows.append((source, "chair_i_ci_hi", ci[source][1]))
        pope = m.get("pope") or {}
        for split in sorted(pope, key=_split_rank):
            rep = pope[split]
            for key in ("accuracy", "precision", "recall", "f1", "yes_ratio",
                        "tp", "fp", "fn", "tn", "n_probes"):
                rows.append((source, f"pope_{split}_{key}", rep.get(key)))
        if "divergence" in m:
            rows.append((source, "divergence", m["divergence"]))
    return rows


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def metrics_csv(record: dict) -> str:
    return _csv_text(METRIC_COLUMNS, flatten_metrics(record))


def sweep_csv(records: list[dict]) -> str:
    rows = []
    for rec in records:
        alpha = float(rec["config"]["fusion"]["alpha"])
        rows += [(alpha, *r) for r in flatten_metrics(rec)]
    return _csv_text(SWEEP_COLUMNS, rows)


def alpha_curve_csv(records: list[dict]) -> str:
    """Wide, plot-ready alpha curve: one row per (alpha, source)."""
    rows = []
    for rec in records:
        alpha = float(rec["config"]["fusion"]["alpha"])
        for source, m in rec["metrics"].items():
            chair = m.get("chair") or {}
            rows.append((alpha, source, chair.get("chair_i"), chair.get("chair_s"),
                         m.get("divergence")))
    return _csv_text(("alpha", "source", "chair_i", "chair_s", "divergence"), rows)


def mc_convergence_csv(record: dict) -> str:
    return _csv_text(("n_samples", "rmse", "max_abs"),
                     [(r["n_samples"], r["rmse"], r["max_abs"]) for r in record["mc_convergence"]])


def captions_jsonl(record: dict) -> str:
    return "".join(json.dumps(c, sort_keys=True) + "\n" for c in record["captions"])


def _as_dict(r) -> dict:
    return r.to_dict() if isinstance(r, RunRecord) else r


def emit_report(records: Iterable, out_dir: str | Path) -> list[Path]:
    """Write run.json / metrics.csv / captions.jsonl (one record) or sweep files (several)."""
    records = [_as_dict(r) for r in records]
    if not records:
        raise ValueError("no records to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name: str, text: str):
        p = out / name
        p.write_text(text)
        written.append(p)

    if len(records) == 1:
        rec = records[0]
        put("run.json", json.dumps(rec, indent=1))
        put("metrics.csv", metrics_csv(rec))
        put("captions.jsonl", captions_jsonl(rec))
        if rec.get("mc_convergence"):
            put("mc_convergence.csv", mc_convergence_csv(rec))
    else:
        for i, rec in enumerate(records):
            put(f"run_{i:03d}.json", json.dumps(rec, indent=1))
        put("sweep.csv", sweep_csv(records))
        put("alpha_curve.csv", alpha_curve_csv(records))
    return written


def load_records(paths: Iterable[str | Path]) -> list[dict]:
    return [json.loads(Path(p).read_text()) for p in paths]
