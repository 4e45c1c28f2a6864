"""
Run output: line-delimited records, manifest, human summary and plot-data tables
"""

import csv
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional

from jinja2 import Environment, FileSystemLoader, StrictUndefined

from app.schemas.records import RunManifest
from app.services.geometry import build_manifold
from app.services.pathspace import DiscretePath

logger = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).resolve().parent.parent / "templates"
FORMATS = ("jsonl", "json", "md", "csv")

_env = Environment(
    loader=FileSystemLoader(str(TEMPLATE_DIR)),
    undefined=StrictUndefined,
    keep_trailing_newline=True,
    trim_blocks=True,
    lstrip_blocks=True,
)


def render_summary(manifest: RunManifest) -> str:
    return _env.get_template("summary.md.j2").render(m=manifest)


def _write_csv(path: Path, header: List[str], rows: List[list]):
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def solutions_table(manifest: RunManifest) -> List[list]:
    return [
        [i, r.family, r.degree, r.action, r.morse_index, r.large_morse_index, r.index_status.value,
         r.certified, r.max_speed, r.gradient_norm, r.conormal_residual]
        for i, r in enumerate(manifest.records)
    ]


def family_max_table(manifest: RunManifest) -> List[list]:
    return [[res.family, k, value] for res in manifest.minimax for k, value in enumerate(res.family_max_log)]


def speed_table(manifest: RunManifest) -> List[list]:
    rows = []
    for i, record in enumerate(manifest.records):
        path = DiscretePath.from_record(record.path, build_manifold(record.path.manifold))
        for k, speed in enumerate(path.speeds()):
            rows.append([i, k, (k + 0.5) / path.N, float(speed), manifest.R_A, manifest.R])
    return rows


def emit_report(manifest: RunManifest, out_dir, formats=FORMATS,
                timings: Optional[Dict[str, float]] = None) -> List[Path]:
    """Write the requested outputs under out_dir and return the written paths"""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []

    if "jsonl" in formats:
        target = out / "records.jsonl"
        target.write_text("".join(r.model_dump_json() + "\n" for r in manifest.records))
        written.append(target)
    if "json" in formats:
        target = out / "manifest.json"
        target.write_text(manifest.model_dump_json(indent=2) + "\n")
        written.append(target)
    if "md" in formats:
        target = out / "summary.md"
        target.write_text(render_summary(manifest))
        written.append(target)
    if "csv" in formats:
        tables = out / "tables"
        tables.mkdir(exist_ok=True)
        _write_csv(tables / "solutions.csv",
                   ["id", "family", "degree", "action", "morse_index", "large_morse_index", "index_status",
                    "certified", "max_speed", "gradient_norm", "conormal_residual"],
                   solutions_table(manifest))
        _write_csv(tables / "family_max.csv", ["family", "round", "max_action"], family_max_table(manifest))
        _write_csv(tables / "speeds.csv", ["record", "segment", "t", "speed", "R_A", "R"], speed_table(manifest))
        written += [tables / "solutions.csv", tables / "family_max.csv", tables / "speeds.csv"]
    if timings is not None:
        target = out / "timings.json"
        target.write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")
        written.append(target)

    logger.info(f"Report for '{manifest.scenario}' written to {out} ({len(written)} files)")
    return written
