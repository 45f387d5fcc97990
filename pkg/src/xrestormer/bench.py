"""Dataset manifests, degradation runs, evaluation and benchmark reports."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import degradations as deg
from .errors import ContractError
from .images import read_png, write_png
from .metrics import MetricConfig, metric_config_for, psnr, ssim
from .model import ModelState, restore
from .tensor import no_grad

log = logging.getLogger(__name__)


class DataError(Exception):
    """Unusable input data (missing files, empty directories, bad manifests)."""


# -- manifests --------------------------------------------------------------------------
@dataclass
class ManifestEntry:
    clean: str
    degraded: str | None = None
    spec: str | None = None


@dataclass
class DatasetManifest:
    name: str
    task: str
    entries: list[ManifestEntry]
    root: Path = field(default=Path("."), compare=False)

    def resolve(self, rel: str) -> Path:
        return (self.root / rel).resolve()

    def to_json(self) -> str:
        body = {"name": self.name, "task": self.task,
                "entries": [asdict(e) for e in sorted(self.entries, key=lambda e: e.clean)]}
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> DatasetManifest:
        path = Path(path)
        try:
            body = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from exc
        m = cls(body["name"], body["task"], [ManifestEntry(**e) for e in body["entries"]], path.parent)
        for e in m.entries:
            for rel in (e.clean, e.degraded):
                if rel is not None and not m.resolve(rel).exists():
                    raise DataError(f"{path}: referenced file {rel} does not exist")
            if e.spec is not None:
                deg.spec_from_text(e.spec)
        return m

    def load_pair(self, entry: ManifestEntry) -> tuple[np.ndarray, np.ndarray]:
        clean = read_png(self.resolve(entry.clean))
        if entry.spec is not None:
            return clean, deg.apply(clean, deg.spec_from_text(entry.spec))
        if entry.degraded is None:
            raise DataError(f"entry {entry.clean} has neither a spec nor a degraded image")
        return clean, read_png(self.resolve(entry.degraded))


def image_seed(root_seed: int, rel_path: str) -> int:
    digest = hashlib.sha256(f"{root_seed}:{rel_path}".encode()).digest()
    return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF


def task_for_spec(spec) -> str:
    return f"sr{spec.scale}" if isinstance(spec, deg.SR) else deg.TASK_OF_SPEC[spec.tag]


def degrade_directory(input_dir, output_dir, spec_text: str, root_seed: int = 0, name: str | None = None):
    """Apply one degradation spec to every PNG under ``input_dir``.

    Each image gets its own seed derived from ``root_seed`` and its relative
    path. Writes clipped 8-bit previews under ``output_dir/degraded`` and a
    manifest embedding the exact per-image spec. Returns (manifest, errors).
    """
    input_dir, output_dir = Path(input_dir), Path(output_dir)
    base = deg.spec_from_text(spec_text)
    files = sorted(p for p in input_dir.rglob("*.png") if p.is_file())
    if not files:
        raise DataError(f"no PNG images under {input_dir}")
    output_dir.mkdir(parents=True, exist_ok=True)
    entries, errors = [], []
    for path in files:
        rel = path.relative_to(input_dir).as_posix()
        try:
            clean = read_png(path)
            spec = deg.with_seed(base, image_seed(root_seed, rel))
            out = deg.apply(clean, spec)
        except (OSError, ContractError) as exc:
            log.error("skipping %s: %s", rel, exc)
            errors.append((rel, str(exc)))
            continue
        preview = output_dir / "degraded" / rel
        write_png(preview, out)
        clean_rel = Path(_relpath(path, output_dir)).as_posix()
        entries.append(ManifestEntry(clean_rel, preview.relative_to(output_dir).as_posix(), deg.spec_to_text(spec)))
    manifest = DatasetManifest(name or input_dir.name, task_for_spec(base), entries, output_dir)
    manifest.save(output_dir / "manifest.json")
    return manifest, errors


def _relpath(path: Path, start: Path) -> str:
    import os

    return os.path.relpath(path.resolve(), start.resolve())


# -- reports ---------------------------------------------------------------------------
@dataclass
class ReportRow:
    task: str
    dataset: str
    psnr_mean: float | None
    ssim_mean: float | None
    count: int
    psnr_inf_count: int
    metric: dict
    errors: list[str] = field(default_factory=list)


@dataclass
class BenchmarkReport:
    model: str
    checkpoint_id: str
    config_hash: str
    rows: list[ReportRow]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> BenchmarkReport:
        body = json.loads(text)
        return cls(body["model"], body["checkpoint_id"], body["config_hash"],
                   [ReportRow(**r) for r in body["rows"]])

    def to_markdown(self) -> str:
        return render_table([self])


def _fmt_psnr(row: ReportRow) -> str:
    if row.psnr_mean is None:
        return "inf" if row.psnr_inf_count else "-"
    return f"{row.psnr_mean:.2f}"


def _fmt_ssim(row: ReportRow) -> str:
    return "-" if row.ssim_mean is None else f"{row.ssim_mean:.4f}"


def render_table(reports: list[BenchmarkReport]) -> str:
    """Markdown table: one row per report, one column per (task, dataset).

    Per column the best PSNR is bold and the second best underlined; ties share a mark.
    """
    columns = sorted({(r.task, r.dataset) for rep in reports for r in rep.rows})
    cells = {(i, c): None for i in range(len(reports)) for c in columns}
    for i, rep in enumerate(reports):
        for r in rep.rows:
            cells[(i, (r.task, r.dataset))] = r
    marks = {}
    for c in columns:
        scored = [(cells[(i, c)].psnr_mean, i) for i in range(len(reports))
                  if cells[(i, c)] is not None and cells[(i, c)].psnr_mean is not None]
        ranked = sorted({v for v, _ in scored}, reverse=True)
        if len(reports) > 1:
            for v, i in scored:
                if v == ranked[0]:
                    marks[(i, c)] = "**"
                elif len(ranked) > 1 and v == ranked[1]:
                    marks[(i, c)] = "u"
    header = "| Model | " + " | ".join(f"{t} / {d}" for t, d in columns) + " |"
    lines = [header, "|" + "---|" * (len(columns) + 1)]
    for i, rep in enumerate(reports):
        parts = []
        for c in columns:
            r = cells[(i, c)]
            if r is None:
                parts.append("-")
                continue
            p = _fmt_psnr(r)
            mark = marks.get((i, c))
            if mark == "**":
                p = f"**{p}**"
            elif mark == "u":
                p = f"<u>{p}</u>"
            parts.append(f"{p} / {_fmt_ssim(r)}")
        lines.append(f"| {rep.model} | " + " | ".join(parts) + " |")
    return "\n".join(lines) + "\n"


def evaluate_manifest(model: ModelState, manifest: DatasetManifest, metric: MetricConfig | None = None) -> ReportRow:
    """Restore every entry (sorted by path) and average PSNR/SSIM.

    Infinite PSNRs are counted separately and never enter the mean.
    """
    metric = metric or metric_config_for(manifest.task)
    dtype = next(iter(model.params.values())).dtype
    psnrs, ssims, errors, n_inf = [], [], [], 0
    for entry in sorted(manifest.entries, key=lambda e: e.clean):
        try:
            clean, degraded = manifest.load_pair(entry)
        except (OSError, DataError, ContractError) as exc:
            errors.append(f"{entry.clean}: {exc}")
            continue
        x = degraded.transpose(2, 0, 1)[None].astype(dtype)
        with no_grad():
            restored = restore(model, x, manifest.task).data[0].transpose(1, 2, 0).astype(np.float64)
        if restored.shape != clean.shape:
            errors.append(f"{entry.clean}: restored shape {restored.shape} != clean shape {clean.shape}")
            continue
        p = psnr(restored, clean, metric)
        if math.isinf(p):
            n_inf += 1
        else:
            psnrs.append(p)
        ssims.append(ssim(restored, clean, metric))
    return ReportRow(
        task=manifest.task,
        dataset=manifest.name,
        psnr_mean=float(np.mean(psnrs)) if psnrs else None,
        ssim_mean=float(np.mean(ssims)) if ssims else None,
        count=len(ssims),
        psnr_inf_count=n_inf,
        metric=asdict(metric),
        errors=errors,
    )


def file_id(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]
