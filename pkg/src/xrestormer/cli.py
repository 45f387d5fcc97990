"""Command line entry point: ``xrestormer {degrade,train,eval,param-audit,report}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import config as cfgtext
from . import degradations as deg
from .bench import BenchmarkReport, DataError, DatasetManifest, degrade_directory, evaluate_manifest, file_id, render_table
from .errors import ConfigError, ContractError, NumericError
from .images import read_png
from .model import ModelConfig, build_model, cast_model, count_parameters, load_checkpoint
from .trainer import PairedDataset, Sample, TrainConfig, train

log = logging.getLogger("xrestormer")

XRESTORMER_PARAMS = 26.06e6
RESTORMER_PARAMS = 26.13e6


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def load_configs(path: str | None, tiny: bool = False) -> tuple[ModelConfig, TrainConfig]:
    """Defaults (or the tiny preset) overridden by the [model]/[train] sections of ``path``."""
    model = ModelConfig.tiny() if tiny else ModelConfig()
    train_cfg = TrainConfig()
    if path is None:
        return model, train_cfg
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    sections = cfgtext.load_sections(text, path)
    unknown = set(sections) - {"model", "train"}
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    if "model" in sections:
        merged = {**model.to_section(), **sections["model"]}
        model = cfgtext.dataclass_from_section(ModelConfig, merged, f"{path} [model]")
    if "train" in sections:
        merged = {**train_cfg.to_section(), **sections["train"]}
        if "total_iters" in sections["train"] and "cosine_periods" not in sections["train"]:
            iters = int(sections["train"]["total_iters"])
            merged.pop("total_iters")
            base = cfgtext.dataclass_from_section(TrainConfig, {k: v for k, v in merged.items()
                                                                 if k not in ("cosine_periods",)}, f"{path} [train]")
            train_cfg = base.compressed(iters)
        else:
            train_cfg = cfgtext.dataclass_from_section(TrainConfig, merged, f"{path} [train]")
    return model, train_cfg


def _cmd_degrade(args) -> int:
    manifest, errors = degrade_directory(args.input, args.output, args.spec, args.seed, args.name)
    print(f"wrote {len(manifest.entries)} images, {len(errors)} skipped -> {Path(args.output) / 'manifest.json'}")
    for rel, msg in errors:
        print(f"  skipped {rel}: {msg}", file=sys.stderr)
    return 0


def _dataset_from_manifest(manifest: DatasetManifest, task: str) -> PairedDataset:
    samples = []
    for e in sorted(manifest.entries, key=lambda e: e.clean):
        clean = read_png(manifest.resolve(e.clean))
        if task == "all-in-one":
            samples.append(Sample(clean))
        elif e.spec is not None:
            samples.append(Sample(clean, None, deg.spec_from_text(e.spec)))
        else:
            samples.append(Sample(clean, read_png(manifest.resolve(e.degraded))))
    return PairedDataset(samples, task)


def _cmd_train(args) -> int:
    model_cfg, train_cfg = load_configs(args.config, args.tiny)
    overrides = {}
    if args.iters is not None:
        train_cfg = train_cfg.compressed(args.iters)
    for key in ("patch", "batch", "seed", "checkpoint_every", "log_every"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    if overrides:
        train_cfg = dataclasses.replace(train_cfg, **overrides)
    if args.task is not None:
        model_cfg = dataclasses.replace(model_cfg, task_mode=args.task)
    if args.no_ssab:
        model_cfg = dataclasses.replace(model_cfg, ssab_enabled=False)
    if args.print_config:
        print(cfgtext.dump_sections({"model": model_cfg.to_section(), "train": train_cfg.to_section()}), end="")
        return 0
    if args.manifest is None or args.out is None:
        raise ConfigError("train needs --manifest and --out (or --print-config)")
    manifest = DatasetManifest.load(args.manifest)
    task = args.task or manifest.task
    model_cfg = dataclasses.replace(model_cfg, task_mode=task)
    dataset = _dataset_from_manifest(manifest, task)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.xrck"
    model = build_model(model_cfg, seed=train_cfg.seed)
    if args.checkpoint_every is None and train_cfg.checkpoint_every == 0:
        train_cfg = dataclasses.replace(train_cfg, checkpoint_every=max(1, train_cfg.total_iters // 10))
    model, trace = train(model, dataset, train_cfg, trace_path=out / "loss.csv", checkpoint_path=ckpt,
                         resume=args.resume, stop_at=args.stop_at)
    if trace:
        log.info("final loss %.5f after %d iterations", trace[-1][2], model.step)
    print(f"trained to iteration {model.step}; checkpoint {ckpt}; trace {out / 'loss.csv'}")
    return 0


def _cmd_eval(args) -> int:
    model, sections, _ = load_checkpoint(args.checkpoint)
    model = cast_model(model, args.dtype)
    config_hash = cfgtext.text_hash(cfgtext.dump_sections({"model": sections["model"]}))
    rows = []
    for path in args.manifest:
        manifest = DatasetManifest.load(path)
        row = evaluate_manifest(model, manifest)
        for err in row.errors:
            print(f"  excluded {err}", file=sys.stderr)
        rows.append(row)
    report = BenchmarkReport(args.model_name or Path(args.checkpoint).stem, file_id(args.checkpoint), config_hash, rows)
    text = report.to_json()
    if args.out_json:
        Path(args.out_json).write_text(text)
    md = report.to_markdown()
    if args.out_md:
        Path(args.out_md).write_text(md)
    print(md, end="")
    return 0


def _cmd_param_audit(args) -> int:
    model_cfg, _ = load_configs(args.config, args.tiny)
    if args.no_ssab:
        model_cfg = dataclasses.replace(model_cfg, ssab_enabled=False)
    closed = count_parameters(model_cfg)
    enumerated = build_model(model_cfg, init=False).num_parameters()
    print(f"closed-form parameters : {closed:,} ({closed / 1e6:.2f}M)")
    print(f"enumerated parameters  : {enumerated:,}")
    if not args.tiny and args.config is None:
        target = RESTORMER_PARAMS if args.no_ssab else XRESTORMER_PARAMS
        rel = closed / target - 1.0
        print(f"reference {target / 1e6:.2f}M, deviation {100 * rel:+.2f}% (band +/-3%)")
    return 0 if closed == enumerated else 3


def _cmd_report(args) -> int:
    reports = []
    for path in args.reports:
        try:
            reports.append(BenchmarkReport.from_json(Path(path).read_text()))
        except (OSError, ValueError, KeyError) as exc:
            raise DataError(f"cannot read report {path}: {exc}") from exc
    md = render_table(reports)
    if args.out:
        Path(args.out).write_text(md)
    print(md, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="xrestormer", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("degrade", help="degrade a directory of PNGs and write a manifest")
    d.add_argument("--input", required=True)
    d.add_argument("--output", required=True)
    d.add_argument("--spec", required=True, help='e.g. "noise sigma=50" or "sr scale=4"')
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--name")
    d.set_defaults(func=_cmd_degrade)

    t = sub.add_parser("train", help="train on a manifest")
    t.add_argument("--manifest")
    t.add_argument("--config")
    t.add_argument("--out")
    t.add_argument("--tiny", action="store_true", help="small channels/blocks profile")
    t.add_argument("--no-ssab", action="store_true", help="pure TSAB ablation")
    t.add_argument("--task", choices=["denoise", "deblur", "derain", "dehaze", "sr2", "sr4", "all-in-one"])
    t.add_argument("--seed", type=int)
    t.add_argument("--iters", type=int, help="compress the schedule into this many iterations")
    t.add_argument("--patch", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--checkpoint-every", type=int)
    t.add_argument("--log-every", type=int)
    t.add_argument("--resume", action="store_true")
    t.add_argument("--stop-at", type=int, help=argparse.SUPPRESS)
    t.add_argument("--print-config", action="store_true")
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on manifests")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True, action="append")
    e.add_argument("--out-json")
    e.add_argument("--out-md")
    e.add_argument("--model-name")
    e.add_argument("--dtype", default="float64", choices=["float32", "float64"])
    e.set_defaults(func=_cmd_eval)

    a = sub.add_parser("param-audit", help="closed-form vs enumerated parameter count")
    a.add_argument("--config")
    a.add_argument("--tiny", action="store_true")
    a.add_argument("--no-ssab", action="store_true")
    a.set_defaults(func=_cmd_param_audit)

    r = sub.add_parser("report", help="combine JSON reports into a markdown table")
    r.add_argument("reports", nargs="+")
    r.add_argument("--out")
    r.set_defaults(func=_cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ContractError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
