"""Command-line entry point: ingest corpora, train, evaluate, gradient-check,
and benchmark. Every command exits 0 on success and nonzero with a one-line
``error: <command>: <message>`` on stderr otherwise."""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

from .backbone import BackboneSpec
from .corpus import (CorpusFormatError, explode_all, parse_bioscope_xml,
                     parse_sem_conll, read_jsonl, synthetic_corpus, write_jsonl)
from .gradcheck import layer_suite
from .model import ScopeModel, count_parameters
from .ortho import VARIANTS, OAConfig
from .training import (TrainConfig, bench, prepare_samples, evaluate,
                       run_crossdataset, run_cv, run_fixed_split)
from .reporting import bench_csv_text, write_bench, write_run_outputs

CONFIG_DATA_KEYS = ("data", "test_data", "out")


class CliError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# ingest


def cmd_ingest(args) -> int:
    text = Path(args.infile).read_text(encoding="utf-8")
    if args.format == "sem":
        raw = parse_sem_conll(text)
    else:
        raw = parse_bioscope_xml(text)
    samples, stats = explode_all(raw, source=Path(args.infile).stem,
                                 split=args.split or "")
    # parse everything before opening the output: a malformed input must not
    # leave a partial file behind
    out_path = Path(args.out)
    fd, tmp_name = tempfile.mkstemp(dir=out_path.parent or Path("."),
                                    prefix=out_path.name, suffix=".tmp")
    os.close(fd)
    try:
        write_jsonl(tmp_name, samples)
        os.replace(tmp_name, out_path)
    except BaseException:
        os.unlink(tmp_name)
        raise
    print(f"sentences={stats.sentences} with_negation={stats.sentences_with_negation} "
          f"samples={stats.samples} -> {out_path}")
    return 0


# ---------------------------------------------------------------------------
# train


def load_run_config(args) -> tuple[TrainConfig, dict]:
    file_values: dict = {}
    if args.config:
        file_values = json.loads(Path(args.config).read_text())
        unknown = set(file_values) - set(TrainConfig.__dataclass_fields__) \
            - set(CONFIG_DATA_KEYS)
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
    paths = {k: file_values.pop(k) for k in CONFIG_DATA_KEYS if k in file_values}
    for flag, key in (("data", "data"), ("test_data", "test_data"), ("out", "out")):
        if getattr(args, flag, None):
            paths[key] = getattr(args, flag)
    for flag, key in (("variant", "variant"), ("prep", "preprocessing"),
                      ("seed", "seed"), ("jobs", None)):
        if key and getattr(args, flag, None) is not None:
            file_values[key] = getattr(args, flag)
    if os.environ.get("OA_SEED"):
        file_values["seed"] = int(os.environ["OA_SEED"])
    return TrainConfig.from_dict(file_values), paths


def load_dataset(spec: str):
    """A JSONL path, or synthetic:N for the bundled generator."""
    if spec.startswith("synthetic:"):
        n = int(spec.split(":", 1)[1])
        return synthetic_corpus(n, seed=0), f"synthetic{n}"
    return read_jsonl(spec), Path(spec).stem


def cmd_train(args) -> int:
    config, paths = load_run_config(args)
    if "data" not in paths:
        raise CliError("no training data: pass --data or put it in the config file")
    out_dir = Path(paths.get("out", "runs/latest"))
    samples, train_name = load_dataset(paths["data"])

    if paths.get("test_data"):
        test_samples, test_name = load_dataset(paths["test_data"])
        summary = run_crossdataset(samples, test_samples, config,
                                   train_name=train_name, test_name=test_name,
                                   checkpoint_dir=out_dir)
    elif all(s.split for s in samples):
        summary = run_fixed_split(samples, config, train_name=train_name,
                                  repetitions=config.k, checkpoint_dir=out_dir)
    else:
        summary = run_cv(samples, config, train_name=train_name, jobs=args.jobs,
                         checkpoint_dir=out_dir)
    written = write_run_outputs(out_dir, summary)
    effective = dict(config.__dict__)
    effective.update({k: str(v) for k, v in paths.items()})
    (out_dir / "config.json").write_text(json.dumps(effective, indent=2, sort_keys=True)
                                         + "\n")
    kind, score = (("pooled", summary.pooled_f1) if config.pooled_f1
                   else ("macro", summary.macro_f1))
    print(f"{kind} F1 {score:.4f} over {len(summary.folds)} folds "
          f"-> {written['csv']}")
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    config_path = Path(args.config) if args.config else ckpt.parent / "config.json"
    if not config_path.exists():
        raise CliError(f"no config next to checkpoint (looked at {config_path})")
    stored = json.loads(config_path.read_text())
    config = TrainConfig.from_dict(
        {k: v for k, v in stored.items() if k in TrainConfig.__dataclass_fields__})
    model = ScopeModel.init(
        OAConfig(d=config.d, n_heads=config.n_heads, variant=config.variant,
                 dropout_p=config.dropout),
        BackboneSpec(kind="toy_encoder", d=config.d, max_len=config.max_len),
        seed=config.seed)
    model.load(ckpt)
    samples, name = load_dataset(args.data)
    prepared, skipped = prepare_samples(samples, config.preprocessing,
                                        config.max_len, BackboneSpec().vocab_size)
    precision, recall, f1 = evaluate(model, prepared)
    print(f"{name}: precision {precision:.4f} recall {recall:.4f} f1 {f1:.4f} "
          f"({len(prepared)} samples, {skipped} skipped)")
    return 0


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args) -> int:
    variants = args.variant.split(",") if args.variant else list(VARIANTS)
    all_ok = True
    print(f"{'layer':28s} {'max rel err':>12s} {'probes':>7s}  status")
    for variant in variants:
        for res in layer_suite(variant, d=args.d, n_heads=args.heads):
            status = "PASS" if res.passed else "FAIL"
            all_ok &= res.passed
            print(f"{res.name:28s} {res.max_rel_err:12.3e} {res.probes:7d}  {status}")
    return 0 if all_ok else 1


# ---------------------------------------------------------------------------
# bench


def cmd_bench(args) -> int:
    batch_sizes = [int(b) for b in args.batch_sizes.split(",")]
    variants = args.variant.split(",") if args.variant else list(VARIANTS)
    rows = []
    for variant in variants:
        config = TrainConfig(variant=variant, seed=args.seed or 0)
        rows.extend(bench(config, batch_sizes))
    print(bench_csv_text(rows), end="")
    if args.out:
        paths = write_bench(args.out, rows)
        print(f"written {paths['csv']}")
    return 0


# ---------------------------------------------------------------------------
# synth / params


def cmd_synth(args) -> int:
    samples = synthetic_corpus(args.n, seed=args.seed or 0,
                               mid_punct_p=args.mid_punct)
    write_jsonl(args.out, samples)
    print(f"{len(samples)} samples -> {args.out}")
    return 0


def cmd_params(args) -> int:
    from .ortho import OAEncoderState
    from .tensor import RngState
    variants = args.variant.split(",") if args.variant else list(VARIANTS)
    for variant in variants:
        cfg = OAConfig(d=args.d, n_heads=args.heads, variant=variant)
        state = OAEncoderState.init(cfg, RngState(0))
        n = count_parameters(state)["oa_block"]
        print(f"{variant:4s} d={args.d} heads={args.heads}: {n:,} parameters per block")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oascope",
        description="Orthogonal attention scope resolution: ingest, train, "
                    "evaluate, gradient-check, benchmark.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert a corpus file to canonical JSONL")
    p.add_argument("--format", choices=("sem", "bioscope"), required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "dev", "test"),
                   help="tag records for fixed-split training")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("train", help="cross-validated training run")
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--prep", choices=("normal", "augment"))
    p.add_argument("--data", help="canonical JSONL or synthetic:N")
    p.add_argument("--test-data", dest="test_data",
                   help="separate test corpus (cross-dataset protocol)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="run directory (default runs/latest)")
    p.add_argument("--jobs", type=int, default=1, help="parallel fold workers")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="config.json (default: next to checkpoint)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference checks per layer")
    p.add_argument("--variant", help="comma list, default all")
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--heads", type=int, default=4)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("bench", help="inference timing per variant and batch size")
    p.add_argument("--variant", help="comma list, default all")
    p.add_argument("--batch-sizes", dest="batch_sizes", default="1,8,32")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="directory for bench.csv and bench.png")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("synth", help="write a bundled synthetic corpus")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--seed", type=int)
    p.add_argument("--mid-punct", dest="mid_punct", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("params", help="parameter counts per encoder block")
    p.add_argument("--variant", help="comma list, default all")
    p.add_argument("--d", type=int, default=768)
    p.add_argument("--heads", type=int, default=12)
    p.set_defaults(fn=cmd_params)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, CorpusFormatError, ValueError, OSError) as e:
        print(f"error: {args.command}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
