"""Command-line entry point: ``mets {pretrain,eval-zeroshot,embed-text,inspect-record,config,synth}``.

Exit codes: 0 success, 1 other failure, 2 input error, 3 catalog mismatch,
4 record parse error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .encoder import EncoderConfig, build_encoder
from .errors import (
    CatalogMismatchError,
    CheckpointError,
    DatasetLoadError,
    EmbeddingFormatError,
    ManifestError,
    MissingEmbeddingError,
    ParseError,
)
from .signal_io import LoaderConfig, load_dataset, read_record
from .text_embed import (
    EmbeddingProvider,
    load_precomputed,
    render_label_prompt,
    render_report_prompt,
    write_embedding_file,
)
from .trainer import TrainConfig, pretrain
from .zeroshot import ClassCatalog, evaluate

logger = logging.getLogger("mets")

EXIT_OK, EXIT_OTHER, EXIT_INPUT, EXIT_CATALOG, EXIT_PARSE = 0, 1, 2, 3, 4


class InputError(Exception):
    pass


def default_config():
    data = LoaderConfig()
    return {
        "manifest": None,
        "embeddings": None,
        "stub_text": False,
        "stub_dim": 128,
        "stub_seed": 0,
        "checkpoint": None,
        "catalog": None,
        "out": "runs/mets",
        "seed": 0,
        "split": None,
        "encoder": EncoderConfig().to_dict(),
        "train": TrainConfig().to_dict(),
        "data": {"target_hz": data.target_hz, "window_seconds": data.window_seconds,
                 "normalize": data.normalize, "lead_strategy": data.lead_strategy},
    }


def _merge(base, update):
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


FLAG_TARGETS = {
    "manifest": ("manifest",),
    "embeddings": ("embeddings",),
    "stub_text": ("stub_text",),
    "checkpoint": ("checkpoint",),
    "catalog": ("catalog",),
    "out": ("out",),
    "seed": ("seed",),
    "split": ("split",),
    "epochs": ("train", "epochs"),
    "batch_size": ("train", "batch_size"),
    "lr": ("train", "learning_rate"),
    "weight_decay": ("train", "weight_decay"),
}


def resolve_config(config_file=None, flags=None):
    """Defaults, then the JSON config file, then explicitly given flags."""
    cfg = default_config()
    if config_file is not None:
        path = Path(config_file)
        if not path.exists():
            raise InputError(f"config file not found: {path}")
        try:
            _merge(cfg, json.loads(path.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise InputError(f"config file {path} is not valid JSON: {exc}") from None
    for name, value in (flags or {}).items():
        if value is None or name not in FLAG_TARGETS:
            continue
        if name == "stub_text" and value is False:
            continue
        *parents, leaf = FLAG_TARGETS[name]
        node = cfg
        for p in parents:
            node = node[p]
        node[leaf] = value
    cfg["train"]["seed"] = cfg["seed"]
    try:
        EncoderConfig.from_dict(cfg["encoder"])
        TrainConfig(**cfg["train"])
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid configuration: {exc}") from None
    return cfg


def _loader_config(cfg, in_leads):
    d = cfg["data"]
    return LoaderConfig(float(d["target_hz"]), float(d["window_seconds"]), bool(d["normalize"]),
                        int(in_leads), d.get("lead_strategy", "replicate"))


def _provider(cfg, meta_text=None):
    if cfg.get("embeddings"):
        path = Path(cfg["embeddings"])
        if not path.exists():
            raise InputError(f"embedding file not found: {path}")
        return load_precomputed(path)
    if cfg.get("stub_text"):
        if meta_text and meta_text.get("kind") == "stub":
            return EmbeddingProvider.stub(meta_text["dimension"], meta_text["stub_seed"])
        return EmbeddingProvider.stub(int(cfg["stub_dim"]), int(cfg["stub_seed"]))
    raise InputError("either --embeddings or --stub-text is required")


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_pretrain(args):
    cfg = resolve_config(args.config, vars(args))
    if not cfg["manifest"] or not Path(cfg["manifest"]).exists():
        raise InputError(f"manifest not found: {cfg['manifest']}")
    provider = _provider(cfg)
    enc = EncoderConfig.from_dict(cfg["encoder"])
    train_cfg = TrainConfig(**cfg["train"])

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "resolved_config.json", cfg)

    samples = load_dataset(cfg["manifest"], _loader_config(cfg, enc.in_leads), splits="train")
    if len(samples) < 2:
        raise InputError(f"manifest {cfg['manifest']} has fewer than 2 train entries")
    logger.info("pretraining on %d pairs for %d epoch(s)", len(samples), train_cfg.epochs)
    model = build_encoder(enc, seed=cfg["seed"])
    model, log = pretrain(samples, provider, model, train_cfg, out_dir=out)
    model.meta["data"] = cfg["data"]
    ckpt = Path(cfg["checkpoint"]) if cfg["checkpoint"] else out / "checkpoint.bin"
    save_checkpoint(model, ckpt)
    log.write(out / "train_log.jsonl")
    final = log.records[-1]["batch_loss"] if len(log) else float("nan")
    print(f"steps={len(log)} final_loss={final!r} tau={model.temperature!r} checkpoint={ckpt}")
    return EXIT_OK


def cmd_eval_zeroshot(args):
    cfg = resolve_config(args.config, vars(args))
    for key in ("checkpoint", "catalog", "manifest"):
        if not cfg[key] or not Path(cfg[key]).exists():
            raise InputError(f"--{key} not found: {cfg[key]}")
    model = load_checkpoint(cfg["checkpoint"])
    provider = _provider(cfg, model.meta.get("text"))
    try:
        catalog = ClassCatalog.load(cfg["catalog"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"invalid catalog {cfg['catalog']}: {exc}") from None
    if "data" in model.meta and args.config is None:
        cfg["data"] = _merge(cfg["data"], model.meta["data"])

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "resolved_config.json", cfg)

    loader = _loader_config(cfg, model.config.in_leads)
    samples = load_dataset(cfg["manifest"], loader)
    if cfg.get("split"):
        samples = [s for s in samples if s.split == cfg["split"]]
    else:
        samples = [s for s in samples if s.split != "train"]
    if not samples:
        raise InputError("no test entries selected from the manifest")
    report = evaluate(samples, model, catalog, provider)
    (out / "eval_report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "summary.txt").write_text(report.summary(), encoding="utf-8")
    sys.stdout.write(report.summary())
    return EXIT_OK


def cmd_embed_text(args):
    src = Path(args.input)
    if not src.exists():
        raise InputError(f"input not found: {src}")
    lines = [ln.rstrip("\r\n") for ln in src.read_text(encoding="utf-8").splitlines()]
    lines = [ln for ln in lines if ln.strip()]
    if args.kind == "report":
        prompts = [render_report_prompt(t).rendered for t in lines]
    elif args.kind == "raw":
        prompts = list(lines)
    else:
        prompts = [render_label_prompt(t, args.kind).rendered for t in lines]
    dupes = sorted({p for p in prompts if prompts.count(p) > 1})
    if dupes:
        raise InputError("duplicate rendered prompts: " + "; ".join(dupes))

    if args.vectors:
        vec_lines = [ln for ln in Path(args.vectors).read_text(encoding="utf-8").splitlines() if ln.strip()]
        if len(vec_lines) != len(prompts):
            raise InputError(f"{len(vec_lines)} vector lines for {len(prompts)} prompts")
        try:
            vectors = [np.array([float(v) for v in ln.split()]) for ln in vec_lines]
        except ValueError:
            raise InputError("vector file contains non-numeric values") from None
        dim = len(vectors[0]) if vectors else args.dim
    elif args.stub_text:
        provider = EmbeddingProvider.stub(args.dim, args.stub_seed)
        vectors = [provider.vector(p) for p in prompts]
        dim = args.dim
    else:
        raise InputError("either --stub-text or --vectors is required")

    table = dict(zip(prompts, vectors))
    if args.merge:
        base = load_precomputed(args.merge)
        if base.dimension != dim:
            raise InputError(f"cannot merge dim {dim} into file of dim {base.dimension}")
        table = {**dict(base.table), **table}
    write_embedding_file(args.out, table, dim)
    print(f"wrote {len(table)} embeddings (dim={dim}) to {args.out}")
    return EXIT_OK


def cmd_inspect_record(args):
    record = read_record(args.record)
    h = record.header
    print(f"record_id: {h.record_id}")
    print(f"format: {h.storage_format}")
    print(f"leads: {h.num_leads}")
    print(f"sampling_rate: {h.sampling_rate:g} Hz")
    print(f"samples_per_lead: {h.samples_per_lead}")
    print(f"duration: {h.samples_per_lead / h.sampling_rate:g} s")
    print("lead  gain  baseline  min_mV  max_mV  mean_mV")
    for i, lead in enumerate(record.signal):
        print(f"{i:>4}  {h.gains[i]:g}  {h.baselines[i]}  {lead.min():.6f}  {lead.max():.6f}  {lead.mean():.6f}")
    return EXIT_OK


def cmd_config(args):
    cfg = resolve_config(args.config, vars(args))
    cfg["encoder"]["temperature_init"] = EncoderConfig.from_dict(cfg["encoder"]).temperature_init
    print(json.dumps(cfg, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_synth(args):
    from .synthetic import DEFAULT_CLASSES, make_class_samples, write_corpus

    out = Path(args.out)
    train = make_class_samples(args.per_class, n_leads=args.leads, seed=args.seed)
    test = make_class_samples(args.test_per_class, n_leads=args.leads, seed=args.seed + 1,
                              split="test_superclass")
    manifest = write_corpus(out, train + test)
    ClassCatalog("diagnostic", DEFAULT_CLASSES).save(out / "catalog.json")
    print(f"wrote {len(train)} train + {len(test)} test records; manifest {manifest}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="JSON config file; explicit flags override it")
    p.add_argument("--manifest", help="JSON-lines dataset manifest")
    p.add_argument("--embeddings", help="precomputed text-embedding file")
    p.add_argument("--stub-text", action="store_true", default=None,
                   help="use the deterministic hashing text encoder instead of an embedding file")
    p.add_argument("--checkpoint", help="checkpoint path")
    p.add_argument("--catalog", help="class catalog JSON")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--split", help="evaluate only this manifest split")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)


def build_parser():
    parser = argparse.ArgumentParser(prog="mets", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="contrastive ECG-report pretraining")
    _common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("eval-zeroshot", help="zero-shot classification of a test manifest")
    _common(p)
    p.set_defaults(func=cmd_eval_zeroshot)

    p = sub.add_parser("config", help="print the resolved configuration")
    _common(p)
    p.set_defaults(func=cmd_config)

    p = sub.add_parser("embed-text", help="write an embedding file for report texts or labels")
    p.add_argument("input", help="text file, one raw report or label per line")
    p.add_argument("--out", required=True, help="embedding file to write")
    p.add_argument("--kind", default="report", choices=["report", "diagnostic", "form", "rhythm", "raw"])
    p.add_argument("--stub-text", action="store_true")
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--stub-seed", type=int, default=0)
    p.add_argument("--vectors", help="whitespace-separated vectors, one line per input line")
    p.add_argument("--merge", help="existing embedding file to extend")
    p.set_defaults(func=cmd_embed_text)

    p = sub.add_parser("inspect-record", help="print header fields and per-lead statistics")
    p.add_argument("record", help=".hea or .csv record")
    p.set_defaults(func=cmd_inspect_record)

    p = sub.add_parser("synth", help="write a synthetic separable 4-class corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=16)
    p.add_argument("--test-per-class", type=int, default=25)
    p.add_argument("--leads", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CatalogMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CATALOG
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (InputError, DatasetLoadError, ManifestError, CheckpointError, EmbeddingFormatError,
            MissingEmbeddingError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        logger.debug("unhandled", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
