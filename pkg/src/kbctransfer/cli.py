"""Command-line entry point: ``kbctransfer {pretrain,finetune,evaluate,zeroshot,gridsearch}``.

Settings come from, in increasing priority: built-in defaults, a flat
``key=value`` file given with ``--config``, and command-line flags.  Every
command writes the resolved settings to ``<out>/config.txt``, which can be
passed back with ``--config`` to repeat the run.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint, model_from_checkpoint, save_checkpoint
from .data import add_reciprocals, load_clusters, load_dataset, load_triples, load_word_vectors
from .errors import KBCError
from .evaluation import evaluate, zero_shot
from .training import TrainConfig, standard_grid, grid_configs, grid_search, model_for, train
from .transfer import init_finetune

log = logging.getLogger("kbctransfer")

COMMANDS = ("pretrain", "finetune", "evaluate", "zeroshot", "gridsearch")
PATH_KEYS = ("data", "train", "valid", "test", "clusters", "word_vectors", "checkpoint", "grid")
INT_KEYS = {"dim", "batch_size", "epochs", "valid_every", "seed", "word_dim", "conve_channels",
            "in_batch_threshold", "eval_batch"}
FLOAT_KEYS = {"lr", "dropout", "n3"}
BOOL_KEYS = {"freeze_words", "reset_bn"}
NEGATIVE_FLAGS = {"auto": "auto", "on": "in-batch", "off": "full"}
STAGE_EPOCHS = {"pretrain": 100, "finetune": 500, "gridsearch": 500}


def parse_value(key: str, raw: str):
    raw = raw.strip()
    if raw in ("", "none", "None"):
        return None
    if key in INT_KEYS:
        return int(raw)
    if key in FLOAT_KEYS:
        return float(raw)
    if key in BOOL_KEYS:
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{key} expects a boolean, got {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    if key == "conve_reshape":
        rows, cols = raw.lower().replace(",", "x").split("x")
        return (int(rows), int(cols))
    return raw


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, (tuple, list)):
        return "x".join(str(v) for v in value)
    return str(value)


def read_config(path) -> dict:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    return {key: parse_value(key, raw) for key, raw in read_config_raw(path).items()}


def write_config(values: dict, path) -> None:
    lines = [f"{k}={format_value(v)}" for k, v in sorted(values.items())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_grid(path) -> dict[str, list]:
    """Grid file: one ``key=v1,v2,...`` line per swept setting."""
    grid = {}
    for key, raw in read_config_raw(path).items():
        grid[key] = [parse_value(key, v) for v in raw.split(",")]
    return grid


def read_config_raw(path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, raw = line.split("=", 1)
        out[key.strip().replace("-", "_")] = raw.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kbctransfer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key=value settings file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--checkpoint", help="checkpoint directory to load")
        p.add_argument("--encoder", choices=("gru", "noencoder"))
        p.add_argument("--model", choices=("tucker", "conve", "5star"))
        p.add_argument("--dim", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch", dest="batch_size", type=int)
        p.add_argument("--dropout", type=float)
        p.add_argument("--n3", type=float)
        p.add_argument("--epochs", type=int)
        p.add_argument("--valid-every", dest="valid_every", type=int)
        p.add_argument("--clusters", help="gold cluster file (TAB-separated names per line)")
        p.add_argument("--word-vectors", dest="word_vectors", help="word embedding text file")
        p.add_argument("--in-batch-negatives", dest="negatives", choices=tuple(NEGATIVE_FLAGS))
        p.add_argument("--data", help="directory with train.txt, valid.txt, test.txt")
        p.add_argument("--train")
        p.add_argument("--valid")
        p.add_argument("--test")
        p.add_argument("--conve-reshape", dest="conve_reshape", help="ROWSxCOLS")
        p.add_argument("--word-dim", dest="word_dim", type=int)
        p.add_argument("--split", choices=("train", "valid", "test"))
        p.add_argument("--reset-bn", dest="reset_bn", action="store_const", const=True,
                       help="do not copy batch-norm running statistics on transfer")
        if name == "gridsearch":
            p.add_argument("--grid", help="grid file with key=v1,v2 lines")
            p.add_argument("--standard-grid", dest="standard_grid", choices=("pretrain", "finetune"),
                           help="sweep the built-in grid for the model instead of a grid file")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    values = {"command": args.command, "split": "test", "reset_bn": False}
    values.update({k: v for k, v in TrainConfig().as_dict().items()})
    values["epochs"] = STAGE_EPOCHS.get(args.command, values["epochs"])
    if args.config:
        values.update(read_config(args.config))
        values["command"] = args.command
    for key, v in vars(args).items():
        if key in ("config", "command") or v is None:
            continue
        if key == "negatives":
            v = NEGATIVE_FLAGS[v]
        elif key == "conve_reshape":
            v = parse_value(key, v)
        values[key] = v
    if not values.get("out"):
        raise ValueError("--out is required")
    missing = [f"{k}={values[k]}" for k in PATH_KEYS if values.get(k) and not Path(values[k]).exists()]
    if missing:
        raise FileNotFoundError("missing input paths: " + ", ".join(missing))
    return values


def train_config(values: dict) -> TrainConfig:
    known = TrainConfig().as_dict()
    return TrainConfig.from_dict({k: values[k] for k in known if k in values})


def load_store(values: dict):
    if values.get("data"):
        store = load_dataset(values["data"])
    elif values.get("train"):
        store = load_triples(values["train"], values.get("valid"), values.get("test"))
    else:
        raise ValueError("give --data DIR or --train/--valid/--test files")
    return add_reciprocals(store)


def _clusters(values, store):
    return load_clusters(values["clusters"], store) if values.get("clusters") else None


def _word_vectors(values):
    return load_word_vectors(values["word_vectors"]) if values.get("word_vectors") else None


def _fine_tune_model(values, config, store, ckpt):
    if ckpt is None:
        return None
    return init_finetune(ckpt, store, config.encoder, seed=config.seed, dim=config.dim, dropout=config.dropout,
                         word_vectors=_word_vectors(values), reset_bn=bool(values.get("reset_bn")),
                         freeze_words=config.freeze_words)


def _finish(model, store, clusters, out: Path, values, report=None):
    save_checkpoint(model, out / "checkpoint", extra={"train_config": train_config(values).as_dict()})
    if report is not None:
        summary = {"best_epoch": report.best_epoch, "best_valid_mrr": report.best_mrr,
                   "wall_clock": report.wall_clock, "trace": report.trace}
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if len(store.test):
        evaluate(model, store, clusters, "test").write(out / "test_report.tsv")


def cmd_pretrain(values: dict) -> None:
    if values["encoder"] != "gru":
        raise KBCError("pre-training requires GRU encoders")
    cmd_train(values, checkpoint=None)


def cmd_train(values: dict, checkpoint) -> None:
    out = Path(values["out"])
    store = load_store(values)
    if checkpoint is not None:
        # architecture fields follow the checkpoint
        values["model"] = checkpoint.model_kind
        values["conve_reshape"] = checkpoint.manifest["conve_reshape"] and tuple(checkpoint.manifest["conve_reshape"])
        values["word_dim"] = checkpoint.manifest["word_dim"]
    config = train_config(values)
    clusters = _clusters(values, store)
    model = _fine_tune_model(values, config, store, checkpoint)
    model, report = train(store, config, model, clusters, _word_vectors(values), out / "train.log")
    _finish(model, store, clusters, out, values, report)


def cmd_finetune(values: dict) -> None:
    ckpt = load_checkpoint(values["checkpoint"]) if values.get("checkpoint") else None
    if ckpt is not None and values["dim"] != ckpt.dim:
        raise KBCError(f"checkpoint dimension {ckpt.dim} differs from requested dimension {values['dim']}")
    cmd_train(values, ckpt)


def cmd_evaluate(values: dict) -> None:
    if not values.get("checkpoint"):
        raise ValueError("evaluate needs --checkpoint")
    store = load_store(values)
    ckpt = load_checkpoint(values["checkpoint"])
    model = model_from_checkpoint(ckpt, store)
    report = evaluate(model, store, _clusters(values, store), values["split"])
    out = Path(values["out"])
    report.write(out / f"{values['split']}_report.tsv")
    report.write_queries(out / f"{values['split']}_ranks.tsv")


def cmd_zeroshot(values: dict) -> None:
    if not values.get("checkpoint"):
        raise ValueError("zeroshot needs --checkpoint")
    store = load_store(values)
    ckpt = load_checkpoint(values["checkpoint"])
    report = zero_shot(ckpt, store, _clusters(values, store), values["split"], values["seed"])
    out = Path(values["out"])
    report.write(out / f"zeroshot_{values['split']}_report.tsv")
    report.write_queries(out / f"zeroshot_{values['split']}_ranks.tsv")


def cmd_gridsearch(values: dict) -> None:
    if values.get("grid"):
        grid = read_grid(values["grid"])
    elif values.get("standard_grid"):
        grid = {k: list(v) for k, v in standard_grid(values["model"], values["standard_grid"]).items()}
    else:
        raise ValueError("gridsearch needs --grid FILE or --standard-grid STAGE")
    out = Path(values["out"])
    ckpt = load_checkpoint(values["checkpoint"]) if values.get("checkpoint") else None
    store = load_store(values)
    clusters = _clusters(values, store)
    if ckpt is not None:
        values["model"] = ckpt.model_kind
        values["word_dim"] = ckpt.manifest["word_dim"]
    base = train_config(values)

    def factory(config):
        if ckpt is None:
            return model_for(config, store, _word_vectors(values))
        return _fine_tune_model(values, config, store, ckpt)

    runs = out / "runs"
    runs.mkdir(parents=True, exist_ok=True)
    configs = grid_configs(base, grid)
    result = grid_search(store, base, grid, factory, clusters, _word_vectors(values), runs)
    lines = ["run\tvalid_MRR\tbest_epoch\twinner\tconfig"]
    for i, (config, report) in enumerate(zip(configs, result.reports)):
        winner = "*" if report is result.best_report else ""
        lines.append(f"run{i:03d}\t{report.best_mrr:.6f}\t{report.best_epoch}\t{winner}\t"
                     f"{json.dumps(config.as_dict(), sort_keys=True)}")
    (out / "grid.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    winner_values = dict(values, **result.best_config.as_dict())
    winner_values["command"] = "finetune"
    winner_values.pop("grid", None)
    winner_values.pop("standard_grid", None)
    winner_values["out"] = str(out / "winner")
    (out / "winner").mkdir(exist_ok=True)
    write_config(winner_values, out / "winner" / "config.txt")
    _finish(result.best_model, store, clusters, out / "winner", winner_values, result.best_report)


HANDLERS = {"pretrain": cmd_pretrain, "finetune": cmd_finetune, "evaluate": cmd_evaluate,
            "zeroshot": cmd_zeroshot, "gridsearch": cmd_gridsearch}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        values = resolve(args)
        out = Path(values["out"])
        out.mkdir(parents=True, exist_ok=True)
        write_config(values, out / "config.txt")
        HANDLERS[args.command](values)
    except (KBCError, ValueError, KeyError, FileNotFoundError) as exc:
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {message}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
