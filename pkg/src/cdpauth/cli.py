"""Command-line front end: ``cdpauth {gen,attack,ingest,train,eval,report}``.

Exit codes: 0 on success, 1 on I/O errors or failed runs, 2 on configuration
errors (including bad flags). The default output directory is taken from the
``CDPAUTH_OUT`` environment variable, falling back to ``./cdpauth-out``.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

from cdpauth.attack import EstimatorSpec, estimator_from_parser, parse_estimator
from cdpauth.authenticator import TrainConfig, train
from cdpauth.channel import DEFAULT_PROFILES, PrinterProfile, profiles_from_parser
from cdpauth.dataset import (Layout, load_dataset, load_real_dataset, save_dataset, split_dataset,
                             synthesize)
from cdpauth.dataset import attack as attack_tuples
from cdpauth.errors import ConfigError
from cdpauth.evaluation import (aggregate_records, evaluate_setup, format_report, read_metrics_csv,
                                read_scores, write_agg_csv, write_kde_files, write_metrics_csv,
                                write_pca_file, write_roc_files, write_scores)
from cdpauth.nn.checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from cdpauth.setups import SetupSpec, select_setups, setups_from_parser, standard_setups

log = logging.getLogger("cdpauth")

OUT_ENV = "CDPAUTH_OUT"
DEFAULT_OUT = "cdpauth-out"


class RunFailed(Exception):
    """Some (setup, seed) runs failed; partial results were written."""


# -- shared helpers -------------------------------------------------------------

def _default_out() -> Path:
    return Path(os.environ.get(OUT_ENV) or DEFAULT_OUT)


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {value}")
    return value


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"5"`` means seeds 0..4; a comma list (``"3,"`` or ``"0,2,4"``) names seeds explicitly."""
    if "," not in text:
        return tuple(range(_positive_int(text)))
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def read_config(path: str | None) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if path is not None:
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return parser


def _profiles(config_path: str | None, stored: dict | None = None) -> dict[str, PrinterProfile]:
    """Profiles from the manifest, then the built-in defaults, overridden by a config file."""
    profiles = dict(DEFAULT_PROFILES)
    for pid, fields in (stored or {}).items():
        profiles[pid] = PrinterProfile(**fields)
    profiles.update(profiles_from_parser(read_config(config_path)))
    return profiles


def _pick(profiles: dict[str, PrinterProfile], ids: str | None, what: str) -> list[PrinterProfile]:
    if ids is None:
        return list(profiles.values())
    chosen = []
    for pid in (p.strip() for p in ids.split(",") if p.strip()):
        if pid not in profiles:
            raise ConfigError(f"unknown {what} profile {pid!r}; known: {sorted(profiles)}")
        chosen.append(profiles[pid])
    if not chosen:
        raise ConfigError(f"no {what} profiles selected")
    return chosen


def _setups(defenders: list[str], config: configparser.ConfigParser, names: str | None) -> list[SetupSpec]:
    custom = setups_from_parser(config)
    presets = standard_setups(defenders[0], defenders[1]) if len(defenders) >= 2 else []
    if not presets and not custom:
        raise ConfigError("the preset setups need two printers; define [setup:<name>] "
                          "sections in --config for other datasets")
    return select_setups(presets + custom, names)


def _run_name(setup: str, seed: int) -> str:
    return f"{setup}_seed{seed}"


def _ckpt_path(out: Path, setup: str, seed: int) -> Path:
    return out / "checkpoints" / f"{_run_name(setup, seed)}.ckpt"


def _split(tuples, split_seed: int):
    return split_dataset([t.id for t in tuples], seed=split_seed)


# -- subcommands ----------------------------------------------------------------

def cmd_gen(args) -> None:
    # a profile file replaces the built-in pair unless --defenders picks from both
    profiles = _profiles(args.profiles)
    from_file = profiles_from_parser(read_config(args.profiles))
    pool = profiles if args.defenders is not None or not from_file else from_file
    defenders = _pick(pool, args.defenders, "defender")
    tuples = synthesize(args.n, args.size, args.density, defenders, args.seed)
    out = args.out or _default_out() / "dataset"
    path = save_dataset(tuples, out, seed=args.seed, profiles={p.id: p for p in defenders})
    print(f"wrote {len(tuples)} tuples to {path.parent}")


def cmd_attack(args) -> None:
    tuples, manifest = load_dataset(args.dataset)
    profiles = _profiles(args.profiles, manifest.profiles)
    attackers = _pick(profiles, args.attacker_profiles or ",".join(manifest.defenders), "attacker")
    if args.estimator is not None:
        spec = parse_estimator(args.estimator)
    else:
        config = read_config(args.config)
        spec = estimator_from_parser(config) if config.has_section("estimator") else EstimatorSpec()
    stripped = [replace(t, fakes={}) for t in tuples]
    faked = attack_tuples(stripped, spec, attackers, args.seed,
                          {d: profiles[d] for d in manifest.defenders if d in profiles})
    used = {d: profiles[d] for d in manifest.defenders if d in profiles}
    used.update({p.id: p for p in attackers})
    save_dataset(faked, args.dataset if Path(args.dataset).is_dir() else Path(args.dataset).parent,
                 seed=manifest.seed, estimator=spec, attack_seed=args.seed, profiles=used)
    n = len(faked[0].fakes)
    print(f"wrote {n} fakes per tuple for {len(faked)} tuples (estimator {spec.summary()})")


def cmd_ingest(args) -> None:
    layout = Layout.read(args.layout)
    tuples, report = load_real_dataset(args.root, layout)
    if not tuples:
        raise ConfigError(f"no complete tuples found under {args.root}")
    save_dataset(tuples, args.out)
    skipped = len(report.skipped_dimension) + len(report.skipped_incomplete)
    print(f"ingested {len(tuples)} tuples ({skipped} skipped) into {args.out}")


_DATASETS: dict[str, list] = {}


def _cached_dataset(path) -> list:
    key = str(Path(path).resolve())
    if key not in _DATASETS:
        _DATASETS[key] = load_dataset(path)[0]
    return _DATASETS[key]


def _train_one(job) -> tuple[str, int, str | None]:
    """Train and checkpoint one (setup, seed); returns an error message instead of raising."""
    dataset, setup, config, seed, split_seed, out = job
    try:
        tuples = _cached_dataset(dataset)
        by_id = {t.id: t for t in tuples}
        tr, va, te = _split(tuples, split_seed)
        log_path = out / "logs" / f"{_run_name(setup.name, seed)}.tsv"
        res = train([by_id[i] for i in tr], [by_id[i] for i in va], setup, config, seed,
                    test_ids=set(te), log_path=log_path)
        meta = {"setup": asdict(setup), "seed": seed, "split_seed": split_seed,
                "best_epoch": res.best_epoch, "best_val_loss": res.best_val_loss,
                "epochs_run": res.epochs_run, "train_config": asdict(config)}
        save_checkpoint(_ckpt_path(out, setup.name, seed),
                        Checkpoint(res.model, res.best_epoch, res.optimizer,
                                   {"lr": config.lr, "betas": list(config.betas), "eps": config.eps},
                                   None, meta))
        return setup.name, seed, None
    except ConfigError:
        raise
    except Exception as exc:  # one failed seed must not discard the others
        log.exception("training %s seed %d failed", setup.name, seed)
        with open(out / "logs" / f"{_run_name(setup.name, seed)}.tsv", "a") as fh:
            fh.write(f"FAILED\t{type(exc).__name__}: {exc}\n")
        return setup.name, seed, str(exc)


def cmd_train(args) -> None:
    config_file = read_config(args.config)
    tuples, manifest = load_dataset(args.dataset)
    setups = _setups(manifest.defenders, config_file, args.setup)
    config = TrainConfig.from_parser(config_file, seeds=args.seeds, epochs=args.epochs,
                                     early_stop_patience=args.patience)
    for s in setups:
        s.validate(manifest.defenders, manifest.attackers)
    _split(tuples, args.split_seed)
    _DATASETS[str(Path(args.dataset).resolve())] = tuples
    out = args.out or _default_out()
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "logs").mkdir(parents=True, exist_ok=True)
    jobs = [(args.dataset, s, config, seed, args.split_seed, out) for s in setups for seed in config.seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_train_one, jobs))
    else:
        results = [_train_one(j) for j in jobs]
    failed = [(name, seed) for name, seed, err in results if err is not None]
    print(f"trained {len(results) - len(failed)} of {len(results)} runs into {out}")
    if failed:
        raise RunFailed(f"failed runs: {failed}")


def cmd_eval(args) -> None:
    config_file = read_config(args.config)
    tuples, manifest = load_dataset(args.dataset)
    setups = _setups(manifest.defenders, config_file, args.setup)
    config = TrainConfig.from_parser(config_file, seeds=args.seeds)
    out = args.out or _default_out()
    runs = [(s, seed) for s in setups for seed in config.seeds]
    missing = [str(_ckpt_path(out, s.name, seed)) for s, seed in runs
               if not _ckpt_path(out, s.name, seed).is_file()]
    if missing:
        raise ConfigError("missing checkpoints (run `cdpauth train` first): " + ", ".join(missing))
    by_id = {t.id: t for t in tuples}
    records, scores, failed = [], [], []
    for setup, seed in runs:
        try:
            ckpt = load_checkpoint(_ckpt_path(out, setup.name, seed))
            _, _, test_ids = _split(tuples, ckpt.meta.get("split_seed", 0))
            recs, cells = evaluate_setup(ckpt.model, setup, seed, [by_id[i] for i in test_ids],
                                         config.tau)
            records += recs
            scores += cells
        except (CheckpointError, OSError, KeyError, ValueError) as exc:
            log.error("evaluating %s seed %d failed: %s", setup.name, seed, exc)
            failed.append((setup.name, seed))
    write_metrics_csv(out / "metrics.csv", records, failed)
    write_scores(out / "scores.tsv", scores)
    print(f"wrote {len(records)} metric rows to {out / 'metrics.csv'}")
    if failed:
        raise RunFailed(f"failed evaluations: {failed}")


def cmd_report(args) -> None:
    config_file = read_config(args.config)
    tuples, manifest = load_dataset(args.dataset)
    config = TrainConfig.from_parser(config_file)
    out = args.out or _default_out()
    metrics = out / "metrics.csv"
    if not metrics.is_file():
        raise ConfigError(f"{metrics} not found (run `cdpauth eval` first)")
    records = read_metrics_csv(metrics)
    rows = aggregate_records(records)
    write_agg_csv(out / "metrics_agg.csv", rows)
    write_kde_files(out, tuples)
    if (out / "scores.tsv").is_file():
        write_roc_files(out, read_scores(out / "scores.tsv"))
    by_id = {t.id: t for t in tuples}
    known = {s.name: s for s in _setups(manifest.defenders, config_file, None)}
    used = None
    for name in dict.fromkeys(r.setup for r in records):
        seed = min(r.seed for r in records if r.setup == name)
        path = _ckpt_path(out, name, seed)
        if name not in known or not path.is_file():
            log.warning("no checkpoint for %s seed %d; skipping PCA", name, seed)
            continue
        ckpt = load_checkpoint(path)
        if "train_config" in ckpt.meta and used is None:
            used = ckpt.meta["train_config"]
        _, _, test_ids = _split(tuples, ckpt.meta.get("split_seed", 0))
        write_pca_file(out, ckpt.model, known[name], [by_id[i] for i in test_ids], seed)
    header = {"dataset": str(args.dataset), "tuples": len(tuples),
              "defenders": ", ".join(manifest.defenders), "attackers": ", ".join(manifest.attackers),
              "estimator": manifest.estimator, "seeds": sorted({r.seed for r in records})}
    if used is not None:
        # report the settings the models were trained with, not the current defaults
        config = TrainConfig(**{**used, "seeds": tuple(used["seeds"]), "betas": tuple(used["betas"])})
    (out / "report.md").write_text(format_report(rows, config, header))
    print(f"wrote {len(rows)} aggregate rows and report.md to {out}")


# -- argument parsing -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdpauth", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="synthesize templates and their original prints")
    p.add_argument("--n", type=_positive_int, required=True, help="number of tuples")
    p.add_argument("--size", type=int, default=64, help="template side in pixels (default 64)")
    p.add_argument("--density", type=float, default=0.5, help="fraction of white template pixels")
    p.add_argument("--profiles", help="INI file with [printer:<id>] sections (default: vpA, vpB)")
    p.add_argument("--defenders", help="comma-separated defender profile ids (default: all)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, help=f"dataset directory (default ${OUT_ENV}/dataset)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("attack", help="add fakes f^{a/d} for every attacker and defender")
    p.add_argument("--dataset", required=True, help="dataset directory or manifest path")
    p.add_argument("--estimator", help="otsu | fixed:<level> | wiener:<psf_sigma>:<noise_ratio>, "
                                       "optionally +sharpen (default otsu)")
    p.add_argument("--attacker-profiles", help="comma-separated profile ids (default: the defenders)")
    p.add_argument("--profiles", help="INI file with extra or overriding [printer:<id>] sections")
    p.add_argument("--config", help="INI file with an [estimator] section")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("ingest", help="convert a real dataset described by a layout file")
    p.add_argument("--root", required=True, help="root directory of the downloaded dataset")
    p.add_argument("--layout", required=True, help="INI file with a [layout] section")
    p.add_argument("--out", type=Path, required=True, help="output dataset directory")
    p.set_defaults(func=cmd_ingest)

    for name, func, text in (("train", cmd_train, "train one model per (setup, seed)"),
                             ("eval", cmd_eval, "score trained models on the test split"),
                             ("report", cmd_report, "aggregate metrics and write plot data")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--dataset", required=True, help="dataset directory or manifest path")
        p.add_argument("--config", help="INI file with [train] and [setup:<name>] sections")
        p.add_argument("--out", type=Path, help=f"run directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
        if name != "report":
            p.add_argument("--setup", default="all",
                           help="comma-separated setup or block names (default all)")
            p.add_argument("--seeds", type=parse_seeds,
                           help="seed count (5 = seeds 0..4) or comma list (default from config)")
        if name == "train":
            p.add_argument("--epochs", type=_positive_int)
            p.add_argument("--patience", type=int, help="early-stopping patience in epochs")
            p.add_argument("--split-seed", type=int, default=0, help="seed of the 40/10/50 split")
            p.add_argument("--jobs", type=_positive_int, default=1,
                           help="train runs in this many processes")
        p.set_defaults(func=func)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"cdpauth {args.command}: configuration error: {exc}", file=sys.stderr)
        return 2
    except RunFailed as exc:
        print(f"cdpauth {args.command}: {exc}", file=sys.stderr)
        return 1
    except (OSError, CheckpointError, json.JSONDecodeError) as exc:
        print(f"cdpauth {args.command}: I/O error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
