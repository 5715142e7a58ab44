"""Command-line entry point: ``smoothadv <subcommand> [options]``.

Every subcommand writes its artifacts into ``--out DIR`` together with the
resolved configuration (``<subcommand>.config.toml``) and prints a one-line
summary.  Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from smoothadv import attacks, config, data, existence, metrics, nn, plotting
from smoothadv.kernels import DEFAULT_SIGMAS, DEFAULT_SIZES, KernelBank

logger = logging.getLogger("smoothadv")

DEFAULTS = {
    "gen-data": {"seed": 0, "n_per_class": 50, "length": 512, "fs": data.SYNTH_FS},
    "train": {"seed": 0, "test_fraction": 0.1, "epochs": 50, "batch_size": 8, "learning_rate": 2e-3,
              "input_length": 512},
    "eval": {"seed": 0},
    "attack": {"seed": 0, "method": "sap", "epsilon": 10.0, "alpha": 1.0, "init_steps": 20,
               "kernel_sizes": list(DEFAULT_SIZES), "kernel_sigmas": list(DEFAULT_SIGMAS)},
    "band": {"seed": 0, "n": 1000, "max_examples": 10, "noise_variance": 25.0, "epsilon": 10.0,
             "max_pairs": 100, "kernel_sizes": list(DEFAULT_SIZES), "kernel_sigmas": list(DEFAULT_SIGMAS)},
    "plot": {"seed": 0, "max_plots": 10},
}


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML file with per-subcommand tables")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="smoothadv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic rhythm dataset (JSONL)")
    p.add_argument("--n-per-class", type=int)
    p.add_argument("--length", type=int)
    p.add_argument("--fs", type=float)

    p = sub.add_parser("train", parents=[common], help="split a dataset and train the classifier")
    p.add_argument("--data", type=Path)
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--input-length", type=int)

    p = sub.add_parser("eval", parents=[common], help="confusion matrix, accuracy and F1")
    p.add_argument("--model", type=Path)
    p.add_argument("--data", type=Path)

    p = sub.add_parser("attack", parents=[common], help="run an attack campaign over a dataset")
    p.add_argument("--model", type=Path)
    p.add_argument("--data", type=Path)
    p.add_argument("--method", choices=attacks.METHODS)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--steps", type=int, help="default 20 (pgd) or 40 (sap)")
    p.add_argument("--init-steps", type=int, help="PGD steps initializing the SAP parameter")
    p.add_argument("--kernel-sizes", type=_int_list)
    p.add_argument("--kernel-sigmas", type=_float_list)

    p = sub.add_parser("band", parents=[common], help="existence experiments around successful attacks")
    p.add_argument("--model", type=Path)
    p.add_argument("--campaign", type=Path, help="campaign JSONL written by 'attack'")
    p.add_argument("--n", type=int)
    p.add_argument("--max-examples", type=int)
    p.add_argument("--noise-variance", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--max-pairs", type=int)
    p.add_argument("--kernel-sizes", type=_int_list)
    p.add_argument("--kernel-sigmas", type=_float_list)

    p = sub.add_parser("plot", parents=[common], help="SVG figures for a campaign and its bands")
    p.add_argument("--campaign", type=Path)
    p.add_argument("--existence", type=Path, help="existence JSONL written by 'band'")
    p.add_argument("--max-plots", type=int)
    return parser


def _require(parser, cfg: dict, *keys: str) -> None:
    for key in keys:
        if cfg.get(key) is None:
            parser.error(f"missing required option --{key.replace('_', '-')}")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _write_jsonl(path: Path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, allow_nan=False))
            fh.write("\n")


def _read_jsonl(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _bank(cfg: dict) -> KernelBank:
    return KernelBank.from_lists(cfg["kernel_sizes"], cfg["kernel_sigmas"])


# -- subcommands -------------------------------------------------------------


def cmd_gen_data(cfg: dict) -> str:
    ds = data.generate_synthetic(cfg["n_per_class"], cfg["length"], cfg["seed"], fs=cfg["fs"])
    path = cfg["out"] / "dataset.jsonl"
    data.save_dataset(ds, path)
    return f"gen-data: wrote {len(ds)} records to {path}"


def cmd_train(cfg: dict) -> str:
    ds = data.load_dataset(cfg["data"])
    train_set, test_set = data.split(ds, cfg["test_fraction"], cfg["seed"])
    data.save_dataset(train_set, cfg["out"] / "train.jsonl")
    data.save_dataset(test_set, cfg["out"] / "test.jsonl")
    spec = nn.default_spec(cfg["input_length"])
    hyper = nn.TrainConfig(cfg["epochs"], cfg["batch_size"], cfg["learning_rate"], cfg["seed"])
    model = nn.Classifier(spec, nn.train(spec, train_set, hyper))
    model.save(cfg["out"] / "model.sapw")
    acc = metrics.evaluate(model, test_set).accuracy
    return (f"train: {len(train_set)} train / {len(test_set)} test, test accuracy {acc:.4f}, "
            f"weights -> {cfg['out'] / 'model.sapw'}")


def cmd_eval(cfg: dict) -> str:
    model = nn.Classifier.load(cfg["model"])
    report = metrics.evaluate(model, data.load_dataset(cfg["data"]))
    _write_json(cfg["out"] / "metrics.json", report.to_dict())
    table = report.render()
    (cfg["out"] / "metrics.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return f"eval: accuracy {report.accuracy:.4f}, mean F1 {report.f1.mean:.4f}"


def cmd_attack(cfg: dict) -> str:
    model = nn.Classifier.load(cfg["model"])
    ds = data.load_dataset(cfg["data"])
    method = cfg["method"]
    steps = cfg.get("steps") or (40 if method == "sap" else 20)
    cfg["steps"] = steps
    acfg = attacks.AttackConfig(cfg["epsilon"], cfg["alpha"], steps, cfg["init_steps"])
    bank = _bank(cfg) if method == "sap" else None
    results, summary = attacks.attack_campaign(model, ds, method, acfg, bank)
    summary["seed"] = cfg["seed"]
    _write_jsonl(cfg["out"] / "campaign.jsonl", (r.to_record() for r in results))
    _write_json(cfg["out"] / "summary.json", summary)
    rate = summary["success_rate"]
    rate_text = "n/a" if rate is None else f"{rate:.4f}"
    return (f"attack[{method}]: success {summary['n_success']}/{summary['n_eligible']} eligible "
            f"(rate {rate_text}), median max|d2| "
            f"{(summary['smoothness_stats']['max_second_diff'] or {}).get('p50', float('nan')):.4g}")


def cmd_band(cfg: dict) -> str:
    model = nn.Classifier.load(cfg["model"])
    records = [attacks.AttackResult.from_record(r) for r in _read_jsonl(cfg["campaign"])]
    chosen = [r for r in records if r.eligible and r.success][: cfg["max_examples"]]
    if not chosen:
        raise RuntimeError("campaign contains no successful eligible attacks to build bands from")
    bank = _bank(cfg)
    noise = existence.NoiseSpec(cfg["noise_variance"])
    reports = []
    for k, r in enumerate(chosen):
        rep = existence.existence_experiment(
            model, r.original, r.adversarial, r.label, n=cfg["n"], bank=bank, epsilon=cfg["epsilon"],
            seed=cfg["seed"] + k, noise=noise, max_pairs=cfg["max_pairs"],
        )
        rep.id = r.id
        reports.append(rep)
    _write_jsonl(cfg["out"] / "existence.jsonl", (rep.to_dict() for rep in reports))

    def mean(key):
        vals = [getattr(rep, key) for rep in reports if getattr(rep, key) is not None]
        return float(np.mean(vals)) if vals else None

    summary = {
        "n": cfg["n"],
        "n_experiments": len(reports),
        "seed": cfg["seed"],
        "ids": [rep.id for rep in reports],
        "frac_gaussian_adversarial": mean("frac_gaussian_adversarial"),
        "frac_uniform_adversarial": mean("frac_uniform_adversarial"),
        "frac_concat_adversarial": mean("frac_concat_adversarial"),
    }
    _write_json(cfg["out"] / "band_summary.json", summary)
    fmt = lambda v: "n/a" if v is None else f"{v:.3f}"  # noqa: E731
    return (f"band: {len(reports)} experiments x n={cfg['n']}: gaussian {fmt(summary['frac_gaussian_adversarial'])}, "
            f"uniform {fmt(summary['frac_uniform_adversarial'])}, concat {fmt(summary['frac_concat_adversarial'])}")


def cmd_plot(cfg: dict) -> str:
    fig_dir = cfg["out"] / "figures"
    records = [attacks.AttackResult.from_record(r) for r in _read_jsonl(cfg["campaign"])]
    written = 0
    for r in records[: cfg["max_plots"]]:
        plotting.save_svg(plotting.attack_figure(r), fig_dir / f"attack_{r.id or written}.svg")
        written += 1
    if cfg.get("existence"):
        by_id = {r.id: r for r in records}
        for rep in _read_jsonl(cfg["existence"])[: cfg["max_plots"]]:
            src = by_id.get(rep["id"])
            if src is None:
                raise RuntimeError(f"existence report {rep['id']!r} has no matching campaign record")
            band = existence.Band(np.asarray(rep["band"]["min"]), np.asarray(rep["band"]["max"]), rep["n"])
            title = (f"{rep['id']}: {rep['n']} resamples, "
                     f"{100 * rep['frac_gaussian_adversarial']:.1f}% still adversarial")
            fig = plotting.band_figure(src.original, band, src.adversarial, title=title)
            plotting.save_svg(fig, fig_dir / f"band_{rep['id']}.svg")
            written += 1
    return f"plot: wrote {written} SVG files to {fig_dir}"


COMMANDS = {
    "gen-data": (cmd_gen_data, ()),
    "train": (cmd_train, ("data",)),
    "eval": (cmd_eval, ("model", "data")),
    "attack": (cmd_attack, ("model", "data")),
    "band": (cmd_band, ("model", "campaign")),
    "plot": (cmd_plot, ("campaign",)),
}

_COMMON = ("config", "verbose", "command")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func, required = COMMANDS[args.command]
    try:
        file_cfg = config.load_config(args.config) if args.config else None
    except (OSError, ValueError) as err:
        parser.error(f"cannot read config {args.config}: {err}")
    flags = {k: v for k, v in vars(args).items() if k not in _COMMON}
    cfg = config.resolve(args.command, DEFAULTS[args.command], file_cfg, flags)
    _require(parser, cfg, "out", *required)
    for key in ("out", "data", "model", "campaign", "existence"):
        if cfg.get(key) is not None:
            cfg[key] = Path(cfg[key])
    try:
        cfg["out"].mkdir(parents=True, exist_ok=True)
        summary = func(cfg)
        config.write_resolved(cfg["out"] / f"{args.command}.config.toml", args.command, cfg)
    except Exception as err:  # every runtime failure maps to exit code 1
        logger.debug("failure", exc_info=True)
        print(f"smoothadv {args.command}: error: {err}", file=sys.stderr)
        return 1
    print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
