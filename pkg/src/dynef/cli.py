"""Command-line entry point: ``dynef <subcommand> CONFIG [flags]``.

Subcommands ``train-ml``, ``train-bayes``, ``sample``, ``eval``,
``gradcheck`` and ``encode`` each read one JSON experiment config (validated
against ``config_schema.json``), apply flag overrides, and write their
artifacts into the config's ``output_dir``. Relative paths in the config are
resolved against the config file's directory.

Exit codes: 0 success, 1 runtime failure, 2 config/schema/input error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import platform
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import __version__, _rng, tasks
from .basis import BasisBank
from .graph import GraphPair
from .inference import GibbsConfig
from .io import load_checkpoint, read_series, save_checkpoint, write_series
from .learning import Prior, TrainConfig, evaluate_log_likelihood, gradient_check, init_params, train_bayes, train_ml
from .model import ModelParams, TimeSeries, sample_sequence

log = logging.getLogger("dynef")

METRIC_FIELDS = ["epoch", "train_loglik", "test_loglik", "wall_ms"]
HIST_BINS = 50


class ConfigError(Exception):
    """Bad config, schema violation or unreadable input (exit code 2)."""


def load_schema() -> dict:
    return json.loads(resources.files("dynef").joinpath("config_schema.json").read_text())


# ---------------------------------------------------------------------------
# config handling


def _set(d: dict, path: str, value) -> None:
    keys = path.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value


def apply_overrides(cfg: dict, args: argparse.Namespace, command: str) -> dict:
    cfg = copy.deepcopy(cfg)
    simple = {
        "lr": "train.lr", "epochs": "train.epochs", "snapshot_stride": "train.snapshot_stride",
        "neg_phase": "train.neg_phase", "gibbs_samples": "train.gibbs.n_samples",
        "gibbs_burnin": "train.gibbs.burn_in", "seed": "seed", "output_dir": "output_dir",
        "checkpoint": "checkpoint",
    }
    for attr, path in simple.items():
        v = getattr(args, attr, None)
        if v is not None and attr in ("output_dir", "checkpoint"):
            v = str(Path(v).resolve())     # command-line paths are relative to the cwd
        if v is not None:
            _set(cfg, path, v)
    if args.prior is not None:
        _set(cfg, "train.prior.kind", args.prior)
    if args.gmm_means is not None:
        _set(cfg, "train.prior.means", args.gmm_means)
    if args.gmm_std is not None:
        _set(cfg, "train.prior.std", args.gmm_std)
    if args.t_len is not None:
        if command == "sample":
            _set(cfg, "sample.T", args.t_len)
        if "task" in cfg:
            _set(cfg, "task.t_len", args.t_len)
    if args.rotation_range is not None:
        _set(cfg, "task.rotation_range", args.rotation_range)
    if args.no_lateral:
        _set(cfg, "task.lateral", False)
        if "graphs" in cfg:
            cfg["graphs"]["lateral"] = []
    return cfg


def read_config(path: str) -> tuple[dict, Path]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse config {p}: {exc}") from None
    return cfg, p.resolve().parent


def validate(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise ConfigError(f"config schema violation at {where}: {exc.message}") from None
    if "graphs" in cfg and "task" in cfg:
        raise ConfigError("give either 'graphs' or 'task' (which builds its own graphs), not both")
    if "task" in cfg and cfg.get("alphabet", 2) != 2:
        raise ConfigError("the spike-train task uses a binary alphabet")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


@dataclass
class Experiment:
    """Everything a subcommand needs, built from a validated config."""

    cfg: dict
    base: Path
    out: Path
    seed: int
    C: int
    graphs: GraphPair
    bank: BasisBank
    train_cfg: TrainConfig
    spec: tasks.TwoLayerSpec | None = None
    outputs: list[str] = field(default_factory=list)

    def path(self, rel: str | None) -> Path | None:
        if rel is None:
            return None
        p = Path(rel)
        return p if p.is_absolute() else self.base / p

    def artifact(self, name: str) -> Path:
        self.outputs.append(name)
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p


def build_experiment(cfg: dict, base: Path) -> Experiment:
    seed = int(cfg.get("seed", 0))
    C = int(cfg.get("alphabet", 2))
    try:
        bank = BasisBank.from_dict(cfg.get("basis", {"kind": "raised_cosine", "K": 2, "tau": 5}))
        spec = None
        if "task" in cfg:
            spec = _task_spec(cfg["task"], 1)   # n_inputs fixed once the images are known
            graphs = None
        else:
            graphs = GraphPair.from_dict(cfg["graphs"])
        t = cfg.get("train", {})
        g = t.get("gibbs", {})
        gibbs = GibbsConfig(n_samples=g.get("n_samples", 2000), burn_in=g.get("burn_in", 200),
                            thin=g.get("thin", 1), seed=seed)
        prior = _prior(t.get("prior", {}))
        train_cfg = TrainConfig(
            lr=t.get("lr", 0.05), epochs=t.get("epochs", 1), seed=seed,
            neg_phase=t.get("neg_phase", "auto"), gibbs=gibbs,
            init_range=tuple(t.get("init_range", (-1.0, 1.0))),
            lateral_init_range=tuple(t.get("lateral_init_range", (-2.0, 2.0))),
            prior=prior, dataset_size=t.get("dataset_size"),
            snapshot_stride=t.get("snapshot_stride", 10), burn_in=t.get("burn_in"),
            updates_per_epoch=t.get("updates_per_epoch"),
        )
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    out = Path(cfg["output_dir"])
    out = out if out.is_absolute() else base / out
    return Experiment(cfg, base, out, seed, C, graphs, bank, train_cfg, spec)


def _task_spec(t: dict, n_inputs: int) -> tasks.TwoLayerSpec:
    groups = tuple(tuple(g) for g in t.get("groups", (("digit", 2), ("orientation", 2))))
    return tasks.TwoLayerSpec(n_inputs, groups, t.get("t_len", 40), t.get("label_phase", 1))


def _prior(p: dict) -> Prior:
    if p.get("kind", "uniform") == "uniform":
        return Prior("uniform")
    means = tuple(float(m) for m in p.get("means", (0.0, -1.0)))
    weights = tuple(float(w) for w in p.get("weights", [1.0 / len(means)] * len(means)))
    return Prior("gaussian_mixture", means, float(p.get("std", 0.15)), weights)


# ---------------------------------------------------------------------------
# data


def _load_images(exp: Experiment) -> tuple[list, list]:
    """Train/test image examples for a task config; fixes the task graphs."""
    t = exp.cfg["task"]
    kw = dict(height=t.get("height"), width=t.get("width"), classes=t.get("classes"),
              augment=t.get("augment", True), rotation_range=tuple(t.get("rotation_range", (30.0, 150.0))))
    try:
        if "train" in t:
            train = tasks.load_dataset(exp.path(t["train"]), seed=_rng.child_seed(exp.seed, "augment", 0), **kw)
            test = (tasks.load_dataset(exp.path(t["test"]), seed=_rng.child_seed(exp.seed, "augment", 1), **kw)
                    if "test" in t else [])
        elif "synthetic" in t:
            s = t["synthetic"]
            size, noise = s.get("size", 8), s.get("noise", 0.1)
            train = tasks.synthetic_digits(s["n_per_class"], size, _rng.child_seed(exp.seed, "synthetic", 0), noise)
            n_test = s.get("n_test_per_class", 0)
            test = tasks.synthetic_digits(n_test, size, _rng.child_seed(exp.seed, "synthetic", 1), noise) if n_test else []
            if kw["augment"]:
                train = tasks.augment_rotations(train, _rng.child_seed(exp.seed, "augment", 0), kw["rotation_range"])
                test = tasks.augment_rotations(test, _rng.child_seed(exp.seed, "augment", 1), kw["rotation_range"])
        else:
            raise ConfigError("task needs 'train' (CSV path) or 'synthetic'")
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if not train:
        raise ConfigError("the training image set is empty")
    n_pix = train[0].pixels.size
    if any(ex.pixels.size != n_pix for ex in train + test):
        raise ConfigError("train and test images differ in size")
    groups = dict(exp.spec.groups)
    if "digit" in groups and max(ex.digit for ex in train + test) >= groups["digit"]:
        raise ConfigError("more digit classes in the data than output neurons in the 'digit' group")
    exp.spec = _task_spec(t, n_pix)
    exp.graphs = tasks.build_two_layer_graphs(exp.spec, lateral=t.get("lateral", True))
    return train, test


def _load_series(exp: Experiment) -> tuple[list[TimeSeries], list[TimeSeries]]:
    """Train/test sequences for a plain (non-task) config."""
    d = exp.cfg.get("data", {})
    N = exp.graphs.n_units
    try:
        if "train" in d:
            train = read_series(exp.path(d["train"]), exp.C, N)
            test = read_series(exp.path(d["test"]), exp.C, N) if "test" in d else []
        elif "synthetic" in d:
            s = d["synthetic"]
            truth = init_params(exp.graphs, exp.C, exp.bank.K,
                                TrainConfig(seed=_rng.child_seed(exp.seed, "truth")))
            n_test = s.get("n_test", 0)
            seqs = [sample_sequence(truth, exp.graphs, exp.bank, s["T"], _rng.child_seed(exp.seed, "synthetic", k))
                    for k in range(s["n_train"] + n_test)]
            train, test = seqs[: s["n_train"]], seqs[s["n_train"]:]
        else:
            raise ConfigError("config needs data.train (CSV path) or data.synthetic")
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    for x in train + test:
        if x.n_units != N:
            raise ConfigError(f"series has {x.n_units} units, graphs have {N}")
        if x.symbols.size and x.symbols.max() >= exp.C:
            raise ConfigError(f"series symbol outside alphabet of size {exp.C}")
    if not train:
        raise ConfigError("the training set is empty")
    return train, test


def _load_training_data(exp: Experiment):
    """Returns (train series, test series, loglik units, train images, test images)."""
    if exp.spec is None:
        train, test = _load_series(exp)
        return train, test, None, [], []
    images, test_images = _load_images(exp)
    train = tasks.encode_dataset(images, exp.spec, _rng.child_seed(exp.seed, "encode", 0))
    test = tasks.encode_dataset(test_images, exp.spec, _rng.child_seed(exp.seed, "encode", 1))
    return train, test, exp.spec.output_units, images, test_images


def _load_params(exp: Experiment, required: bool) -> ModelParams:
    ck = exp.cfg.get("checkpoint")
    if ck is None:
        if required:
            raise ConfigError("this command needs a checkpoint (config 'checkpoint' or --checkpoint)")
        return init_params(exp.graphs, exp.C, exp.bank.K, exp.train_cfg)
    path = exp.path(ck)
    try:
        params, graphs, bank = load_checkpoint(path)
    except (OSError, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load checkpoint {path}: {exc}") from None
    if graphs != exp.graphs or bank != exp.bank or params.C != exp.C:
        raise ConfigError(f"checkpoint {path} does not match the config's graphs/basis/alphabet")
    return params


# ---------------------------------------------------------------------------
# writers


def write_metrics(path: Path, rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (r[k] if k == "epoch" else repr(float(r[k]))) for k in METRIC_FIELDS})


def write_histogram(path: Path, params: ModelParams, samples: np.ndarray) -> None:
    """Histogram of every parameter block over the kept snapshots."""
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["block", "bin_left", "bin_right", "count"])
        if not len(samples):
            return
        blocks = params.with_flat(samples).blocks()
        for name in ("theta", "V", "U"):
            v = np.asarray(blocks[name]).ravel()
            if not v.size:
                continue
            counts, edges = np.histogram(v, bins=HIST_BINS)
            for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                w.writerow([name, repr(float(lo)), repr(float(hi)), int(c)])


def write_manifest(exp: Experiment, command: str) -> None:
    manifest = {
        "command": command,
        "config": exp.cfg,
        "config_sha256": config_hash(exp.cfg),
        "seed": exp.seed,
        "versions": {"dynef": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "outputs": sorted(set(exp.outputs)),
    }
    (exp.out / f"manifest_{command}.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_train_ml(exp: Experiment) -> int:
    train, test, units, _, _ = _load_training_data(exp)
    res = train_ml(train, exp.graphs, exp.bank, exp.train_cfg, test=test or None, loglik_units=units)
    save_checkpoint(exp.artifact("checkpoint.json"), res.params, exp.graphs, exp.bank)
    write_metrics(exp.artifact("metrics.csv"), res.metrics)
    return 0


def cmd_train_bayes(exp: Experiment) -> int:
    train, test, units, _, _ = _load_training_data(exp)
    res = train_bayes(train, exp.graphs, exp.bank, exp.train_cfg, test=test or None, loglik_units=units)
    for k, vec in enumerate(res.samples, start=1):
        save_checkpoint(exp.artifact(f"snapshots/snapshot_{k:06d}.json"), res.params.with_flat(vec),
                        exp.graphs, exp.bank)
    with exp.artifact("snapshots/index.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["snapshot", "update"])
        w.writerows((k, s) for k, s in enumerate(res.sample_steps, start=1))
    save_checkpoint(exp.artifact("checkpoint.json"), res.params, exp.graphs, exp.bank)
    write_metrics(exp.artifact("metrics.csv"), res.metrics)
    write_histogram(exp.artifact("histogram.csv"), res.params, res.samples)
    return 0


def cmd_sample(exp: Experiment) -> int:
    if exp.spec is not None:
        _load_images(exp)
    params = _load_params(exp, required=False)
    s = exp.cfg.get("sample", {})
    T, n = s.get("T", 10), s.get("n_sequences", 1)
    seqs = [sample_sequence(params, exp.graphs, exp.bank, T, _rng.child_seed(exp.seed, "sample", k),
                            gibbs=exp.train_cfg.gibbs, mode=s.get("mode", "auto"))
            for k in range(n)]
    write_series(exp.artifact("samples.csv"), seqs)
    return 0


def cmd_eval(exp: Experiment) -> int:
    if exp.spec is not None:
        _, test_images = _load_images(exp)
        params = _load_params(exp, required=True)
        if not test_images:
            raise ConfigError("eval needs a test image set (task.test or task.synthetic.n_test_per_class)")
        acc = tasks.evaluate_accuracy(params, exp.graphs, exp.bank, test_images, exp.spec,
                                      _rng.child_seed(exp.seed, "eval"))
        result = {"accuracy": acc, "n_examples": len(test_images)}
    else:
        _, test = _load_series(exp)
        params = _load_params(exp, required=True)
        if not test:
            raise ConfigError("eval needs test sequences (data.test or data.synthetic.n_test)")
        result = {"test_loglik": evaluate_log_likelihood(test, params, exp.graphs, exp.bank),
                  "n_sequences": len(test)}
    exp.artifact("eval.json").write_text(json.dumps(result, sort_keys=True, indent=1) + "\n")
    return 0


def cmd_gradcheck(exp: Experiment) -> int:
    if exp.spec is not None:
        _load_images(exp)
    g = exp.cfg.get("gradcheck", {})
    T, h, thr, n_models = g.get("T", 5), g.get("h", 1e-5), g.get("threshold", 1e-4), g.get("n_models", 1)
    base = _load_params(exp, required=False) if "checkpoint" in exp.cfg else None
    worst = {"theta": 0.0, "V": 0.0, "U": 0.0}
    for k in range(n_models):
        if base is None:
            cfg = TrainConfig(seed=_rng.child_seed(exp.seed, "gradcheck-model", k),
                              init_range=exp.train_cfg.init_range,
                              lateral_init_range=exp.train_cfg.lateral_init_range)
            params = init_params(exp.graphs, exp.C, exp.bank.K, cfg)
        else:
            params = base
        rng = _rng.stream(exp.seed, "gradcheck-data", k)
        x = TimeSeries(rng.integers(0, exp.C, (exp.graphs.n_units, T)), exp.C)
        for name, err in gradient_check(x, params, exp.graphs, exp.bank, h).items():
            worst[name] = max(worst[name], err)
    ok = max(worst.values()) <= thr
    result = {"max_relative_error": worst, "threshold": thr, "h": h, "T": T,
              "n_models": n_models, "pass": ok}
    exp.artifact("gradcheck.json").write_text(json.dumps(result, sort_keys=True, indent=1) + "\n")
    for name, err in worst.items():
        print(f"{name}: max relative error {err:.3e}")
    if not ok:
        print(f"gradcheck FAILED (threshold {thr:g})", file=sys.stderr)
        return 1
    return 0


def cmd_encode(exp: Experiment) -> int:
    if exp.spec is None:
        raise ConfigError("encode needs a 'task' section")
    train, test, _, images, test_images = _load_training_data(exp)
    for name, seqs, exs in (("train", train, images), ("test", test, test_images)):
        if not seqs:
            continue
        write_series(exp.artifact(f"{name}_series.csv"), seqs)
        with exp.artifact(f"{name}_labels.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seq"] + [n for n, _ in exp.spec.groups])
            for k, ex in enumerate(exs):
                w.writerow([k] + [ex.labels.get(n, "") for n, _ in exp.spec.groups])
    return 0


COMMANDS = {
    "train-ml": cmd_train_ml,
    "train-bayes": cmd_train_bayes,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "encode": cmd_encode,
}


def _pair(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}") from None
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}")
    return vals


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynef", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"dynef {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="JSON experiment config")
        p.add_argument("--output-dir", help="override output_dir")
        p.add_argument("--checkpoint", help="checkpoint JSON to load")
        p.add_argument("--seed", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--epochs", type=int)
        p.add_argument("--prior", choices=["uniform", "gmm"])
        p.add_argument("--gmm-means", type=_floats, help="comma-separated mixture means")
        p.add_argument("--gmm-std", type=float)
        p.add_argument("--snapshot-stride", type=int)
        p.add_argument("--gibbs-samples", type=int)
        p.add_argument("--gibbs-burnin", type=int)
        p.add_argument("--neg-phase", choices=["exact", "gibbs", "auto"])
        p.add_argument("--t-len", type=int, help="task sequence length; for `sample`, the sampled length")
        p.add_argument("--rotation-range", type=_pair, help="LO,HI in degrees")
        p.add_argument("--no-lateral", action="store_true", help="drop lateral edges")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:      # argparse reports usage errors with code 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw, base = read_config(args.config)
        cfg = apply_overrides(raw, args, args.command)
        validate(cfg)
        exp = build_experiment(cfg, base)
        exp.out.mkdir(parents=True, exist_ok=True)
        code = COMMANDS[args.command](exp)
        write_manifest(exp, args.command)
        return code
    except ConfigError as exc:
        print(f"dynef: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        log.debug("runtime failure", exc_info=True)
        print(f"dynef: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
