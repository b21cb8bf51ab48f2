"""Command-line front end.

Subcommands: synth, extract, train, predict, evaluate, ablate, validate.
Configuration resolves in three layers -- built-in defaults, then a JSON
--config file, then explicit flags -- and the fully resolved config is
echoed to stderr on every run.  Machine-readable output (JSON/CSV) goes to
stdout or files; human text goes to stderr.

Exit codes: 0 ok, 2 config error, 3 I/O error, 4 validation or dimension
error, 5 numeric error.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path
from typing import List, Optional

from . import baselines, featureset, harness, metaset, regress, represent
from .errors import (
    ConfigError,
    FormatError,
    InputError,
    NumericError,
    TrainingError,
    ValidationError,
    WorkspaceError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_VALIDATION = 4
EXIT_NUMERIC = 5

_TRAIN_DEFAULT = harness.default_train_config()


def _defaults() -> dict:
    return {
        "seed": 0,
        "workspace": None,
        "synth": {
            "n_train": 200,
            "n_val": 50,
            "n_test": 50,
            "hidden_dim": 64,
            "task": metaset.ToyTask().to_dict(),
            "ranges": None,
        },
        "representation": represent.RepresentationOptions().to_dict(),
        "train": _TRAIN_DEFAULT.to_dict(),
        "evaluate": {
            "methods": list(harness.ALL_METHODS),
            "seeds": [0, 1, 2, 3, 4],
            "pred_score_taus": [0.8, 0.9],
            "entropy_score_taus": [0.2, 0.3],
            "random_sampler_draws": 5,
        },
    }


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(out.get(key), dict) and isinstance(value, dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _resolve_config(args: argparse.Namespace) -> dict:
    resolved = _defaults()
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: config is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        unknown = set(loaded) - set(resolved)
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        resolved = _deep_merge(resolved, loaded)
    if getattr(args, "seed", None) is not None:
        resolved["seed"] = args.seed
        resolved["evaluate"]["seeds"] = [args.seed]
    if getattr(args, "workspace", None):
        resolved["workspace"] = args.workspace
    for flag, path_keys in getattr(args, "_flag_paths", {}).items():
        value = getattr(args, flag, None)
        if value is not None:
            node = resolved
            for key in path_keys[:-1]:
                node = node[key]
            node[path_keys[-1]] = value
    return resolved


def _echo_config(resolved: dict) -> None:
    print(json.dumps({"resolved_config": resolved}, sort_keys=True), file=sys.stderr)


def _require_workspace(resolved: dict) -> Path:
    if not resolved.get("workspace"):
        raise ConfigError("a workspace path is required (--workspace or config)")
    return Path(resolved["workspace"])


def _cmd_synth(args: argparse.Namespace, resolved: dict) -> int:
    workspace = _require_workspace(resolved)
    synth = resolved["synth"]
    for key in ("n_train", "n_val", "n_test"):
        if int(synth[key]) < 1:
            raise ConfigError(f"{key.replace('_', '-')} must be >= 1, got {synth[key]}")
    task = metaset.ToyTask.from_dict(synth["task"])
    seed = int(resolved["seed"])
    classifier = metaset.train_toy_classifier(task, seed=seed, hidden_dim=int(synth["hidden_dim"]))
    records = metaset.generate_sets(
        classifier,
        task,
        workspace=workspace,
        n_train_meta=int(synth["n_train"]),
        n_val_meta=int(synth["n_val"]),
        n_test_meta=int(synth["n_test"]),
        seed=seed,
        ranges=_ranges_from_config(synth["ranges"]),
    )
    opts = represent.RepresentationOptions.from_dict(resolved["representation"])
    source = featureset.load(workspace / "source.fset")
    represent.save_frame(represent.build_reference_frame(source, opts), workspace / "frame.json")
    print(
        json.dumps(
            {
                "workspace": str(workspace),
                "records": len(records),
                "clean_test_accuracy": classifier.clean_test_accuracy,
            }
        )
    )
    return EXIT_OK


def _ranges_from_config(raw: Optional[dict]) -> Optional[dict]:
    if raw is None:
        return None
    out = {}
    for group, kinds in raw.items():
        out[group] = {
            kind: {name: tuple(bounds) for name, bounds in params.items()}
            for kind, params in kinds.items()
        }
    return out


def _cmd_extract(args: argparse.Namespace, resolved: dict) -> int:
    opts_dict = dict(resolved["representation"])
    if args.options:
        try:
            override = json.loads(args.options)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--options is not valid JSON: {exc}") from exc
        if not isinstance(override, dict):
            raise ConfigError("--options must be a JSON object")
        opts_dict.update(override)
    opts = represent.RepresentationOptions.from_dict(opts_dict)
    frame = represent.load_frame(args.frame)
    fs = featureset.load(args.input)
    rep = represent.assemble(fs, frame, opts)
    represent.save_representation(rep, args.output)
    print(json.dumps({"flat_length": int(rep.flat.shape[0]), "output": args.output}))
    return EXIT_OK


def _experiment_config(resolved: dict) -> harness.ExperimentConfig:
    ev = resolved["evaluate"]
    return harness.ExperimentConfig(
        workspace=_require_workspace(resolved),
        representation=represent.RepresentationOptions.from_dict(resolved["representation"]),
        methods=tuple(ev["methods"]),
        train=regress.TrainConfig.from_dict(resolved["train"]),
        seeds=tuple(int(s) for s in ev["seeds"]),
        pred_score_taus=tuple(float(t) for t in ev["pred_score_taus"]),
        entropy_score_taus=tuple(float(t) for t in ev["entropy_score_taus"]),
        random_sampler_draws=int(ev["random_sampler_draws"]),
    )


def _cmd_train(args: argparse.Namespace, resolved: dict) -> int:
    cfg = _experiment_config(resolved)
    cfg = harness.ExperimentConfig(
        workspace=cfg.workspace,
        representation=cfg.representation,
        methods=(args.method,),
        train=cfg.train,
        seeds=(int(resolved["seed"]),),
        pred_score_taus=cfg.pred_score_taus,
        entropy_score_taus=cfg.entropy_score_taus,
        random_sampler_draws=cfg.random_sampler_draws,
    )
    model = harness.fit_single(cfg, args.method)
    regress.save_model(model, args.output)
    history = model.history or {}
    print(
        json.dumps(
            {
                "output": args.output,
                "input_dim": model.input_dim,
                "best_val_loss": min(history.get("val_loss", [float("nan")])),
            }
        )
    )
    return EXIT_OK


def _cmd_predict(args: argparse.Namespace, resolved: dict) -> int:
    model = regress.load_model(args.model)
    rep = represent.load_representation(args.input)
    value = regress.predict(model, rep.flat)
    print(json.dumps({"prediction": value}))
    return EXIT_OK


def _cmd_evaluate(args: argparse.Namespace, resolved: dict) -> int:
    cfg = _experiment_config(resolved)
    report = harness.run_experiment(cfg)
    out_dir = Path(args.output_dir) if args.output_dir else cfg.workspace
    json_path, csv_path = harness.write_report(report, out_dir)
    print(json.dumps({"report_json": str(json_path), "report_csv": str(csv_path)}))
    return EXIT_OK


def _cmd_ablate(args: argparse.Namespace, resolved: dict) -> int:
    report = harness.load_report(args.report)
    table = harness.ablation_table(report)
    path = harness.write_ablation_csv(table, args.output)
    print(json.dumps({"output": str(path), "rows": len(table)}))
    return EXIT_OK


def _cmd_validate(args: argparse.Namespace, resolved: dict) -> int:
    try:
        fs = featureset.load(args.input, strict=False)
    except FormatError as exc:
        print(json.dumps({"violations": [str(exc)]}))
        return EXIT_VALIDATION
    problems = featureset.validate(fs)
    print(json.dumps({"violations": problems}))
    return EXIT_OK if not problems else EXIT_VALIDATION


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="base random seed")
    common.add_argument("--workspace", default=None, help="workspace directory")
    common.add_argument("--config", default=None, help="JSON config file overriding defaults")

    parser = argparse.ArgumentParser(
        prog="autoeval",
        description="Estimate classifier accuracy on unlabeled sets from dataset representations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="synthesize a meta-set workspace")
    p.add_argument("--n-train", type=int, default=None, dest="n_train")
    p.add_argument("--n-val", type=int, default=None, dest="n_val")
    p.add_argument("--n-test", type=int, default=None, dest="n_test")
    p.set_defaults(
        func=_cmd_synth,
        _flag_paths={
            "n_train": ("synth", "n_train"),
            "n_val": ("synth", "n_val"),
            "n_test": ("synth", "n_test"),
        },
    )

    p = sub.add_parser("extract", parents=[common], help="build one dataset representation")
    p.add_argument("--input", required=True, help="feature-set file")
    p.add_argument("--frame", required=True, help="reference frame JSON")
    p.add_argument("--options", default=None, help="JSON overrides for representation options")
    p.add_argument("--output", required=True, help="representation JSON to write")
    p.set_defaults(func=_cmd_extract, _flag_paths={})

    p = sub.add_parser("train", parents=[common], help="train one method's regressor")
    p.add_argument("--method", default=harness.OURS, help="method whose design matrix to use")
    p.add_argument("--output", required=True, help="model JSON to write")
    p.set_defaults(func=_cmd_train, _flag_paths={})

    p = sub.add_parser("predict", parents=[common], help="predict accuracy for one representation")
    p.add_argument("--model", required=True, help="model JSON from `train`")
    p.add_argument("--input", required=True, help="representation JSON from `extract`")
    p.set_defaults(func=_cmd_predict, _flag_paths={})

    p = sub.add_parser("evaluate", parents=[common], help="run the full experiment roster")
    p.add_argument("--output-dir", default=None, dest="output_dir")
    p.set_defaults(func=_cmd_evaluate, _flag_paths={})

    p = sub.add_parser("ablate", parents=[common], help="leave-one-out deltas from a report")
    p.add_argument("--report", required=True, help="report.json from `evaluate`")
    p.add_argument("--output", required=True, help="ablation CSV to write")
    p.set_defaults(func=_cmd_ablate, _flag_paths={})

    p = sub.add_parser("validate", parents=[common], help="list violations in a feature-set file")
    p.add_argument("--input", required=True, help="feature-set file to check")
    p.set_defaults(func=_cmd_validate, _flag_paths={})
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        resolved = _resolve_config(args)
        _echo_config(resolved)
        return args.func(args, resolved)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValidationError, FormatError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericError, TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (WorkspaceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
