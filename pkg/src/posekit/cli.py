"""``posekit`` command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import config as C
from .errors import (
    ConfigMismatch,
    InvalidConfig,
    MalformedManifest,
    MissingImage,
    MissingReport,
    PosekitError,
)
from .geometry import CameraIntrinsics

log = logging.getLogger("posekit")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
SEED_ENV = "POSEKIT_SEED"
RESOLVED_CONFIG = "resolved_config.yaml"


class UsageError(PosekitError):
    """Bad paths or flag combinations; maps to exit code 2."""


def env_seed() -> int | None:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise InvalidConfig(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_keys(parser, keys, defaults_note):
    for key in keys:
        default = defaults_note(key.name)
        suffix = "" if default is None else f" (default: {default})"
        parser.add_argument(_flag(key.name), dest=key.name, default=None, metavar="VALUE",
                            help=key.help + suffix)


def _flags(args, keys) -> dict:
    return {k.name: getattr(args, k.name) for k in keys}


def _require_path(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} {p} does not exist")
    return p


def _write_resolved(out_dir: Path, flat: dict, info: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / RESOLVED_CONFIG).write_text(C.dump_flat(flat, info))


# --------------------------------------------------------------------------- generate


def _generate_default(name):
    if name in C.GENERATE_DEFAULTS:
        v = C.GENERATE_DEFAULTS[name]
        if name == "seed":
            return f"${SEED_ENV} or {v}"
        if name == "image_size":
            return f"{v[0]}x{v[1]}"
        return ",".join(map(str, v)) if isinstance(v, tuple) else v
    return "domain preset"


def cmd_generate(args) -> int:
    from .data import generate_dataset

    defaults = dict(C.GENERATE_DEFAULTS)
    seed = env_seed()
    if seed is not None:
        defaults["seed"] = seed
    file_values = C.load_config_file(args.config, C.GENERATE_KEYS) if args.config else {}
    flat = C.resolve(defaults, file_values, _flags(args, C.GENERATE_KEYS), C.GENERATE_KEYS)
    domain = C.domain_from_flat(flat)
    w, h = flat["image_size"]
    k = CameraIntrinsics.for_size(w, h, flat["focal_scale"])
    lo, hi = flat["distance_range"]
    if not 0 < lo < hi:
        raise InvalidConfig(f"distance_range must satisfy 0 < min < max, got {lo}, {hi}")
    out = Path(args.out)
    entries = generate_dataset(flat["n"], flat["seed"], domain, (lo, hi), k, out)
    flat.update({k_: v for k_, v in vars(domain).items() if k_ != "domain"})
    _write_resolved(out, flat)
    print(f"wrote {len(entries)} {domain.domain} images to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------- train


def _train_default(name):
    desk, paper = C.train_defaults("desk")[name], C.train_defaults("paper")[name]
    if name == "seed":
        return f"${SEED_ENV} or {desk}"
    if name == "lr_schedule":
        desk, paper = C.format_schedule(desk), C.format_schedule(paper)
    if name == "epochs":
        return "full schedule"
    return desk if desk == paper else f"desk {desk}, paper {paper}"


def resolve_train_flat(args) -> dict:
    defaults = C.train_defaults(args.profile)
    seed = env_seed()
    if seed is not None:
        defaults["seed"] = seed
    file_values = C.load_config_file(args.config, C.TRAIN_KEYS) if args.config else {}
    return C.resolve(defaults, file_values, _flags(args, C.TRAIN_KEYS), C.TRAIN_KEYS)


def cmd_train(args) -> int:
    from .data import load_dataset, load_intrinsics, split_train_val
    from .model import build_model, count_parameters, head_param_count
    from .training import save_checkpoint, train

    flat = resolve_train_flat(args)
    cfg = C.train_config_from_flat(flat)
    cfg.model.validate()
    data = _require_path(args.data, "dataset")
    records = load_dataset(data)
    if args.val_data:
        train_set, val_set = records, load_dataset(_require_path(args.val_data, "validation dataset"))
    else:
        train_set, val_set = split_train_val(records, flat["val_fraction"], cfg.seed)
    k = load_intrinsics(data)

    out = Path(args.out)
    n_params = count_parameters(build_model(cfg.model))
    channels = cfg.model.feature_channels
    head = "regression" if cfg.mode == "regression" else f"softclass({cfg.model.n_bins})"
    resolved = dict(flat, lr_schedule=cfg.lr_schedule, epochs=cfg.epochs)
    info = {
        "profile": args.profile,
        "head": head,
        "feature_channels": channels,
        "orientation_head_params": head_param_count(channels, cfg.mode, cfg.model.n_bins),
        "position_head_params": head_param_count(channels, "position"),
        "total_params": n_params,
        "n_train": len(train_set),
        "n_val": len(val_set),
    }
    _write_resolved(out, resolved, info)
    print(f"{head} on {cfg.model.backbone}: {n_params} parameters, "
          f"{len(train_set)} train / {len(val_set)} val images, {cfg.epochs} epochs")

    def progress(row):
        print(f"epoch {row.epoch:3d}  lr {row.lr:g}  loss {row.train_loss:.4f}  "
              f"val e_t {row.val_e_t:.3f} m  e_q {row.val_e_q:.2f} deg  E {row.val_esa:.4f}", flush=True)

    result = train(cfg, train_set, val_set, k, progress=progress)
    save_checkpoint(result.final, out / "checkpoint_final.pt")
    save_checkpoint(result.best, out / "checkpoint_best.pt")
    (out / "train_log.csv").write_text(result.log.to_csv())
    print(f"wrote checkpoints and train_log.csv to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------- evaluate / predict / score


def cmd_evaluate(args) -> int:
    from .data import load_dataset
    from .training import evaluate, oracle_report

    data = _require_path(args.data, "dataset")
    if args.oracle:
        report = oracle_report(load_dataset(data, require_images=False))
        report.meta["mode"] = "oracle"
    else:
        if not args.checkpoint:
            raise UsageError("--checkpoint is required unless --oracle is given")
        ckpt = _require_path(args.checkpoint, "checkpoint")
        report = evaluate(ckpt, load_dataset(data))
    for key, value in report.summary().items():
        print(f"{key}={value}")
    if args.report_out:
        Path(args.report_out).parent.mkdir(parents=True, exist_ok=True)
        report.write(args.report_out)
    return EXIT_OK


def cmd_predict(args) -> int:
    from .training import predict

    ckpt = _require_path(args.checkpoint, "checkpoint")
    images = _require_path(args.images, "image directory")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    text = predict(ckpt, images, args.out)
    print(f"wrote {len(text.splitlines()) - 1} predictions to {args.out}")
    return EXIT_OK


def cmd_score(args) -> int:
    from .training import score_submission

    sub = _require_path(args.submission, "submission")
    labels = _require_path(args.labels, "labels")
    if labels.is_dir():
        from .data.dataset import LABELS_FILE

        labels = labels / LABELS_FILE
    result = score_submission(sub, labels)
    for domain, rep in sorted(result.per_domain.items()):
        print(f"E[{domain}] = {rep.esa_score:.4f}  (e_t {rep.e_t_mean:.4f} m, e_q {rep.e_q_mean:.4f} deg, "
              f"n={rep.n_samples})")
    print(f"E = {result.report.esa_score:.4f}")
    if result.g_factor is None:
        print("G_factor = undefined")
    else:
        print(f"G_factor = {result.g_factor:.2f}")
    if args.report_out:
        result.report.write(args.report_out)
    return EXIT_OK


# --------------------------------------------------------------------------- plot


DEFAULT_EDGES = "3,5,8,12,16,20"


def _read_reports(paths):
    from .metrics import read_report

    reports = []
    for p in paths:
        if not Path(p).exists():
            raise MissingReport(f"report {p} does not exist")
        rep = read_report(p)
        if rep.n_samples == 0 or not rep.per_image:
            raise MissingReport(f"report {p} is empty")
        reports.append(rep)
    return reports


def bins_study_rows(reports) -> list[dict]:
    rows = []
    for rep in reports:
        try:
            n_bins, n_params = int(rep.meta["n_bins"]), int(rep.meta["n_params"])
        except (KeyError, ValueError):
            raise MissingReport("bins-study needs reports written by 'evaluate' (n_bins and n_params)") from None
        rows.append({"n_bins": n_bins, "n_params": n_params, "e_t_mean": rep.e_t_mean,
                     "e_q_mean": rep.e_q_mean, "esa_score": rep.esa_score})
    return sorted(rows, key=lambda r: (r["n_bins"], r["n_params"]))


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .metrics import distance_table_csv, error_by_distance

    reports = _read_reports(args.report)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.kind == "distance-error":
        if len(reports) != 1:
            raise UsageError("distance-error takes exactly one report")
        edges = [float(e) for e in args.edges.split(",")]
        bins = error_by_distance(reports[0], edges)
        out.with_suffix(".csv").write_text(distance_table_csv(bins))
        mids = [(b.lo + b.hi) / 2 for b in bins if b.count]
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
        a1.bar(mids, [b.e_t_mean for b in bins if b.count], width=[(b.hi - b.lo) * 0.9 for b in bins if b.count])
        a1.set_xlabel("distance [m]")
        a1.set_ylabel("mean position error [m]")
        a2.bar(mids, [b.e_q_mean for b in bins if b.count], width=[(b.hi - b.lo) * 0.9 for b in bins if b.count],
               color="tab:orange")
        a2.set_xlabel("distance [m]")
        a2.set_ylabel("mean orientation error [deg]")
    else:
        rows = bins_study_rows(reports)
        cols = ("n_bins", "n_params", "e_t_mean", "e_q_mean", "esa_score")
        lines = [",".join(cols)] + [
            ",".join(str(r[c]) if c in ("n_bins", "n_params") else f"{r[c]:.9g}" for c in cols) for r in rows
        ]
        out.with_suffix(".csv").write_text("\n".join(lines) + "\n")
        fig, a1 = plt.subplots(figsize=(5, 3.5))
        a1.plot([r["n_bins"] for r in rows], [r["e_q_mean"] for r in rows], "o-")
        a1.set_xlabel("bins per dimension")
        a1.set_ylabel("mean orientation error [deg]")
    fig.tight_layout()
    fig.savefig(out.with_suffix(".png"), dpi=100, metadata={"Software": None})
    plt.close(fig)
    print(f"wrote {out.with_suffix('.png')} and {out.with_suffix('.csv')}")
    return EXIT_OK


# --------------------------------------------------------------------------- parser


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Show defaults except for flags whose default is resolved later."""

    def _get_help_string(self, action):
        if action.default is None:
            return action.help
        return super()._get_help_string(action)


def build_parser() -> argparse.ArgumentParser:
    fmt = _HelpFormatter
    p = argparse.ArgumentParser(prog="posekit", description="Spacecraft pose estimation toolkit.", formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render a synthetic dataset", formatter_class=fmt)
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--config", help="flat YAML config file")
    _add_keys(g, C.GENERATE_KEYS, _generate_default)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a pose network", formatter_class=fmt)
    t.add_argument("--data", required=True, help="dataset directory (labels.json + images)")
    t.add_argument("--val-data", help="separate validation dataset; otherwise split off val_fraction")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--profile", choices=sorted(C.PROFILES), default="desk", help="recipe defaults")
    t.add_argument("--config", help="flat YAML config file")
    _add_keys(t, C.TRAIN_KEYS, _train_default)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint on a labeled dataset", formatter_class=fmt)
    e.add_argument("--checkpoint", help="checkpoint file")
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--report-out", help="write the metrics report here")
    e.add_argument("--oracle", action="store_true", help="score ground-truth predictions instead of a model")
    e.set_defaults(func=cmd_evaluate)

    pr = sub.add_parser("predict", help="write a submission CSV for a directory of images", formatter_class=fmt)
    pr.add_argument("--checkpoint", required=True, help="checkpoint file")
    pr.add_argument("--images", required=True, help="directory of *.png images")
    pr.add_argument("--out", required=True, help="submission CSV path")
    pr.set_defaults(func=cmd_predict)

    s = sub.add_parser("score", help="score a submission CSV against labels", formatter_class=fmt)
    s.add_argument("--submission", required=True, help="submission CSV")
    s.add_argument("--labels", required=True, help="labels.json or a dataset directory")
    s.add_argument("--report-out", help="write the metrics report here")
    s.set_defaults(func=cmd_score)

    pl = sub.add_parser("plot", help="figures plus their data tables", formatter_class=fmt)
    pl.add_argument("--report", required=True, nargs="+", help="report file(s) from evaluate or score")
    pl.add_argument("--kind", required=True, choices=("distance-error", "bins-study"), help="figure type")
    pl.add_argument("--out", required=True, help="output path stem; writes <stem>.png and <stem>.csv")
    pl.add_argument("--edges", default=DEFAULT_EDGES, help="distance bin edges in meters")
    pl.set_defaults(func=cmd_plot)
    return p


USAGE_ERRORS = (InvalidConfig, UsageError, ConfigMismatch, MissingImage)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"posekit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MalformedManifest as exc:
        print(f"posekit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE if args.command in ("train", "evaluate") else EXIT_RUNTIME
    except (PosekitError, OSError, ValueError, RuntimeError, ZeroDivisionError) as exc:
        print(f"posekit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
