"""Command line interface: ``iflg {gen-sbm,pretrain,probe,audit,sweep,selftest}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
divergence, 5 internal error (including a failing selftest).
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from . import __version__
from .augment import AugmentConfig, ViewAugment
from .encoder import CheckpointError, DivergenceError, load_checkpoint, save_checkpoint
from .evaluate import SupervisedConfig, bias_audit, linear_probe, supervised_embeddings
from .graph import DataError, SbmSpec, load_dataset, make_split, save_dataset, sbm_generate
from .numeric import DimensionError
from .selftest import run_selftest
from .trainer import TrainConfig, embed, run_algorithm1

log = logging.getLogger("iflg")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_INTERNAL = 0, 2, 3, 4, 5
SCHEMA_VERSION = 1
SWEEP_AXES = {"t_s": "t_s", "warmup_epochs": "warmup_epochs", "M": "warmup_epochs",
              "interval": "interval", "K": "interval", "beta": "beta", "tau": "tau"}
DEFAULT_MAX_RUNS = 256

TRAIN_DEFAULTS = {"lr": 5e-4, "beta": 1.0, "seed": 0, "optimizer": "adam",
                  "freeze_views": False, "probe_every": 0}
AUGMENT_DEFAULTS = {"p_edge_drop": 0.2, "p_feature_mask": 0.2, "mode": "uniform",
                    "view1": None, "view2": None}
ENCODER_DEFAULTS = {"hidden_dim": 256, "out_dim": 128, "projection": False}
PROBE_DEFAULTS = {"ratio": [1, 1, 8], "repeats": 3, "split_seed": 0, "epochs": 300, "lr": 1e-2}


class ConfigError(ValueError):
    """Configuration does not satisfy the schema."""


def load_schema(name: str) -> dict:
    text = resources.files("iflg").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def _validate(doc, schema_name: str, what: str):
    try:
        jsonschema.validate(doc, load_schema(schema_name))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{what}: {where}: {exc.message}") from None


def _read_json(path, what: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"{what} not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {path}: invalid JSON ({exc})") from None


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------- run manifest

def dataset_digest(manifest_path) -> str:
    """sha256 over the manifest and every file it references."""
    manifest_path = Path(manifest_path)
    h = hashlib.sha256(manifest_path.read_bytes())
    meta = json.loads(manifest_path.read_text())
    for key in ("edges", "features", "labels"):
        if meta.get(key):
            h.update(key.encode())
            h.update((manifest_path.parent / meta[key]).read_bytes())
    return h.hexdigest()


def run_id_for(resolved: dict, digest: str) -> str:
    blob = json.dumps(resolved, sort_keys=True).encode() + digest.encode()
    return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class RunManifest:
    command: str
    resolved_config: dict
    run_id: str
    dataset_digest: str | None
    outputs: dict = field(default_factory=dict)
    version: str = __version__

    def write(self, out_dir: Path) -> None:
        _write_json(out_dir / "manifest.json", asdict(self))


# -------------------------------------------------------------- config model

def resolve_config(raw: dict, base_dir: Path) -> dict:
    """Materialise every default; the dataset path becomes absolute."""
    _validate(raw, "config", "config")
    cfg = copy.deepcopy(raw)
    cfg["schema_version"] = SCHEMA_VERSION
    cfg["dataset"] = str((base_dir / cfg["dataset"]).resolve())
    cfg.setdefault("row_normalize_features", False)
    cfg["train"] = {**TRAIN_DEFAULTS, **cfg["train"]}
    cfg["augment"] = {**AUGMENT_DEFAULTS, **cfg.get("augment", {})}
    cfg["encoder"] = {**ENCODER_DEFAULTS, **cfg.get("encoder", {})}
    cfg["probe"] = {**PROBE_DEFAULTS, **cfg.get("probe", {})}
    if "supervised" in cfg:
        sup = asdict(SupervisedConfig())
        sup.pop("ratio")
        cfg["supervised"] = {**sup, **cfg["supervised"]}
    return cfg


def train_config(resolved: dict) -> TrainConfig:
    t, a, e, p = resolved["train"], resolved["augment"], resolved["encoder"], resolved["probe"]
    views = {k: None if a[k] is None else ViewAugment(**a[k]) for k in ("view1", "view2")}
    try:
        aug = AugmentConfig(a["p_edge_drop"], a["p_feature_mask"], a["mode"], seed=t["seed"], **views)
        return TrainConfig(
            warmup_epochs=t["warmup_epochs"], interval=t["interval"], rounds=t["rounds"],
            lr=t["lr"], tau=t["tau"], t_s=t["t_s"], beta=t["beta"], seed=t["seed"],
            augment=aug, hidden_dim=e["hidden_dim"], out_dim=e["out_dim"],
            projection=e["projection"], freeze_views=t["freeze_views"],
            optimizer=t["optimizer"], probe_every=t["probe_every"],
            probe_ratio=tuple(p["ratio"]), probe_repeats=p["repeats"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def supervised_config(resolved: dict) -> SupervisedConfig | None:
    sup = resolved.get("supervised")
    return None if sup is None else SupervisedConfig(**sup)


def apply_overrides(raw: dict, args) -> dict:
    raw = copy.deepcopy(raw)
    train = raw.setdefault("train", {})
    for name in ("warmup_epochs", "interval", "rounds", "lr", "tau", "t_s", "beta", "seed",
                 "optimizer", "probe_every"):
        value = getattr(args, name, None)
        if value is not None:
            train[name] = value
    if getattr(args, "freeze_views", False):
        train["freeze_views"] = True
    if getattr(args, "mode", None) == "baseline":
        train["rounds"] = 0
    if getattr(args, "algorithm1_literal", False):
        train.update(freeze_views=True, optimizer="sgd", probe_every=0)
    return raw


# ------------------------------------------------------------------ pretrain

def pretrain(resolved: dict, out_dir: Path) -> dict:
    """Run one configuration end to end and write all artifacts to ``out_dir``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = train_config(resolved)
    g = load_dataset(resolved["dataset"], resolved["row_normalize_features"])
    digest = dataset_digest(resolved["dataset"])
    run_id = run_id_for(resolved, digest)

    sup_cfg = supervised_config(resolved)
    sup_emb = None
    if sup_cfg is not None and g.labels is not None:
        sup_emb = supervised_embeddings(g, sup_cfg)
    pr = resolved["probe"]
    masks = make_split(g, tuple(pr["ratio"]), pr["split_seed"]) if g.labels is not None else None

    report = run_algorithm1(g, cfg, sup_embeddings=sup_emb, masks=masks)

    def probe(params):
        return linear_probe(embed(params, g), g.labels, masks, repeats=pr["repeats"],
                            epochs=pr["epochs"], lr=pr["lr"], seed=cfg.seed)

    final_probe = probe(report.final_params) if masks is not None else None

    outputs = {"report": "report.json", "final_checkpoint": "final.ckpt", "loss": "loss.csv",
               "rounds": "rounds.csv", "manifest": "manifest.json"}
    save_checkpoint(report.final_params, out_dir / "final.ckpt")
    if report.best_params is not None:
        save_checkpoint(report.best_params, out_dir / "best.ckpt")
        outputs["best_checkpoint"] = "best.ckpt"
    with open(out_dir / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(report.losses):
            w.writerow([i, _fmt(float(v))])
    with open(out_dir / "rounds.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        cols = ["round_id", "first_epoch", "num_unlabeled", "same_class_ratio", "sup_sim",
                "probe_valid", "probe_test"]
        w.writerow(cols)
        for r in report.rounds:
            d = r.to_dict()
            w.writerow([_fmt(d[c]) for c in cols])

    doc = report.to_dict()
    doc.update(schema_version=SCHEMA_VERSION, run_id=run_id, config=resolved,
               final_probe=None if final_probe is None else final_probe.to_dict(), outputs=outputs)
    _validate(doc, "report", "report")
    _write_json(out_dir / "report.json", doc)
    RunManifest("pretrain", resolved, run_id, digest, outputs).write(out_dir)
    return doc


def cmd_pretrain(args) -> int:
    config_path = Path(args.config)
    raw = apply_overrides(_read_json(config_path, "config"), args)
    resolved = resolve_config(raw, config_path.parent)
    doc = pretrain(resolved, Path(args.out_dir))
    probe = doc["final_probe"]
    msg = f"run {doc['run_id']}: {len(doc['losses'])} epochs, final loss {doc['losses'][-1]:.6f}"
    if probe is not None:
        msg += f", probe accuracy {probe['mean']:.4f} +/- {probe['std']:.4f}"
    print(msg)
    return EXIT_OK


# --------------------------------------------------------------------- probe

def parse_ratio(text: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(p) for p in text.split(":"))
    except ValueError:
        raise ConfigError(f"bad ratio {text!r}; expected e.g. 1:1:8") from None
    if len(parts) != 3 or min(parts) <= 0:
        raise ConfigError(f"bad ratio {text!r}; expected three positive parts")
    return parts


def cmd_probe(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ratio = parse_ratio(args.ratio)
    params = load_checkpoint(args.checkpoint)
    g = load_dataset(args.dataset, args.row_normalize)
    if g.labels is None:
        raise DataError("probing needs a labeled dataset")
    f, h, d = params.dims
    if f != g.feature_dim:
        raise DimensionError(
            f"checkpoint expects {f} input features (encoder {f}x{h}x{d}); dataset has {g.feature_dim}")
    masks = make_split(g, ratio, args.split_seed)
    res = linear_probe(embed(params, g), g.labels, masks, repeats=args.repeats, seed=args.seed)
    doc = {"schema_version": SCHEMA_VERSION, "checkpoint": str(args.checkpoint),
           "dataset": str(args.dataset), **res.to_dict()}
    _write_json(out_dir / args.name, doc)
    resolved = {"checkpoint": str(Path(args.checkpoint).resolve()), "ratio": list(ratio),
                "split_seed": args.split_seed, "repeats": args.repeats, "seed": args.seed,
                "row_normalize": args.row_normalize}
    digest = dataset_digest(args.dataset)
    RunManifest("probe", resolved, run_id_for(resolved, digest), digest,
                {"probe": args.name, "manifest": "manifest.json"}).write(out_dir)
    print(f"probe accuracy {res.mean:.4f} +/- {res.std:.4f} (split {masks.sizes()})")
    return EXIT_OK


# --------------------------------------------------------------------- audit

def cmd_audit(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    g = load_dataset(args.dataset, args.row_normalize)
    if g.labels is None:
        raise DataError("the bias audit needs a labeled dataset")
    try:
        aug = AugmentConfig(args.p_edge_drop, args.p_feature_mask, args.aug_mode, seed=args.seed)
        sup = SupervisedConfig(args.sup_hidden, args.sup_out, args.sup_epochs, args.sup_lr, seed=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    audit = bias_audit(g, aug, sup, top_k=args.top_k, seed=args.seed)
    audit.write_csv(out_dir / "audit.csv")
    summary = {"schema_version": SCHEMA_VERSION, "dataset": str(args.dataset), **audit.summary()}
    _write_json(out_dir / "audit.json", summary)
    resolved = {"augment": asdict(aug), "supervised": {**asdict(sup), "ratio": list(sup.ratio)},
                "top_k": args.top_k, "seed": args.seed}
    digest = dataset_digest(args.dataset)
    RunManifest("audit", resolved, run_id_for(resolved, digest), digest,
                {"csv": "audit.csv", "summary": "audit.json", "manifest": "manifest.json"}).write(out_dir)
    print(f"exceed-diagonal fraction {audit.exceed_fraction:.4f} over {g.num_nodes} nodes")
    return EXIT_OK


# ------------------------------------------------------------------- gen-sbm

def cmd_gen_sbm(args) -> int:
    try:
        spec = SbmSpec(tuple(args.blocks), args.p_in, args.p_out, args.feature_dim,
                       args.mu, args.sigma, args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out_dir = Path(args.out_dir)
    path = save_dataset(sbm_generate(spec), out_dir, args.name)
    resolved = {**asdict(spec), "block_sizes": list(spec.block_sizes), "name": args.name}
    digest = dataset_digest(path)
    RunManifest("gen-sbm", resolved, run_id_for(resolved, digest), digest,
                {"dataset": path.name, "manifest": "manifest.json"}).write(out_dir)
    print(path)
    return EXIT_OK


# --------------------------------------------------------------------- sweep

def sweep_points(spec: dict) -> list[tuple[dict, int]]:
    axes = sorted(spec["axes"].items())
    names = [SWEEP_AXES[k] for k, _ in axes]
    if len(set(names)) != len(names):
        raise ConfigError("sweep axes name the same parameter twice")
    combos = itertools.product(*(sorted(v) for _, v in axes))
    points = [(dict(zip(names, c)), s) for c in combos for s in sorted(spec["seeds"])]
    cap = spec.get("max_runs", DEFAULT_MAX_RUNS)
    if len(points) > cap:
        raise ConfigError(f"sweep has {len(points)} runs, above the cap of {cap}")
    return points


def _sweep_run(job) -> dict:
    raw, base_dir, params, seed, out_dir = job
    row = {**params, "seed": seed, "status": "ok", "probe_mean": None, "probe_std": None,
           "first_num_unlabeled": None, "final_num_unlabeled": None,
           "final_same_class_ratio": None, "error": ""}
    try:
        doc = pretrain(resolve_config(raw, Path(base_dir)), Path(out_dir))
        rounds = doc["rounds"]
        if rounds:
            row["first_num_unlabeled"] = rounds[0]["num_unlabeled"]
            row["final_num_unlabeled"] = rounds[-1]["num_unlabeled"]
            row["final_same_class_ratio"] = rounds[-1]["same_class_ratio"]
        if doc["final_probe"] is not None:
            row["probe_mean"] = doc["final_probe"]["mean"]
            row["probe_std"] = doc["final_probe"]["std"]
    except Exception as exc:  # recorded per row; the sweep continues
        row["status"] = type(exc).__name__
        row["error"] = str(exc)
    return row


def run_sweep(spec: dict, base_dir: Path, out_dir: Path, workers: int = 1) -> list[dict]:
    _validate(spec, "sweep", "sweep")
    base = spec["base"]
    if isinstance(base, str):
        base_path = base_dir / base
        base, base_dir = _read_json(base_path, "base config"), base_path.parent
    points = sweep_points(spec)
    jobs = []
    for k, (params, seed) in enumerate(points):
        raw = copy.deepcopy(base)
        raw.setdefault("train", {}).update(params, seed=seed)
        jobs.append((raw, str(base_dir), params, seed, str(out_dir / f"run_{k:04d}")))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_run, jobs))
    else:
        rows = [_sweep_run(j) for j in jobs]
    names = sorted({SWEEP_AXES[k] for k in spec["axes"]})
    rows.sort(key=lambda r: tuple(r[n] for n in names) + (r["seed"],))
    return rows


def cmd_sweep(args) -> int:
    sweep_path = Path(args.sweep)
    spec = _read_json(sweep_path, "sweep")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = args.workers or int(os.environ.get("IFLG_THREADS", "1"))
    rows = run_sweep(spec, sweep_path.parent, out_dir, max(1, workers))
    cols = list(rows[0].keys()) if rows else []
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])
    resolved = {"sweep": spec}
    RunManifest("sweep", resolved, run_id_for(resolved, ""), None,
                {"csv": "sweep.csv", "manifest": "manifest.json"}).write(out_dir)
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} runs, {failed} failed -> {out_dir / 'sweep.csv'}")
    return EXIT_OK


# ------------------------------------------------------------------ selftest

def cmd_selftest(args) -> int:
    ok, results, elapsed = run_selftest(args.seed)
    for r in results:
        print(r.line())
    print(f"{'PASS' if ok else 'FAIL'}: {sum(r.passed for r in results)}/{len(results)} checks")
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(out_dir / "selftest.json", {
            "passed": ok, "seconds": elapsed,
            "checks": [asdict(r) for r in results]})
    return EXIT_OK if ok else EXIT_INTERNAL


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iflg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-sbm", help="write a planted-partition dataset")
    g.add_argument("--blocks", type=int, nargs="+", required=True)
    g.add_argument("--p-in", type=float, required=True)
    g.add_argument("--p-out", type=float, required=True)
    g.add_argument("--feature-dim", type=int, required=True)
    g.add_argument("--mu", type=float, default=4.0)
    g.add_argument("--sigma", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--name", default="sbm")
    g.add_argument("--out-dir", required=True)
    g.set_defaults(func=cmd_gen_sbm)

    t = sub.add_parser("pretrain", help="warm-up plus corrected-loss rounds")
    t.add_argument("--config", required=True)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--mode", choices=["full", "baseline"], default="full",
                   help="baseline runs the warm-up only (no rounds)")
    t.add_argument("--algorithm1-literal", action="store_true",
                   help="single view draw, plain gradient descent, return the last iterate")
    t.add_argument("--freeze-views", action="store_true")
    t.add_argument("--warmup-epochs", type=int)
    t.add_argument("--interval", type=int)
    t.add_argument("--rounds", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--tau", type=float)
    t.add_argument("--t-s", type=float)
    t.add_argument("--beta", type=float)
    t.add_argument("--optimizer", choices=["adam", "sgd"])
    t.add_argument("--probe-every", type=int)
    t.set_defaults(func=cmd_pretrain)

    q = sub.add_parser("probe", help="linear probe of a checkpoint on the original graph")
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--dataset", required=True)
    q.add_argument("--ratio", default="1:1:8")
    q.add_argument("--split-seed", type=int, default=0)
    q.add_argument("--repeats", type=int, default=3)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--row-normalize", action="store_true")
    q.add_argument("--name", default="probe.json")
    q.add_argument("--out-dir", required=True)
    q.set_defaults(func=cmd_probe)

    a = sub.add_parser("audit", help="sampling-bias audit with a supervised encoder")
    a.add_argument("--dataset", required=True)
    a.add_argument("--p-edge-drop", type=float, default=0.2)
    a.add_argument("--p-feature-mask", type=float, default=0.2)
    a.add_argument("--aug-mode", choices=["uniform", "degree_adaptive"], default="uniform")
    a.add_argument("--sup-hidden", type=int, default=64)
    a.add_argument("--sup-out", type=int, default=32)
    a.add_argument("--sup-epochs", type=int, default=200)
    a.add_argument("--sup-lr", type=float, default=1e-2)
    a.add_argument("--top-k", type=int, default=20)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--row-normalize", action="store_true")
    a.add_argument("--out-dir", required=True)
    a.set_defaults(func=cmd_audit)

    s = sub.add_parser("sweep", help="grid over t_s, M, K, beta, tau and seeds")
    s.add_argument("--sweep", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--workers", type=int, help="defaults to $IFLG_THREADS or 1")
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("selftest", help="gradient checks and oracle equivalence")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out-dir")
    c.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, DimensionError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, FloatingPointError) as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except Exception as exc:
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
