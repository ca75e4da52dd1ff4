"""Command-line front end: ``strkm {gen,train,score,eval,report}``.

Each verb reads its settings from the matching section of a JSON config
(``--config``) and lets flags override them. Relative paths in a config are
resolved against the config file's directory. Exit codes: 0 ok,
1 validation error, 2 IO/format error, 3 training divergence.

The environment variable ``STRKM_THREADS`` caps BLAS/OpenMP threads.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as D
from .archive import ModelArchive, load_archive, save_archive
from .baselines import pca_fit, pca_score
from .energy import ALL_KINDS, EnergyKind, energy_terms, select_threshold
from .errors import FormatError, StrkmError, ValidationError
from .linalg import derive_rng
from .metrics import evaluate, standardize_scores
from .model import TrainConfig, train

log = logging.getLogger("strkm")

SECTION_KEYS = {
    "gen": {"datasets"},
    "train": {"data", "model", "history", "epochs", "batch_size", "lr_adam", "lr_cayley",
              "lambda", "subspace_dim", "feature_dim", "hidden", "deterministic",
              "train_slopes", "tpr_target"},
    "score": {"model", "energies", "jobs"},
    "eval": {"jobs", "bins", "tpr_target"},
    "report": {"model", "in_data", "out_data", "out", "pca_var_threshold", "tpr_target"},
}
TOP_KEYS = {"seed", *SECTION_KEYS}
GEN_KEYS = {
    "blobs": {"kind", "n", "centers", "spread", "box", "out", "seed", "split", "out_split"},
    "ring": {"kind", "n", "radius", "thickness", "center", "box", "out", "seed", "split", "out_split"},
    "ecg": {"kind", "n", "anomaly", "noise", "out", "seed", "split", "out_split"},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


# --- config helpers -------------------------------------------------------

class RunConfig:
    """A parsed config file; sections are validated against known keys."""

    def __init__(self, raw: dict | None = None, base: Path | None = None):
        self.raw = raw or {}
        self.base = base or Path.cwd()
        unknown = set(self.raw) - TOP_KEYS
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        for name, keys in SECTION_KEYS.items():
            sec = self.raw.get(name, {})
            if not isinstance(sec, dict):
                raise ValidationError(f"config section {name!r} must be an object")
            bad = set(sec) - keys
            if bad:
                raise ValidationError(f"unknown keys in section {name!r}: {sorted(bad)}")

    @classmethod
    def load(cls, path) -> "RunConfig":
        if path is None:
            return cls()
        p = Path(path)
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{p}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ValidationError(f"{p}: top level must be an object")
        return cls(raw, p.resolve().parent)

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name, {}))

    def path(self, value) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base / p

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))


def _require_input(p: Path, what: str) -> Path:
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _prepare_output(p: Path) -> Path:
    p.parent.mkdir(parents=True, exist_ok=True)
    if p.is_dir():
        raise IsADirectoryError(f"output path is a directory: {p}")
    return p


def _need(sec: dict, key: str, verb: str):
    if sec.get(key) is None:
        raise ValidationError(f"{verb}: missing required setting {key!r}")
    return sec[key]


# --- score CSV ------------------------------------------------------------

def write_scores(path, columns: dict) -> None:
    names = list(columns)
    n = len(next(iter(columns.values())))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", *names])
        for i in range(n):
            row = [i]
            for k in names:
                v = columns[k][i]
                row.append(v if isinstance(v, str) else repr(float(v)))
            w.writerow(row)


def read_score_column(path, column: str) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty score file", line=1) from None
        if column not in header:
            raise FormatError(f"{path}: no column {column!r} (have {header})", line=1)
        j = header.index(column)
        vals = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                vals.append(float(row[j]))
            except (ValueError, IndexError):
                raise FormatError(f"{path}: bad value in column {column!r}", line=lineno) from None
    if not vals:
        raise FormatError(f"{path}: no score rows")
    return np.array(vals)


def score_dataset(archive: ModelArchive, x: np.ndarray, kinds) -> dict:
    terms = energy_terms(archive.model, x)
    cols = {k.value: terms[k] for k in kinds}
    for k in kinds:
        gamma = archive.thresholds.get(k.value)
        if gamma is not None:
            cols[f"flag_{k.value}"] = np.where(terms[k] > gamma, "out", "in")
    return cols


# --- verbs ----------------------------------------------------------------

def _gen_one(spec: dict, seed: int, counter: int, cfg: RunConfig):
    kind = spec.get("kind")
    if kind not in GEN_KEYS:
        raise ValidationError(f"gen: unknown kind {kind!r} (choose from {sorted(GEN_KEYS)})")
    bad = set(spec) - GEN_KEYS[kind]
    if bad:
        raise ValidationError(f"gen: unknown keys for {kind}: {sorted(bad)}")
    out = _prepare_output(cfg.path(_need(spec, "out", "gen")))
    rng = derive_rng(int(spec.get("seed", seed)), 100 + counter)
    n = int(_need(spec, "n", "gen"))
    if kind == "blobs":
        ds = D.gen_blobs(n, _need(spec, "centers", "gen"), float(spec.get("spread", 0.1)), rng,
                         tuple(spec.get("box", (-1.0, 1.0))), name=out.stem)
    elif kind == "ring":
        ds = D.gen_ring(n, float(spec.get("radius", 0.9)), float(spec.get("thickness", 0.05)), rng,
                        tuple(spec.get("center", (0.0, 0.0))), tuple(spec.get("box", (-1.0, 1.0))),
                        name=out.stem)
    else:
        ds = D.gen_ecg_like(n, bool(spec.get("anomaly", False)), rng,
                            float(spec.get("noise", 0.03)), name=out.stem)
    if "split" in spec:
        second = _prepare_output(cfg.path(_need(spec, "out_split", "gen")))
        first, rest = D.split(ds, float(spec["split"]), derive_rng(int(spec.get("seed", seed)), 200 + counter))
        D.save_csv(first, out)
        D.save_csv(rest, second)
        return [(out, len(first)), (second, len(rest))]
    D.save_csv(ds, out)
    return [(out, len(ds))]


def cmd_gen(args, cfg: RunConfig) -> int:
    seed = args.seed if args.seed is not None else cfg.seed
    if args.kind:
        spec = {"kind": args.kind, "n": args.n, "out": args.out}
        if args.params:
            try:
                spec.update(json.loads(args.params))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"--params is not valid JSON ({exc})") from None
        specs = [spec]
    else:
        specs = cfg.section("gen").get("datasets", [])
        if not specs:
            raise ValidationError("gen: nothing to generate (give --kind or a config 'gen.datasets')")
    for i, spec in enumerate(specs):
        for path, n in _gen_one(dict(spec), seed, i, cfg):
            print(f"wrote {path} ({n} rows)")
    return 0


def train_config_from(sec: dict, args, seed: int) -> TrainConfig:
    def pick(flag, key, default):
        v = getattr(args, flag, None)
        return v if v is not None else sec.get(key, default)

    return TrainConfig(
        epochs=int(pick("epochs", "epochs", 1600)),
        batch_size=int(pick("batch_size", "batch_size", 256)),
        lr_adam=float(sec.get("lr_adam", 2e-4)),
        lr_cayley=float(sec.get("lr_cayley", 1e-4)),
        lam=float(pick("lam", "lambda", 100.0)),
        m=int(pick("subspace_dim", "subspace_dim", 10)),
        feature_dim=int(sec.get("feature_dim", 50)),
        hidden=tuple(sec.get("hidden", (64, 32))),
        seed=int(seed),
        deterministic_mode=bool(args.deterministic or sec.get("deterministic", False)),
        train_slopes=bool(sec.get("train_slopes", True)),
    )


def cmd_train(args, cfg: RunConfig) -> int:
    sec = cfg.section("train")
    seed = args.seed if args.seed is not None else cfg.seed
    data_path = _require_input(cfg.path(args.data or _need(sec, "data", "train")), "training data")
    model_path = _prepare_output(cfg.path(args.model or _need(sec, "model", "train")))
    hist_value = args.history or sec.get("history") or model_path.with_suffix(".history.csv")
    hist_path = _prepare_output(cfg.path(hist_value))
    config = train_config_from(sec, args, seed)
    tpr = float(sec.get("tpr_target", 0.95))

    ds = D.load_csv(data_path)
    batch = min(config.batch_size, len(ds)) if config.deterministic_mode else config.batch_size
    if batch != config.batch_size:
        config = replace(config, batch_size=batch)
    log.info("training on %s: N=%d D=%d", data_path, len(ds), ds.dim)
    model, history = train(config, ds.X)

    terms = energy_terms(model, ds.X)
    thresholds = {}
    if len(ds) >= 20:
        thresholds = {k.value: select_threshold(terms[k], tpr).gamma for k in ALL_KINDS}
    archive = ModelArchive(model, config.seed, config.epochs, tpr, thresholds)
    save_archive(archive, model_path)
    with open(hist_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "objective", "kpca", "ae", "defect"])
        for row in history.rows():
            w.writerow([row[0], *(repr(float(v)) for v in row[1:])])
    print(f"wrote {model_path} and {hist_path}; final objective {history.objective[-1]:.6g}, "
          f"defect {history.defect[-1]:.2e}")
    return 0


def _kinds(names) -> list:
    if not names:
        return list(ALL_KINDS)
    if isinstance(names, str):
        names = [names]
    return [EnergyKind.parse(n) for n in names]


def cmd_score(args, cfg: RunConfig) -> int:
    sec = cfg.section("score")
    model_path = _require_input(cfg.path(args.model or _need(sec, "model", "score")), "model")
    kinds = _kinds(args.energy or sec.get("energies"))
    if args.data:
        if not args.out:
            raise ValidationError("score: --data needs --out")
        jobs = [{"data": args.data, "out": args.out}]
    else:
        jobs = sec.get("jobs") or []
        if not jobs:
            raise ValidationError("score: nothing to score (give --data/--out or 'score.jobs')")
    resolved = []
    for job in jobs:
        bad = set(job) - {"data", "out"}
        if bad:
            raise ValidationError(f"score: unknown job keys {sorted(bad)}")
        resolved.append((_require_input(cfg.path(_need(job, "data", "score")), "dataset"),
                         _prepare_output(cfg.path(_need(job, "out", "score")))))
    archive = load_archive(model_path)
    for data_path, out_path in resolved:
        ds = D.load_csv(data_path)
        write_scores(out_path, score_dataset(archive, ds.X, kinds))
        print(f"wrote {out_path} ({len(ds)} rows, energies {[k.value for k in kinds]})")
    return 0


def histogram_rows(scores_in, scores_out, bins: int):
    pooled = standardize_scores(np.concatenate([scores_in, scores_out]))
    z_in, z_out = pooled[: len(scores_in)], pooled[len(scores_in):]
    edges = np.linspace(0.0, pooled.max(), bins + 1)
    c_in, _ = np.histogram(z_in, edges)
    c_out, _ = np.histogram(z_out, edges)
    width = edges[1] - edges[0]
    for i in range(bins):
        yield (edges[i], edges[i + 1], int(c_in[i]), int(c_out[i]),
               c_in[i] / (len(z_in) * width), c_out[i] / (len(z_out) * width))


def cmd_eval(args, cfg: RunConfig) -> int:
    sec = cfg.section("eval")
    bins = int(sec.get("bins", 50))
    tpr = float(sec.get("tpr_target", 0.95))
    if args.in_scores or args.out_scores:
        if not (args.in_scores and args.out_scores):
            raise ValidationError("eval: give both --in-scores and --out-scores")
        jobs = [{"in_scores": args.in_scores, "out_scores": args.out_scores,
                 "energy": args.energy[0] if args.energy else "full",
                 "report": args.report, "histogram": args.histogram}]
    else:
        jobs = sec.get("jobs") or []
        if not jobs:
            raise ValidationError("eval: nothing to evaluate (give score files or 'eval.jobs')")
    plan = []
    for job in jobs:
        bad = set(job) - {"in_scores", "out_scores", "energy", "report", "histogram"}
        if bad:
            raise ValidationError(f"eval: unknown job keys {sorted(bad)}")
        kind = EnergyKind.parse(job.get("energy", "full"))
        paths = [_require_input(cfg.path(_need(job, k, "eval")), k) for k in ("in_scores", "out_scores")]
        report = _prepare_output(cfg.path(job["report"])) if job.get("report") else None
        hist = _prepare_output(cfg.path(job["histogram"])) if job.get("histogram") else None
        plan.append((kind, paths, report, hist))
    for kind, (p_in, p_out), report, hist in plan:
        s_in = read_score_column(p_in, kind.value)
        s_out = read_score_column(p_out, kind.value)
        result = evaluate(s_in, s_out, tpr)
        text = result.to_text({"energy": kind.value, "in_scores": p_in.name,
                               "out_scores": p_out.name, "n_in": len(s_in), "n_out": len(s_out)})
        sys.stdout.write(text)
        if report:
            report.write_text(text)
        if hist:
            with open(hist, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["bin_left", "bin_right", "count_in", "count_out", "density_in", "density_out"])
                for row in histogram_rows(s_in, s_out, bins):
                    w.writerow(row)
    return 0


def cmd_report(args, cfg: RunConfig) -> int:
    """Every energy kind plus the PCA baseline against every OOD set, one file."""
    sec = cfg.section("report")
    model_path = _require_input(cfg.path(args.model or _need(sec, "model", "report")), "model")
    in_path = _require_input(cfg.path(args.in_data or _need(sec, "in_data", "report")), "in-distribution data")
    out_sets = {}
    if args.out_data:
        for item in args.out_data:
            name, _, p = item.partition("=")
            if not p:
                name, p = Path(item).stem, item
            out_sets[name] = p
    else:
        out_sets = dict(_need(sec, "out_data", "report"))
    out_sets = {k: _require_input(cfg.path(v), f"OOD data {k!r}") for k, v in out_sets.items()}
    target = args.out or sec.get("out")
    target = _prepare_output(cfg.path(target)) if target else None
    tpr = float(sec.get("tpr_target", 0.95))

    archive = load_archive(model_path)
    x_in = D.load_csv(in_path).X
    terms_in = energy_terms(archive.model, x_in)
    pca = pca_fit(x_in, float(sec.get("pca_var_threshold", 0.02)))
    pca_in = pca_score(pca, x_in)
    lines = [f"model: {model_path.name}", f"in_data: {in_path.name}", f"n_in: {len(x_in)}",
             f"pca_components: {pca.k}"]
    for name, path in out_sets.items():
        x_out = D.load_csv(path).X
        terms_out = energy_terms(archive.model, x_out)
        methods = {k.value: (terms_in[k], terms_out[k]) for k in ALL_KINDS}
        methods["pca"] = (pca_in, pca_score(pca, x_out))
        for method, (a, b) in methods.items():
            rep = evaluate(a, b, tpr)
            for key, value in rep.__dict__.items():
                lines.append(f"{name}.{method}.{key}: {value:.10g}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if target:
        target.write_text(text)
    return 0


# --- entry point ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="strkm", description="Energy-based OOD detection with St-RKM.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate synthetic datasets as CSV")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--kind", choices=sorted(GEN_KEYS))
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--out")
    g.add_argument("--params", help="JSON object of generator parameters")

    t = sub.add_parser("train", help="train a model and write an archive")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--data")
    t.add_argument("--model")
    t.add_argument("--history")
    t.add_argument("--lambda", dest="lam", type=float)
    t.add_argument("--subspace-dim", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--deterministic", action="store_true")

    s = sub.add_parser("score", help="per-sample energies as CSV")
    s.add_argument("--config")
    s.add_argument("--model")
    s.add_argument("--data")
    s.add_argument("--out")
    s.add_argument("--energy", action="append", choices=[k.value for k in ALL_KINDS])

    e = sub.add_parser("eval", help="metrics for in/out score files")
    e.add_argument("--config")
    e.add_argument("--in-scores")
    e.add_argument("--out-scores")
    e.add_argument("--energy", action="append", choices=[k.value for k in ALL_KINDS])
    e.add_argument("--report")
    e.add_argument("--histogram")

    r = sub.add_parser("report", help="all energies and the PCA baseline against OOD sets")
    r.add_argument("--config")
    r.add_argument("--model")
    r.add_argument("--in-data")
    r.add_argument("--out-data", action="append", help="NAME=PATH, repeatable")
    r.add_argument("--out")
    return p


VERBS = {"gen": cmd_gen, "train": cmd_train, "score": cmd_score, "eval": cmd_eval,
         "report": cmd_report}


def _thread_limit():
    raw = os.environ.get("STRKM_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise ValidationError(f"STRKM_THREADS must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = RunConfig.load(args.config)
        limiter = _thread_limit()
        try:
            return VERBS[args.verb](args, cfg)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except StrkmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
