"""Command-line entry point: ``syngand <command> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric divergence during training.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import secrets
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# provenance

def file_digest(path) -> str:
    h = hashlib.blake2b(digest_size=8)
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class RunManifest:
    """Provenance record written as ``manifest.json`` in the output directory."""

    def __init__(self, command, config, seed, inputs=()):
        self.command = command
        self.config = config
        self.seed = seed
        self.inputs = {str(p): file_digest(p) for p in inputs}
        self.artifacts = []
        self.extra = {}
        self._t0 = time.time()

    def add(self, *paths):
        self.artifacts.extend(str(p) for p in paths)

    def write(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        body = {
            "command": self.command,
            "config": self.config,
            "input_digests": self.inputs,
            "seed": self.seed,
            "artifacts": sorted({Path(a).name for a in self.artifacts}),
            "tool_version": __version__,
            "wall_clock_seconds": round(time.time() - self._t0, 3),
        }
        body.update(self.extra)
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
        return path


def _resolve_seed(args, cfg):
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    if args.config is not None:
        return int(cfg["seed"])
    seed = secrets.randbits(32)
    print(f"no seed given; using generated seed {seed}")
    return seed


def _fmt(v):
    return "" if v is None or not np.isfinite(v) else repr(float(v))


def _out_dir_for_file(path) -> Path:
    d = Path(path).resolve().parent
    d.mkdir(parents=True, exist_ok=True)
    return d


# ---------------------------------------------------------------------------
# commands

def cmd_data_prep(args, cfg):
    from .datapipe import PropertyTable, merge, read_smiles_file, write_dataset, write_json

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables, inputs = [], [args.ligands]
    for spec in args.table:
        name, _, path = spec.partition("=")
        if not path:
            raise UsageError(f"--table expects NAME=PATH, got {spec!r}")
        tables.append(PropertyTable.read_csv(path, name=name))
        inputs.append(path)
    ligands = read_smiles_file(args.ligands)
    ds = merge(ligands, tables, max_nodes=cfg["max_nodes"])
    stats = write_dataset(ds, out)
    write_json(stats, out / "stats.json")
    man = RunManifest("data prep", cfg.to_dict(), None, inputs)
    man.add(out / "dataset.csv", out / "rejects.csv", out / "audit.csv", out / "stats.json")
    man.extra["stats"] = stats
    man.write(out)
    c = ds.counts
    print(f"{len(ds)} records, {c['rejected']} rejected, "
          f"no-property fraction {stats['no_property_fraction']:.3f}")


def cmd_data_toy(args, cfg):
    from .molgraph import write_canonical_smiles
    from .seeding import derive_rng
    from .toy import toy_graphs, toy_properties

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = _resolve_seed(args, cfg)
    graphs = toy_graphs(args.count, derive_rng(seed, "toy"), max_nodes=args.max_atoms)
    raw, mask = toy_properties(graphs)
    path = out / "dataset.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["canonical_smiles", "n_atoms", "unobserved", "mask_n_atoms", "mask_unobserved"])
        for g, v, m in zip(graphs, raw, mask):
            w.writerow([write_canonical_smiles(g), *[_fmt(x) if k else "" for x, k in zip(v, m)],
                        *[int(k) for k in m]])
    man = RunManifest("data toy", cfg.to_dict(), seed)
    man.add(path)
    man.write(out)
    print(f"{len(graphs)} toy molecules written to {path}")


def _load_training_data(path, max_nodes):
    from .datapipe import read_dataset
    from .training import TrainData

    _, graphs, values, mask, names = read_dataset(path, max_nodes)
    if not graphs:
        raise DataError(f"{path}: no records")
    return TrainData.from_raw(graphs, np.nan_to_num(values), mask, names)


def cmd_train(args, cfg):
    from .checkpoint import save_checkpoint
    from .plotting import training_curves
    from .training import TrainingDiverged, fit

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = _resolve_seed(args, cfg)
    cfg.values["seed"] = seed
    data = _load_training_data(args.data, cfg["max_nodes"])
    tcfg = cfg.train()
    dcfg = cfg.denoiser(d=data.y.shape[1])
    man = RunManifest("train", cfg.to_dict(), seed, [args.data])

    def progress(epoch, tlog):
        if epoch == 1 or epoch % args.log_every == 0 or epoch == tcfg.epochs:
            print(f"epoch {epoch}: vertex {tlog.vertex[-1]:.4f} edge {tlog.edge[-1]:.4f} "
                  f"y {tlog.prop[-1]:.4f} validity {tlog.validity[-1]:.3f}", flush=True)

    code = EXIT_OK
    try:
        model, tlog = fit(data, tcfg, dcfg, on_epoch=progress)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}; saving last good parameters", file=sys.stderr)
        model, tlog, code = exc.model, exc.log, EXIT_DIVERGED
    ck, blob = save_checkpoint(model, out / "model.json")
    tlog.write_csv(out / "trainlog.csv")
    man.add(ck, blob, out / "trainlog.csv")
    if tlog.vertex:
        training_curves(tlog, out / "training_curves.png")
        man.add(out / "training_curves.png")
    man.write(out)
    return code


def _model(path):
    from .checkpoint import load_checkpoint

    try:
        return load_checkpoint(path)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load checkpoint {path}: {exc}") from None


def _write_samples(path, rows, names, seed, M, N, T):
    from .molgraph import relaxed_validity, write_canonical_smiles

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["canonical_smiles", *names, "valid", "seed", "M", "N", "T"])
        for g, y in rows:
            w.writerow([write_canonical_smiles(g), *[_fmt(v) for v in y], int(relaxed_validity(g)),
                        seed, "" if M is None else M, "" if N is None else N, T])


def cmd_generate(args, cfg):
    from .sampling import generate
    from .seeding import derive_rng

    model = _model(args.checkpoint)
    seed = _resolve_seed(args, cfg)
    out_dir = _out_dir_for_file(args.out)
    rows = generate(model, args.count, derive_rng(seed, "generate"), jobs=args.jobs)
    _write_samples(args.out, rows, model.standardizer.names, seed, None, None, model.T)
    man = RunManifest("generate", cfg.to_dict(), seed, [args.checkpoint])
    man.add(args.out)
    man.write(out_dir)
    from .molgraph import relaxed_validity
    valid = np.mean([relaxed_validity(g) for g, _ in rows]) if rows else float("nan")
    print(f"{len(rows)} samples, relaxed validity {valid:.3f}")


def _read_infill_input(path, model, max_nodes):
    """Ligands from .smi (mean-imputed) or a dataset CSV (values where observed)."""
    from .datapipe import read_dataset, read_smiles_file
    from .molgraph import SmilesError, parse_smiles

    d = model.cfg.d
    if str(path).endswith(".csv"):
        smiles, graphs, values, mask, names = read_dataset(path, max_nodes)
        if names != list(model.standardizer.names):
            raise DataError(f"{path}: property columns {names} do not match the checkpoint")
        y = np.where(mask, model.standardizer.standardize(np.where(mask, values, model.standardizer.mean)), 0.0)
        return smiles, graphs, y
    smiles, graphs = [], []
    for smi, src in read_smiles_file(path):
        try:
            graphs.append(parse_smiles(smi, max_nodes=max_nodes))
        except SmilesError as exc:
            raise DataError(f"{src}: {exc}") from None
        smiles.append(smi)
    return smiles, graphs, np.zeros((len(graphs), d))


def cmd_infill(args, cfg):
    from .molgraph import relaxed_validity, write_canonical_smiles
    from .sampling import InfillConfig, infill_properties
    from .seeding import derive_rng

    model = _model(args.checkpoint)
    seed = _resolve_seed(args, cfg)
    M = args.M if args.M is not None else cfg["M"]
    N = args.N if args.N is not None else cfg["N"]
    y_init = args.y_init or cfg["y_init"]
    icfg = InfillConfig(M=M, N=N, y_init=y_init)
    try:
        icfg.check(model.T)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out_dir = _out_dir_for_file(args.out)
    _, graphs, y0 = _read_infill_input(args.input, model, model.cfg.max_nodes)
    if not graphs:
        raise DataError(f"{args.input}: no ligands")
    y = infill_properties(model, graphs, y0, icfg, derive_rng(seed, "infill"), jobs=args.jobs)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["canonical_smiles", *model.standardizer.names, "valid", "seed", "M", "N", "T"])
        for g, v in zip(graphs, y):
            w.writerow([write_canonical_smiles(g), *[_fmt(x) for x in v], int(relaxed_validity(g)),
                        seed, M, N, model.T])
    man = RunManifest("infill", {**cfg.to_dict(), "M": M, "N": N, "y_init": y_init}, seed,
                      [args.checkpoint, args.input])
    man.add(args.out)
    man.write(out_dir)
    print(f"infilled {len(graphs)} ligands (M={M}, N={N})")


def _read_property_csv(path):
    """Generic reader for dataset / sample CSVs: smiles, {name: values}, valid flags."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        fields = reader.fieldnames or []
    if not fields or fields[0] != "canonical_smiles":
        raise DataError(f"{path}: expected a canonical_smiles column first")
    skip = {"canonical_smiles", "valid", "seed", "M", "N", "T"}
    names = [f for f in fields if f not in skip and not f.startswith("mask_")]
    smiles = [r["canonical_smiles"] for r in rows]
    cols = {n: np.array([float(r[n]) if r[n] else np.nan for r in rows]) for n in names}
    valid = np.array([r.get("valid", "1") != "0" for r in rows])
    return smiles, cols, valid


def cmd_eval_dist(args, cfg):
    from .evalkit import hellinger_samples, summary_stats, write_hist_csv
    from .plotting import property_histogram

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _, real, _ = _read_property_csv(args.real)
    _, synth, _ = _read_property_csv(args.synth)
    man = RunManifest("eval dist", cfg.to_dict(), None, [args.real, args.synth])
    rows = []
    for name in real:
        if name not in synth:
            continue
        r, s = real[name], synth[name]
        r, s = r[np.isfinite(r)], s[np.isfinite(s)]
        if len(r) == 0 or len(s) == 0:
            continue
        st = summary_stats(r, s)
        rows.append([name, len(r), len(s), st.real_mean, st.real_std, st.synth_mean, st.synth_std,
                     st.mean_deviation_pct, st.std_ratio, hellinger_samples(r, s)])
        write_hist_csv(r, s, out / f"hist_{name}.csv")
        property_histogram(r, s, out / f"hist_{name}.png", name=name)
        man.add(out / f"hist_{name}.csv", out / f"hist_{name}.png")
    if not rows:
        raise DataError("no property channel has values in both inputs")
    with open(out / "dist.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["property", "n_real", "n_synth", "real_mean", "real_std", "synth_mean",
                    "synth_std", "mean_deviation_pct", "std_ratio", "hellinger"])
        for row in rows:
            w.writerow(row[:3] + [_fmt(v) for v in row[3:]])
            print(f"{row[0]}: hellinger {row[-1]:.3f}, mean deviation {row[7]:.1f}%, "
                  f"std ratio {row[8]:.2f}")
    man.add(out / "dist.csv")
    man.write(out)


def cmd_eval_mle(args, cfg):
    from .evalkit import format_mle_table, run_mle, write_mle_csv
    from .molgraph import SmilesError, fingerprint, parse_smiles
    from .plotting import mle_chart

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = _resolve_seed(args, cfg)
    cfg.values["seed"] = seed
    if args.model:
        cfg.values["mle_model"] = args.model
    if args.trials:
        cfg.values["trials"] = args.trials
    mcfg = cfg.mle()
    bits = cfg["fingerprint_bits"]
    r_smi, real, _ = _read_property_csv(args.real)
    s_smi, synth, s_valid = _read_property_csv(args.synth)

    def featurize(smiles):
        feats = []
        for smi in smiles:
            try:
                feats.append(fingerprint(parse_smiles(smi, max_nodes=10 ** 6), bits=bits))
            except SmilesError as exc:
                raise DataError(f"cannot featurize {smi!r}: {exc}") from None
        return np.array(feats, dtype=np.float64).reshape(len(smiles), bits)

    r_X, s_X = featurize(r_smi), featurize(s_smi)
    reports = []
    for name in real:
        if name not in synth:
            continue
        rm = np.isfinite(real[name])
        sm = np.isfinite(synth[name]) & s_valid
        if rm.sum() < 4 or sm.sum() < 1:
            print(f"{name}: skipped ({rm.sum()} real, {sm.sum()} synthetic values)")
            continue
        rk = [s for s, k in zip(r_smi, rm) if k]
        sk = [s for s, k in zip(s_smi, sm) if k]
        reports.append(run_mle(r_X[rm], real[name][rm], s_X[sm], synth[name][sm], mcfg, name,
                               rk, sk, jobs=args.jobs))
    if not reports:
        raise DataError("no property channel has enough values for the MLE experiment")
    write_mle_csv(reports, out / "mle.csv")
    table = format_mle_table(reports)
    (out / "mle.txt").write_text(table + "\n")
    mle_chart(reports, out / "mle.png")
    man = RunManifest("eval mle", cfg.to_dict(), seed, [args.real, args.synth])
    man.add(out / "mle.csv", out / "mle.txt", out / "mle.png")
    man.write(out)
    print(table)


def cmd_canon(args, cfg):
    from .datapipe import read_smiles_file
    from .molgraph import SmilesError, canonicalize

    out_dir = _out_dir_for_file(args.out)
    lines = []
    for smi, src in read_smiles_file(args.input):
        try:
            lines.append(canonicalize(smi))
        except SmilesError as exc:
            raise DataError(f"{src}: {exc}") from None
    Path(args.out).write_text("".join(s + "\n" for s in lines))
    man = RunManifest("canon", cfg.to_dict(), None, [args.input])
    man.add(args.out)
    man.write(out_dir)
    print(f"{len(lines)} molecules canonicalized")


# ---------------------------------------------------------------------------
# argument parsing

def build_parser():
    p = _Parser(prog="syngand", description="Joint ligand graph and property diffusion.")
    p.add_argument("--version", action="version", version=f"syngand {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--config", help="JSON configuration file")
        if seed:
            sp.add_argument("--seed", type=int, help="master seed (overrides config)")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes")

    data = sub.add_parser("data", help="dataset preparation")
    dsub = data.add_subparsers(dest="data_command", parser_class=_Parser)
    prep = dsub.add_parser("prep", help="filter and merge ligands with property tables")
    prep.add_argument("--ligands", required=True, help="ligand corpus, one SMILES per line")
    prep.add_argument("--table", action="append", default=[], required=True,
                      help="property table NAME=PATH (CSV with smiles,value); repeatable")
    prep.add_argument("--out-dir", required=True)
    common(prep, seed=False)
    prep.set_defaults(func=cmd_data_prep)
    toy = dsub.add_parser("toy", help="random small molecules with y = node count")
    toy.add_argument("--count", type=int, default=500)
    toy.add_argument("--max-atoms", type=int, default=9)
    toy.add_argument("--out-dir", required=True)
    common(toy)
    toy.set_defaults(func=cmd_data_toy)

    tr = sub.add_parser("train", help="train the denoiser")
    tr.add_argument("--data", required=True, help="dataset.csv from 'data prep' or 'data toy'")
    tr.add_argument("--out-dir", required=True)
    tr.add_argument("--log-every", type=int, default=1)
    common(tr)
    tr.set_defaults(func=cmd_train)

    gen = sub.add_parser("generate", help="sample new ligands with properties")
    gen.add_argument("--checkpoint", required=True)
    gen.add_argument("--count", type=int, required=True)
    gen.add_argument("--out", required=True)
    common(gen)
    gen.set_defaults(func=cmd_generate)

    inf = sub.add_parser("infill", help="infill properties of existing ligands")
    inf.add_argument("--checkpoint", required=True)
    inf.add_argument("--in", dest="input", required=True, help=".smi or dataset .csv")
    inf.add_argument("--N", type=int, help="reverse steps per iteration (N < T)")
    inf.add_argument("--M", type=int, help="outer iterations")
    inf.add_argument("--y-init", choices=("mean-impute", "provided"))
    inf.add_argument("--out", required=True)
    common(inf)
    inf.set_defaults(func=cmd_infill)

    ev = sub.add_parser("eval", help="evaluation reports")
    esub = ev.add_subparsers(dest="eval_command", parser_class=_Parser)
    dist = esub.add_parser("dist", help="distribution fidelity of synthetic properties")
    dist.add_argument("--real", required=True)
    dist.add_argument("--synth", required=True)
    dist.add_argument("--out-dir", required=True)
    common(dist, seed=False)
    dist.set_defaults(func=cmd_eval_dist)
    mle = esub.add_parser("mle", help="machine-learning efficiency experiment")
    mle.add_argument("--real", required=True)
    mle.add_argument("--synth", required=True)
    mle.add_argument("--out-dir", required=True)
    mle.add_argument("--model", choices=("ridge", "stumps"))
    mle.add_argument("--trials", type=int)
    common(mle)
    mle.set_defaults(func=cmd_eval_mle)

    can = sub.add_parser("canon", help="canonicalize SMILES")
    can.add_argument("--in", dest="input", required=True)
    can.add_argument("--out", required=True)
    common(can, seed=False)
    can.set_defaults(func=cmd_canon)
    return p


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not hasattr(args, "func"):
            raise UsageError(parser.format_usage() + "syngand: error: a command is required")
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        cfg = load_config(args.config)
        return args.func(args, cfg) or EXIT_OK
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"syngand: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValueError, OSError) as exc:
        print(f"syngand: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"syngand: numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


def main(argv=None):
    sys.exit(dispatch(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
