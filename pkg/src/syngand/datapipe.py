"""Ligand corpus + property table ingestion, filtering and merging."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .continuous import Standardizer
from .molgraph import (DEFAULT_MAX_NODES, N_ATOM_TYPES, N_BOND_TYPES, MolecularGraph, SmilesError,
                       TooManyAtoms, UnsupportedElement, parse_smiles, write_canonical_smiles)

MAX_SMILES_LENGTH = 100
REJECT_REASONS = ("too_long", "parse", "element", "size")


@dataclass(frozen=True)
class Accept:
    graph: MolecularGraph
    canonical: str


@dataclass(frozen=True)
class Reject:
    reason: str
    detail: str = ""


def filter_molecule(smiles: str, max_nodes: int = DEFAULT_MAX_NODES):
    """Accept or reject one SMILES string. Rejection is a value, never raised."""
    s = smiles.strip()
    if len(s) > MAX_SMILES_LENGTH:
        return Reject("too_long", f"{len(s)} characters")
    try:
        g = parse_smiles(s, max_nodes=max_nodes)
    except UnsupportedElement as exc:
        return Reject("element", str(exc))
    except TooManyAtoms as exc:
        return Reject("size", str(exc))
    except SmilesError as exc:
        return Reject("parse", str(exc))
    return Accept(g, write_canonical_smiles(g))


@dataclass
class PropertyTable:
    name: str
    records: list                 # (smiles, value, source row)
    units: str = ""

    @classmethod
    def read_csv(cls, path, name=None, units=""):
        path = Path(path)
        records = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"smiles", "value"} <= set(reader.fieldnames):
                raise ValueError(f"{path}: expected header columns 'smiles,value'")
            for row_no, row in enumerate(reader, start=2):
                try:
                    v = float(row["value"])
                except (TypeError, ValueError):
                    raise ValueError(f"{path}:{row_no}: bad value {row['value']!r}") from None
                if not np.isfinite(v):
                    raise ValueError(f"{path}:{row_no}: non-finite value")
                records.append((row["smiles"], v, f"{path.name}:{row_no}"))
        return cls(name or path.stem, records, units)


@dataclass
class MergedDataset:
    smiles: list                  # canonical SMILES per record
    graphs: list
    values: np.ndarray            # (N, d) raw values, NaN where missing
    mask: np.ndarray              # (N, d) bool
    names: list
    rejects: list = field(default_factory=list)       # (source, smiles, reason, detail)
    audit: list = field(default_factory=list)         # (record index, channel, source row)
    counts: dict = field(default_factory=dict)
    units: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.smiles)


def read_smiles_file(path):
    path = Path(path)
    with open(path) as fh:
        return [(line.strip(), f"{path.name}:{i}") for i, line in enumerate(fh, start=1)
                if line.strip()]


def merge(ligands, tables, max_nodes: int = DEFAULT_MAX_NODES) -> MergedDataset:
    """Merge ligands with property tables keyed by canonical SMILES.

    ``ligands`` is a list of SMILES strings or (smiles, source) pairs.
    Ligand records come first in input order, then table-only molecules in
    table order. Repeated table measurements are averaged.
    """
    if not tables:
        raise ValueError("at least one property table is required")
    names = [t.name for t in tables]
    d = len(tables)
    rejects = []
    counts = {"ligands_in": 0, "ligands_accepted": 0, "table_rows_in": 0, "table_rows_accepted": 0}

    order, graphs = [], {}
    seen_ligand = set()
    for i, item in enumerate(ligands):
        smi, src = (item, f"ligands:{i + 1}") if isinstance(item, str) else item
        counts["ligands_in"] += 1
        res = filter_molecule(smi, max_nodes)
        if isinstance(res, Reject):
            rejects.append((src, smi, res.reason, res.detail))
            continue
        counts["ligands_accepted"] += 1
        if res.canonical not in seen_ligand:
            seen_ligand.add(res.canonical)
            order.append(res.canonical)
            graphs[res.canonical] = res.graph

    sums = [dict() for _ in tables]
    sources = [dict() for _ in tables]
    table_keys = [list() for _ in tables]
    for c, table in enumerate(tables):
        for smi, v, src in table.records:
            counts["table_rows_in"] += 1
            res = filter_molecule(smi, max_nodes)
            if isinstance(res, Reject):
                rejects.append((src, smi, res.reason, res.detail))
                continue
            counts["table_rows_accepted"] += 1
            key = res.canonical
            if key not in sums[c]:
                sums[c][key] = [0.0, 0]
                sources[c][key] = []
                table_keys[c].append(key)
            sums[c][key][0] += v
            sums[c][key][1] += 1
            sources[c][key].append(src)
            if key not in graphs:
                graphs[key] = res.graph
                order.append(key)

    index = {k: i for i, k in enumerate(order)}
    N = len(order)
    values = np.full((N, d), np.nan)
    mask = np.zeros((N, d), dtype=bool)
    audit = []
    for c in range(d):
        for key in table_keys[c]:
            total, n = sums[c][key]
            r = index[key]
            values[r, c] = total / n
            mask[r, c] = True
            for src in sources[c][key]:
                audit.append((r, names[c], src))
    audit.sort(key=lambda a: (a[0], names.index(a[1])))

    for c, table in enumerate(tables):
        keys = table_keys[c]
        counts[f"overlap_pct_{table.name}"] = (
            100.0 * sum(k in seen_ligand for k in keys) / len(keys) if keys else 0.0)
    counts["rejected"] = len(rejects)
    for reason in REJECT_REASONS:
        counts[f"rejected_{reason}"] = sum(r[2] == reason for r in rejects)
    return MergedDataset(order, [graphs[k] for k in order], values, mask, names, rejects,
                         audit, counts, {t.name: t.units for t in tables})


def node_marginals(graphs):
    counts = np.zeros(N_ATOM_TYPES)
    for g in graphs:
        counts += np.bincount(g.nodes, minlength=N_ATOM_TYPES)
    return counts / counts.sum()


def edge_marginals(graphs):
    counts = np.zeros(N_BOND_TYPES)
    for g in graphs:
        iu = np.triu_indices(g.n, 1)
        counts += np.bincount(g.edges[iu], minlength=N_BOND_TYPES)
    if counts.sum() == 0:
        counts[0] = 1.0
    return counts / counts.sum()


def node_count_hist(graphs):
    sizes = np.array([g.n for g in graphs])
    ks, cs = np.unique(sizes, return_counts=True)
    return {int(k): float(c) / len(sizes) for k, c in zip(ks, cs)}


def dataset_stats(ds: MergedDataset) -> dict:
    if len(ds) == 0:
        raise ValueError("empty dataset")
    std = Standardizer.fit(ds.names, np.nan_to_num(ds.values), ds.mask)
    return {
        "records": len(ds),
        "no_property_fraction": float(np.mean(~ds.mask.any(axis=1))),
        "coverage": {n: float(ds.mask[:, c].mean()) for c, n in enumerate(ds.names)},
        "node_count_hist": {str(k): v for k, v in node_count_hist(ds.graphs).items()},
        "node_marginals": node_marginals(ds.graphs).tolist(),
        "edge_marginals": edge_marginals(ds.graphs).tolist(),
        "standardization": std.to_dict(),
    }


def _fmt(v):
    return "" if not np.isfinite(v) else repr(float(v))


def write_dataset(ds: MergedDataset, out_dir) -> dict:
    """Write dataset.csv, rejects.csv, audit.csv and return the stats block."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "dataset.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["canonical_smiles", *ds.names, *[f"mask_{n}" for n in ds.names]])
        for i, smi in enumerate(ds.smiles):
            w.writerow([smi, *[_fmt(v) for v in ds.values[i]], *[int(m) for m in ds.mask[i]]])
    with open(out_dir / "rejects.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "smiles", "reason", "detail"])
        w.writerows(ds.rejects)
    with open(out_dir / "audit.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record", "canonical_smiles", "channel", "source_row"])
        for r, name, src in ds.audit:
            w.writerow([r, ds.smiles[r], name, src])
    stats = dataset_stats(ds)
    stats["filter_counts"] = ds.counts
    stats["units"] = ds.units
    return stats


def read_dataset(path, max_nodes: int = DEFAULT_MAX_NODES):
    """Load dataset.csv into (smiles, graphs, values, mask, names)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "canonical_smiles":
            raise ValueError(f"{path}: not a dataset file")
        d = (len(header) - 1) // 2
        names = header[1:1 + d]
        smiles, graphs, values, mask = [], [], [], []
        for row in reader:
            smiles.append(row[0])
            graphs.append(parse_smiles(row[0], max_nodes=max_nodes))
            values.append([float(v) if v else np.nan for v in row[1:1 + d]])
            mask.append([v == "1" for v in row[1 + d:]])
    return (smiles, graphs, np.array(values, dtype=np.float64).reshape(-1, d),
            np.array(mask, dtype=bool).reshape(-1, d), names)


def write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
