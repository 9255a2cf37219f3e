import csv
import json

import numpy as np
import pytest

from syngand.datapipe import (Accept, PropertyTable, Reject, dataset_stats, edge_marginals,
                              filter_molecule, merge, node_count_hist, node_marginals,
                              read_dataset, read_smiles_file, write_dataset, write_json)
from syngand.molgraph import ATOM_INDEX, DOUBLE, NO_BOND, SINGLE, canonicalize, parse_smiles


def table(name, rows):
    return PropertyTable(name, [(s, v, f"{name}:{i + 2}") for i, (s, v) in enumerate(rows)])


def test_filter_examples():
    assert isinstance(filter_molecule("CCO"), Accept)
    assert filter_molecule("C" * 101).reason == "too_long"
    assert isinstance(filter_molecule("C" * 60), Accept)
    assert filter_molecule("[As]").reason == "element"
    assert filter_molecule("C1CC").reason == "parse"
    assert filter_molecule("C" * 61).reason == "size"
    assert filter_molecule("CCO").canonical == canonicalize("OCC")


def test_merge_matches_by_canonical_form():
    ds = merge(["CCO"], [table("sol", [("OCC", -0.77)])])
    assert len(ds) == 1
    assert ds.mask.tolist() == [[True]] and ds.values[0, 0] == -0.77
    assert ds.counts["overlap_pct_sol"] == 100.0


def test_merge_disjoint_sets():
    ds = merge(["CCO", "CCN", "CCC"], [table("t", [("c1ccccc1", 1.0), ("CC(=O)O", 2.0)])])
    assert len(ds) == 5
    assert ds.counts["overlap_pct_t"] == 0.0
    assert ds.mask[:, 0].tolist() == [False, False, False, True, True]
    assert dataset_stats(ds)["no_property_fraction"] == pytest.approx(0.6)


def test_duplicate_measurements_averaged():
    ds = merge([], [table("t", [("CCO", 1.0), ("OCC", 3.0)])])
    assert len(ds) == 1 and ds.values[0, 0] == 2.0
    assert [a[2] for a in ds.audit] == ["t:2", "t:3"]


def test_multiple_tables_and_masks():
    ds = merge(["CCO", "CCN"], [table("a", [("CCO", 1.0)]), table("b", [("NCC", 5.0), ("CCCl", 7.0)])])
    assert ds.names == ["a", "b"]
    assert ds.mask.tolist() == [[True, False], [False, True], [False, True]]
    assert np.isnan(ds.values[0, 1]) and np.isnan(ds.values[1, 0])
    assert ds.counts["overlap_pct_b"] == 50.0


def test_filter_conservation():
    ligands = ["CCO", "C" * 101, "[As]", "C1CC", "CCN", "CCO"]
    rows = [("CC", 1.0), ("[Fe]", 2.0), ("C" * 70, 3.0)]
    ds = merge(ligands, [table("t", rows)])
    c = ds.counts
    assert c["ligands_in"] + c["table_rows_in"] == \
        c["ligands_accepted"] + c["table_rows_accepted"] + c["rejected"]
    assert c["rejected"] == sum(c[f"rejected_{r}"] for r in ("too_long", "parse", "element", "size"))
    assert (c["rejected_too_long"], c["rejected_element"], c["rejected_parse"], c["rejected_size"]) \
        == (1, 2, 1, 1)
    # repeated ligand is accepted but stored once
    assert ds.smiles.count(canonicalize("CCO")) == 1


def test_empty_tables_rejected():
    with pytest.raises(ValueError):
        merge(["CCO"], [])


def test_stats():
    ds = merge(["CCO", "c1ccccc1"], [table("t", [("CC", 1.0)])])
    st = dataset_stats(ds)
    assert abs(sum(st["node_marginals"]) - 1) <= 1e-12
    assert abs(sum(st["edge_marginals"]) - 1) <= 1e-12
    assert st["node_count_hist"] == {"2": pytest.approx(1 / 3), "3": pytest.approx(1 / 3),
                                     "6": pytest.approx(1 / 3)}
    unlabelled = merge(["CCO"], [table("t", [])])
    assert dataset_stats(unlabelled)["no_property_fraction"] == 1.0


def test_marginal_counts():
    gs = [parse_smiles("CCO"), parse_smiles("C=C")]
    m = node_marginals(gs)
    assert m[ATOM_INDEX["C"]] == pytest.approx(0.8) and m[ATOM_INDEX["O"]] == pytest.approx(0.2)
    e = edge_marginals(gs)
    # pairs: CCO has 2 single + 1 none, C=C has 1 double
    assert e[SINGLE] == pytest.approx(0.5) and e[NO_BOND] == pytest.approx(0.25)
    assert e[DOUBLE] == pytest.approx(0.25)
    assert node_count_hist(gs) == {2: 0.5, 3: 0.5}


def test_csv_io_round_trip(tmp_path):
    (tmp_path / "lig.smi").write_text("CCO\n\nc1ccccc1\n[As]\n")
    (tmp_path / "sol.csv").write_text("smiles,value\nOCC,-0.5\nCC,1.25\n")
    ligs = read_smiles_file(tmp_path / "lig.smi")
    assert ligs[1] == ("c1ccccc1", "lig.smi:3")
    tab = PropertyTable.read_csv(tmp_path / "sol.csv")
    assert tab.name == "sol" and tab.records[1] == ("CC", 1.25, "sol.csv:3")
    ds = merge(ligs, [tab])
    stats = write_dataset(ds, tmp_path / "out")
    smiles, graphs, values, mask, names = read_dataset(tmp_path / "out" / "dataset.csv")
    assert smiles == ds.smiles and names == ["sol"]
    assert np.array_equal(mask, ds.mask)
    assert np.array_equal(np.nan_to_num(values, nan=-9), np.nan_to_num(ds.values, nan=-9))
    rejects = list(csv.reader(open(tmp_path / "out" / "rejects.csv")))
    assert rejects[1][:3] == ["lig.smi:4", "[As]", "element"]
    write_json(stats, tmp_path / "stats.json")
    assert json.loads((tmp_path / "stats.json").read_text())["records"] == 3


def test_write_is_byte_deterministic(tmp_path):
    ds = merge(["CCO", "CCN"], [table("t", [("CC", 0.1), ("CCO", 0.2)])])
    for d in ("a", "b"):
        write_json(write_dataset(ds, tmp_path / d), tmp_path / d / "manifest.json")
    for name in ("dataset.csv", "rejects.csv", "audit.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_bad_table_inputs(tmp_path):
    (tmp_path / "x.csv").write_text("smi,val\nCC,1\n")
    with pytest.raises(ValueError, match="header"):
        PropertyTable.read_csv(tmp_path / "x.csv")
    (tmp_path / "y.csv").write_text("smiles,value\nCC,abc\n")
    with pytest.raises(ValueError, match="y.csv:2"):
        PropertyTable.read_csv(tmp_path / "y.csv")
    with pytest.raises(OSError):
        PropertyTable.read_csv(tmp_path / "missing.csv")


def test_reject_is_value():
    r = filter_molecule("")
    assert isinstance(r, Reject) and r.reason == "parse"
