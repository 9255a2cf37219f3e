"""Regenerate corpus500.smi: hand-written molecules plus fragment chains.

Run from the repository root: python3 tests/data/make_corpus.py
"""
from pathlib import Path

import numpy as np

from syngand.molgraph import canonicalize, parse_smiles, relaxed_validity

HAND = """
CCO OCC C CC C=C C#C C#N CC(C)C CC(C)(C)C C1CC1 C1CCCCC1 C1=CC=CC=C1 c1ccccc1
c1ccc2ccccc2c1 c1ccncc1 c1ccoc1 c1cc[nH]c1 c1ccsc1 c1cnc[nH]1 c1ncncn1 O=C=O
CC(=O)O CC(=O)OC1=CC=CC=C1C(=O)O CC(=O)Nc1ccc(O)cc1 CN1C=NC2=C1C(=O)N(C(=O)N2C)C
OC(=O)CCC(N)C(=O)O NCC(=O)O CC(N)C(=O)O OCC(O)CO ClC(Cl)Cl FC(F)(F)F BrCCBr ICI
CS(=O)(=O)N P(=O)(O)(O)O COP(=O)(OC)OC C[Si](C)(C)C [Se]1C=CC=C1 c1cc[se]c1
B(O)(O)c1ccccc1 OB(O)O C1CC2CCC1C2 C12C3C4C1C5C2C3C45 C1CCC2(CC1)CCCC2
N#CC(C#N)=C(C#N)C#N O=C1CCCCC1 O=C1NC(=O)C=C1 c1ccc(cc1)-c2ccccc2 c1ccc(Cl)cc1Br
CC(C)Cc1ccc(cc1)C(C)C(=O)O COc1ccc2[nH]cc(CCN)c2c1 CN1CCC[C@H]1c2cccnc2
C%10CCCC%10 C1CC%11CC1CCC%11 O=S(=O)(O)O N=C(N)N CC=CC=CC=O C=CC(=O)OC
Clc1ccc(cc1)C(c2ccc(Cl)cc2)C(Cl)(Cl)Cl OC1C(O)C(O)C(O)C(O)C1O CCN(CC)CC
c1ccc2c(c1)ccc3ccccc32 c1ccc2ncccc2c1 c1cnc2[nH]ccc2c1 O=c1cc[nH]c(=O)[nH]1
CC(C)(C)OC(=O)N S=C=S C(=S)(N)N CSSC CSC CC(=O)C CC#CC c1ccccc1.O CC.CC
"""

FRAGMENTS = ["C", "CC", "N", "O", "S", "C(=O)", "C(=O)N", "C(C)C", "c1ccccc1", "c1ccncc1",
             "C1CC1", "C1CCNCC1", "S(=O)(=O)", "C(F)(F)", "C=C", "c1ccc2ccccc2c1", "c1ccsc1",
             "OC", "N(C)", "C1CCCC1", "c1cc[nH]c1", "P(=O)(O)", "[Si](C)(C)", "c1ccoc1"]
CAPS = ["F", "Cl", "Br", "I", "C#N", "O", "N", "C", "C(=O)O", "[Se]C"]


def chain(rng):
    parts = [FRAGMENTS[i] for i in rng.integers(len(FRAGMENTS), size=rng.integers(1, 6))]
    parts.append(CAPS[rng.integers(len(CAPS))])
    return "".join(parts)


def main():
    out, seen = [], set()
    hand = HAND.split()
    for smi in hand:
        if "@" in smi:        # stereo is unsupported; keep the flat form
            smi = smi.replace("[C@H]", "C")
        key = canonicalize(smi)
        if key not in seen:
            seen.add(key)
            out.append(smi)
    rng = np.random.default_rng(20240601)
    while len(out) < 500:
        smi = chain(rng)
        if len(smi) > 100:
            continue
        g = parse_smiles(smi)
        if not relaxed_validity(g):
            continue
        key = canonicalize(smi)
        if key in seen:
            continue
        seen.add(key)
        out.append(smi)
    Path(__file__).with_name("corpus500.smi").write_text("\n".join(out) + "\n")


if __name__ == "__main__":
    main()
