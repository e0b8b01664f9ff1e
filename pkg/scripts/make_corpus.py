#!/usr/bin/env python3
"""Regenerate the bundled SMILES corpora.

Curated kekulized molecules (heavy atoms C/N/O/F only, at most nine per
molecule, hydrogens implicit) in the flavor of small-molecule benchmark
sets.  Every candidate is validated with the package's own parser and
valence rules before being written, so the shipped files are guaranteed
to load cleanly.

Outputs:
    data/qm9_subset.smi  -- 200 molecules with up to 9 heavy atoms
    data/toy_train.smi   -- 50 molecules with up to 6 heavy atoms
"""

from pathlib import Path

from grf.chem import check_validity, parse_smiles
from grf.graphs import GraphSchema, pad_graph

CANDIDATES = [
    # alkanes and branched alkanes
    "C", "CC", "CCC", "CCCC", "CC(C)C", "CCCCC", "CC(C)CC", "CC(C)(C)C",
    "CCCCCC", "CCC(C)CC", "CC(C)C(C)C", "CCC(C)(C)C", "CCCCCCC", "CC(C)CCC",
    "CCCCCCCC", "CC(C)(C)CC(C)C", "CCCCCCCCC", "CC(C)CC(C)C",
    # alcohols and diols
    "CO", "CCO", "CCCO", "CC(C)O", "CCCCO", "CC(O)CC", "CC(C)(C)O", "OCCO",
    "OCCCO", "OCC(O)CO", "CC(O)C(C)O", "CCCCCO", "OCC(C)(C)CO", "CC(C)CO",
    "OCCCCO", "CC(O)CO", "CCC(O)CC", "OCC(O)C(O)CO",
    # ethers
    "COC", "CCOC", "CCOCC", "COCC", "COCCO", "CCOCCO", "COCCOC", "CC(C)OC(C)C",
    "COCCCO",
    # amines
    "CN", "CCN", "CNC", "CCCN", "CN(C)C", "CCNCC", "NCCN", "CC(C)N", "CC(N)CC",
    "NCCCN", "CNCC", "CCN(C)C", "NCCCCN", "CNCCNC",
    # mixed N/O chains
    "NCCO", "OCCN", "NCCCO", "OCCCN", "NCCOC", "OCCNC", "NCC(O)CO",
    # aldehydes and ketones
    "C=O", "CC=O", "CCC=O", "CC(C)=O", "CCCC=O", "CCC(C)=O", "CC(C)C=O",
    "O=CC=O", "CC(=O)C(C)=O", "O=CCC=O", "OCC=O", "CC(=O)CC=O", "CCCCC=O",
    "CC(=O)CC", "CC(=O)CCC", "CC(C)(C)C=O",
    # acids and esters
    "OC=O", "CC(=O)O", "CCC(=O)O", "COC=O", "CC(=O)OC", "CCOC(C)=O",
    "CC(C)C(=O)O", "OC(=O)C(=O)O", "OC(=O)CC(=O)O", "COC(=O)C", "CCOC=O",
    "OCC(=O)O", "CC(O)C(=O)O",
    # amides and ureas
    "NC=O", "CNC=O", "CC(=O)N", "CC(=O)NC", "NC(N)=O", "CNC(N)=O", "CNC(=O)C",
    "NCC(=O)N", "CC(=O)N(C)C",
    # amino acids and friends
    "NCC(=O)O", "CC(N)C(=O)O", "NCCC(=O)O", "CC(O)C#N", "OCC#N", "NCC#N",
    # nitriles and alkynes
    "C#N", "CC#N", "CCC#N", "C#C", "CC#C", "CC#CC", "N#CC#N", "C#CCO", "C#CCN",
    "C#CC#C", "CCC#CC", "C#CC(C)C", "N#CCC#N", "C#CCC#C",
    # alkenes and dienes
    "C=C", "CC=C", "C=CC=C", "CC=CC", "CC(C)=C", "C=CCO", "C=CCN", "C=CC#N",
    "C=C(C)C", "CC=CC=C", "C=CCC=C", "CC=CCO", "C=CC(=O)O", "CC=CC=O",
    "C=CC=O", "C=CCCO", "CC(=C)C(C)=C",
    # fluorides
    "CF", "FCF", "FC(F)F", "FC(F)(F)F", "CCF", "CC(F)F", "CC(F)(F)F", "FCCF",
    "FC(F)CO", "CC(F)C", "FCCO", "OCC(F)F", "FCC(F)F", "FC1CCC1", "FC(F)C=O",
    # carbocycles
    "C1CC1", "C1CCC1", "C1CCCC1", "C1CCCCC1", "C1CCCCCC1", "CC1CC1", "CC1CCC1",
    "CC1CCCC1", "CC1CCCCC1", "CCC1CC1", "OC1CC1", "OC1CCC1", "OC1CCCC1",
    "OC1CCCCC1", "NC1CC1", "NC1CCC1", "NC1CCCC1", "NC1CCCCC1", "CC1(C)CC1",
    "C1CC1C1CC1", "CC1CCC1C",
    # heterocycles (saturated)
    "C1CO1", "C1CN1", "C1CCO1", "C1CCN1", "C1CCOC1", "C1CCNC1", "C1CCOCC1",
    "C1CCNCC1", "C1COCCO1", "C1CNCCN1", "C1COCCN1", "CC1CCOC1", "CC1CCNC1",
    "CC1CO1", "CC1CN1", "OCC1CCCO1", "NCC1CCCN1", "C1COCO1", "C1CNCN1",
    # cyclic carbonyls
    "O=C1CCC1", "O=C1CCCC1", "O=C1CCCCC1", "O=C1CCO1", "O=C1CCCO1",
    "O=C1CCNC1", "O=C1CCCN1", "O=C1CCCCO1", "CC1CCC(=O)C1",
    # fused and spiro rings
    "C1CC2CCC2C1", "C1CC2CCC1C2", "C1CC2(CC1)CC2", "C1CC12CC2",
    # kekulized benzenes
    "C1=CC=CC=C1", "CC1=CC=CC=C1", "CCC1=CC=CC=C1", "OC1=CC=CC=C1",
    "COC1=CC=CC=C1", "NC1=CC=CC=C1", "CNC1=CC=CC=C1", "FC1=CC=CC=C1",
    "CC1=CC=CC=C1C", "CC1=CC=C(C)C=C1", "OC1=CC=C(C)C=C1", "NC1=CC=C(O)C=C1",
    "FC1=CC=C(F)C=C1", "OC1=CC=C(O)C=C1", "NC1=CC=C(N)C=C1", "CC1=CC(C)=CC=C1",
    # kekulized heteroaromatics
    "C1=CC=NC=C1", "CC1=CC=NC=C1", "C1=CC=NC=N1", "C1=CN=CC=N1", "C1=CC=CO1",
    "CC1=CC=CO1", "C1=CC=CN1", "CC1=CC=CN1", "C1=COC=N1", "C1=CN=CN1",
    "C1=CNN=C1", "OC1=CC=NC=C1", "NC1=CC=NC=C1", "CC1=NC=CN1", "C1=CSC=C1",
    # benzene derivatives with carbonyls
    "O=CC1=CC=CC=C1", "NC(=O)C1=CC=CC=C1", "OC(=O)C1=CC=CC=C1",
    "CC(=O)C1=CC=CC=C1", "N#CC1=CC=CC=C1", "OCC1=CC=CC=C1", "NCC1=CC=CC=C1",
]


def build(max_atoms: int, limit: int, schema: GraphSchema) -> list[str]:
    out: list[str] = []
    seen: set[str] = set()
    for smiles in CANDIDATES:
        if smiles in seen:
            continue
        try:
            raw = parse_smiles(smiles)
        except Exception:
            continue
        if raw.n > max_atoms:
            continue
        if any(sym not in schema.atom_symbols for sym in raw.atoms):
            continue
        if not check_validity(pad_graph(raw, schema), None):
            continue
        seen.add(smiles)
        out.append(smiles)
        if len(out) == limit:
            break
    return out


def main() -> None:
    data_dir = Path(__file__).resolve().parent.parent / "data"
    data_dir.mkdir(exist_ok=True)

    qm9_schema = GraphSchema(n_max=9, atom_symbols=("C", "N", "O", "F"))
    qm9 = build(max_atoms=9, limit=200, schema=qm9_schema)
    if len(qm9) < 200:
        raise SystemExit(f"only {len(qm9)} valid molecules with <= 9 atoms; need 200")
    (data_dir / "qm9_subset.smi").write_text(
        "# 200 kekulized molecules, up to 9 heavy atoms (C/N/O/F)\n"
        + "\n".join(qm9) + "\n", encoding="utf-8")

    toy_schema = GraphSchema(n_max=6, atom_symbols=("C", "N", "O", "F"))
    toy = build(max_atoms=6, limit=50, schema=toy_schema)
    if len(toy) < 50:
        raise SystemExit(f"only {len(toy)} valid molecules with <= 6 atoms; need 50")
    (data_dir / "toy_train.smi").write_text(
        "# 50 kekulized molecules, up to 6 heavy atoms\n"
        + "\n".join(toy) + "\n", encoding="utf-8")
    print(f"wrote {len(qm9)} + {len(toy)} molecules")


if __name__ == "__main__":
    main()
