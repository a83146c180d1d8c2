"""Regenerate the bundled demo structures and the 200-row demo ΔΔG table."""
from pathlib import Path

import numpy as np

from stabdesign.protein_graph import build_contact_graph, featurize_residue, synthetic_backbone, write_pdb
from stabdesign.reward.oracles import RawRecord, substitution_codes, write_ddg_csv

OUT = Path(__file__).resolve().parents[1] / "src" / "stabdesign" / "data"
PROTEINS = {"demo_a": ("MKTAYIAKQRLE", 0), "demo_b": ("PEVLCRTWHN", 3)}


def main():
    rng = np.random.default_rng(2024)
    w = rng.normal(0.0, 0.4, 25)
    rows = []
    for pid, (seq, seed) in PROTEINS.items():
        residues = synthetic_backbone(seq, seed=seed, id=pid)
        (OUT / f"{pid}.pdb").write_text(write_pdb(residues))
        build_contact_graph(residues, id=pid)  # sanity: parses into a graph
        site = rng.normal(0.0, 0.3, len(seq))
        for j, r in enumerate(residues):
            for aa in substitution_codes(r.aa_code):
                delta = featurize_residue(aa) - featurize_residue(r.aa_code)
                ddg = float(w @ delta + site[j] - 0.6 + rng.normal(0.0, 0.05))
                rows.append(RawRecord(pid, r.chain_id, r.seq_index, r.aa_code, aa, round(ddg, 4)))
    # all 190 pairs of demo_b plus the first 10 of demo_a
    full_b = [r for r in rows if r.protein_id == "demo_b"]
    some_a = [r for r in rows if r.protein_id == "demo_a"][:10]
    write_ddg_csv(OUT / "demo_ddg.csv", some_a + full_b)


if __name__ == "__main__":
    main()
