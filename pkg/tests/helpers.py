"""Shared oracles for the test suite."""
from __future__ import annotations

import numpy as np

from stabdesign import nn
from stabdesign.protein_graph import Residue, build_contact_graph


def grad_check(loss_fn, params, rng, eps=1e-3, max_entries=None):
    """Largest elementwise relative error between autodiff and central differences.

    The numeric derivative is the Richardson combination ``(4 D(eps/2) - D(eps)) / 3``
    of two central differences, which cancels their O(eps^2) truncation term.
    ``loss_fn()`` builds a scalar Tensor from ``params`` (name -> Tensor). Run it
    under ``nn.precision(np.float64)``. With ``max_entries`` only that many
    randomly chosen scalar entries are perturbed.
    """
    _, grads = nn.forward_backward(loss_fn, params)
    entries = [(k, idx) for k, p in params.items() for idx in np.ndindex(p.shape)]
    if max_entries is not None and len(entries) > max_entries:
        pick = rng.choice(len(entries), size=max_entries, replace=False)
        entries = [entries[i] for i in pick]
    worst = 0.0
    for k, idx in entries:
        p = params[k]
        old = p.data[idx]

        def central(h):
            p.data[idx] = old + h
            up = loss_fn().item()
            p.data[idx] = old - h
            down = loss_fn().item()
            p.data[idx] = old
            return (up - down) / (2 * h)

        num = (4 * central(eps / 2) - central(eps)) / 3
        ana = float(grads[k][idx])
        rel = abs(ana - num) / max(abs(ana), abs(num), 1e-6)
        worst = max(worst, rel)
    return worst


def brute_force_edges(coords, cutoff=8.0):
    """O(n^2) contact oracle written independently of the package kernels."""
    coords = [tuple(map(float, c)) for c in coords]
    out = set()
    for j in range(len(coords)):
        for k in range(j + 1, len(coords)):
            d2 = sum((a - b) ** 2 for a, b in zip(coords[j], coords[k]))
            if d2 ** 0.5 <= cutoff:
                out.add((j, k))
    return out


def graph_from_coords(coords, seq="", id="g"):
    seq = seq or "A" * len(coords)
    res = [Residue("A", i + 1, seq[i], tuple(map(float, c))) for i, c in enumerate(coords)]
    return build_contact_graph(res, id=id)


PDB_LINE = "ATOM  {serial:5d}  CA {alt}{res:3s} {chain}{seq:4d}{icode}   {x:8.3f}{y:8.3f}{z:8.3f}  1.00  0.00           C"


def pdb_line(serial, res, seq, x, y, z, chain="A", alt=" ", icode=" "):
    return PDB_LINE.format(serial=serial, alt=alt, res=res, chain=chain, seq=seq, icode=icode, x=x, y=y, z=z)
