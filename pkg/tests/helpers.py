"""Shared oracles for the test suite."""
import numpy as np

from pulsenet import autodiff as ad


def central_difference(f, params, h=1e-5, picks=None):
    """Central differences of scalar ``f`` w.r.t. a pytree of f64 arrays.

    ``picks`` is an optional list of (leaf index, flat index) pairs; the
    default probes every entry.
    """
    leaves, rebuild = ad.tree_flatten(params)
    leaves = [np.array(p, dtype=np.float64) for p in leaves]
    if picks is None:
        picks = [(i, j) for i, p in enumerate(leaves) for j in range(p.size)]
    out = []
    for i, j in picks:
        orig = leaves[i].flat[j]
        leaves[i].flat[j] = orig + h
        up = f(rebuild(leaves))
        leaves[i].flat[j] = orig - h
        down = f(rebuild(leaves))
        leaves[i].flat[j] = orig
        out.append((float(ad.value_of(up)) - float(ad.value_of(down))) / (2 * h))
    return np.array(out)


def pick_grads(grads, picks):
    leaves = ad.tree_leaves(grads)
    return np.array([leaves[i].flat[j] for i, j in picks])


def edit_graph_manifest(path, edit):
    """Rewrite a graph file's JSON manifest in place via ``edit(manifest)``."""
    import json
    import struct
    from pathlib import Path

    buf = Path(path).read_bytes()
    magic, version, mlen = struct.unpack_from("<4sIQ", buf)
    head = struct.calcsize("<4sIQ")
    manifest = json.loads(buf[head:head + mlen])
    edit(manifest)
    blob = json.dumps(manifest).encode()
    Path(path).write_bytes(struct.pack("<4sIQ", magic, version, len(blob)) + blob
                           + buf[head + mlen:])
