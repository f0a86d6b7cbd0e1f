"""SDPA sparse format (``.dat-s``) writer and parser.

SDPA's primal reads ``min c.x  s.t.  sum_i x_i F_i - F_0`` PSD, whose dual
``max <F_0, Y>  s.t.  <F_i, Y> = c_i`` is our standard form with
``F_0 = -C``, ``F_i = A_i`` and ``c = b``.  Free variables are written as
the difference of two nonnegative copies in an extra LP block; a comment
line records the split so that :func:`read_sdpa` restores the original
problem.  Numbers are written with 17 significant digits (bit-exact
round trip).
"""

from __future__ import annotations

import io
import re

import numpy as np

from .sdp import SdpProblem

_SPLIT_TAG = "*free-split"


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def sdpa_string(p: SdpProblem) -> str:
    if p.m == 0:
        raise ValueError("refusing to export an SDP without constraints")
    sizes = list(p.block_sizes)
    C = list(p.C)
    A = list(p.A)
    buf = io.StringIO()
    if p.n_free:
        nf = p.n_free
        sizes.append(-2 * nf)
        C.append(np.concatenate([p.c_free, -p.c_free]))
        rows = np.nonzero(np.any(p.A_free != 0, axis=1))[0]
        A.append((rows, np.hstack([p.A_free[rows], -p.A_free[rows]])))
        buf.write(f"{_SPLIT_TAG} block={len(sizes)} n={nf}\n")
    buf.write(f"{p.m}\n{len(sizes)}\n")
    buf.write(" ".join(str(s) for s in sizes) + "\n")
    buf.write(" ".join(_fmt(v) for v in p.b) + "\n")
    for k, (s, Cb, (rows, data)) in enumerate(zip(sizes, C, A), start=1):
        # F_0 = -C
        _write_block(buf, 0, k, s, -np.asarray(Cb))
        if len(rows):
            order = np.argsort(rows, kind="stable")
            for r in order:
                _write_block(buf, int(rows[r]) + 1, k, s, data[r])
    return buf.getvalue()


def _write_block(buf, mat: int, blk: int, size: int, M: np.ndarray) -> None:
    if size > 0:
        iu, ju = np.triu_indices(size)
        vals = M[iu, ju]
        for i, j, v in zip(iu[vals != 0], ju[vals != 0], vals[vals != 0]):
            buf.write(f"{mat} {blk} {i + 1} {j + 1} {_fmt(v)}\n")
    else:
        for i in np.nonzero(M)[0]:
            buf.write(f"{mat} {blk} {i + 1} {i + 1} {_fmt(M[i])}\n")


def write_sdpa(p: SdpProblem, path) -> None:
    text = sdpa_string(p)
    with open(path, "w") as fh:
        fh.write(text)


def parse_sdpa(text: str) -> SdpProblem:
    """Parse SDPA sparse text; repeated entries are summed, as in SDPA."""
    split = None
    lines = []
    for raw in text.splitlines():
        line = raw.strip()
        if line.startswith(_SPLIT_TAG):
            m = re.search(r"block=(\d+)\s+n=(\d+)", line)
            if m:
                split = (int(m.group(1)), int(m.group(2)))
            continue
        if not line or line[0] in '"*':
            continue
        lines.append(re.sub(r"[,(){}]", " ", line).split())
    if len(lines) < 4:
        raise ValueError("truncated SDPA file")
    m = int(lines[0][0])
    nblk = int(lines[1][0])
    sizes = [int(float(v)) for v in lines[2][:nblk]]
    b = np.array([float(v) for v in lines[3][:m]])
    if m == 0:
        raise ValueError("SDPA problem without constraints")
    C = [np.zeros((s, s)) if s > 0 else np.zeros(-s) for s in sizes]
    dense = [np.zeros((m,) + ((s, s) if s > 0 else (-s,))) for s in sizes]
    touched = [np.zeros(m, bool) for _ in sizes]
    for tok in lines[4:]:
        mat, blk, i, j = (int(t) for t in tok[:4])
        v = float(tok[4])
        k = blk - 1
        s = sizes[k]
        if mat == 0:
            target = C[k]
            v = -v
        else:
            target = dense[k][mat - 1]
            touched[k][mat - 1] = True
        if s > 0:
            target[i - 1, j - 1] += v
            if i != j:
                target[j - 1, i - 1] += v
        else:
            target[i - 1] += v
    A_free = c_free = None
    if split is not None:
        k, nf = split[0] - 1, split[1]
        c_free = C[k][:nf]
        A_free = dense[k][:, :nf]
        del sizes[k], C[k], dense[k], touched[k]
    A = []
    for d, t in zip(dense, touched):
        rows = np.nonzero(t)[0]
        A.append((rows, d[rows]))
    return SdpProblem(sizes, b, C, A, A_free, c_free)


def read_sdpa(path) -> SdpProblem:
    with open(path) as fh:
        return parse_sdpa(fh.read())
