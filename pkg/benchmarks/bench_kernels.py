"""Compare the numba and pure-numpy patch scatter kernels.

Run with ``python benchmarks/bench_kernels.py [--square N] [--p P] [--repeat R]``.

Two measurements:

* kernel level: ``assemble_patch`` and ``scatter_vector`` on the element
  blocks of every vertex patch of a structured mesh, both implementations
  called directly;
* end to end: a full flux reconstruction in a subprocess with and without
  ``EQUIFLUX_DISABLE_NUMBA=1``.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from equiflux import _kernels
from equiflux.equilibration import Equilibrator
from equiflux.mesh import structured_square
from equiflux.problems import get_problem
from equiflux.primal import solve_primal


def patch_inputs(n: int, p: int):
    mesh, part = structured_square(n, "D", diagonal="alternate")
    problem = get_problem("sinsin")
    data = problem.data(mesh, p, 0, part)
    sol = solve_primal(data, mesh, 1)
    eq = Equilibrator(mesh, data, sol, p)
    out = []
    for a in range(mesh.n_vertices):
        pr = eq.build(a)
        el = pr.patch.elements
        out.append((np.ascontiguousarray(eq.mass[el]), pr.idx, np.ascontiguousarray(pr.sign, dtype=float),
                    pr.system.n, np.ascontiguousarray(eq.target_full[el, pr.patch.local_index])))
    return mesh, out


def time_kernels(inputs, repeat: int) -> dict:
    res = {}
    impls = {"numpy": (_kernels.assemble_patch_numpy, _kernels.scatter_vector_numpy)}
    if _kernels.HAVE_NUMBA:
        impls["numba"] = (_kernels.assemble_patch_numba, _kernels.scatter_vector_numba)
        # compile outside the timed region
        b, i, s, n, v = inputs[0]
        _kernels.assemble_patch_numba(b, i, s, n)
        _kernels.scatter_vector_numba(v, i, s, n)
    for name, (asm, sc) in impls.items():
        best = np.inf
        for _ in range(repeat):
            t = time.perf_counter()
            for b, i, s, n, v in inputs:
                asm(b, i, s, n)
                sc(v, i, s, n)
            best = min(best, time.perf_counter() - t)
        res[name] = best
    # both implementations must agree
    if "numba" in impls:
        for b, i, s, n, v in inputs[:20]:
            assert np.allclose(_kernels.assemble_patch_numpy(b, i, s, n), _kernels.assemble_patch_numba(b, i, s, n),
                               rtol=1e-14, atol=1e-14)
    return res


END_TO_END = """
import time
from equiflux.equilibration import Equilibrator
from equiflux.mesh import structured_square
from equiflux.problems import get_problem
from equiflux.primal import solve_primal
from equiflux import _kernels
mesh, part = structured_square({n}, "D")
data = get_problem("sinsin").data(mesh, {p}, 0, part)
sol = solve_primal(data, mesh, 1)
eq = Equilibrator(mesh, data, sol, {p})
eq.flux()  # warm-up (numba compilation and caches)
t = time.perf_counter()
eq.flux()
print(_kernels.USE_NUMBA, time.perf_counter() - t)
"""


def time_end_to_end(n: int, p: int) -> dict:
    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, EQUIFLUX_DISABLE_NUMBA=flag)
        r = subprocess.run([sys.executable, "-c", END_TO_END.format(n=n, p=p)], env=env,
                           capture_output=True, text=True, check=True)
        used, secs = r.stdout.split()
        out["numba" if used == "True" else "numpy"] = float(secs)
    return out


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--square", type=int, default=16)
    ap.add_argument("--p", type=int, default=3)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    mesh, inputs = patch_inputs(args.square, args.p)
    print(f"mesh: {mesh.n_elements} elements, {len(inputs)} patches, p = {args.p}")
    k = time_kernels(inputs, args.repeat)
    for name, t in k.items():
        print(f"kernels  {name:6s} {t * 1e3:9.2f} ms")
    if "numba" in k:
        print(f"kernel speedup numba / numpy: {k['numpy'] / k['numba']:.1f}x")
    e = time_end_to_end(args.square, args.p)
    for name, t in e.items():
        print(f"flux     {name:6s} {t * 1e3:9.2f} ms")


if __name__ == "__main__":
    main()
