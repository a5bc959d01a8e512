"""Sweep throughput of the compiled kernel against the pure-Python twin.

Both backends run the same sweeps from the same random numbers, so the final
configurations must agree bit for bit; the script checks that too.

    python3 benchmarks/kernel_speed.py [--n 400] [--sweeps 20] [--phi 0.6]
"""

import argparse
import time

import numpy as np

from colpack import engine, kernel
from colpack import geometry as geo

CASES = {
    "disk": (2, [geo.ShapeSpec("disk", {"diameter": 1.0})]),
    "disk+capsule": (2, [geo.ShapeSpec("disk", {"diameter": 1.0}),
                         geo.ShapeSpec("capsule2d", {"length": 2.0, "width": 1.0})]),
    "sphere": (3, [geo.ShapeSpec("sphere", {"diameter": 1.0})]),
    "cube": (3, [geo.ShapeSpec("cube", {"edge": 1.0})]),
}


def prepared(case, n, phi, seed=0):
    dim, species = CASES[case]
    counts = [n // len(species)] * len(species)
    counts[0] += n - sum(counts)
    config = engine.lattice_init(species, counts, dim, 0.1)
    rng = engine.make_rng(seed, 0)
    engine.quick_compress(config, phi, rng)
    return config, engine.default_moves(config)


def time_backend(backend, config, moves, sweeps, npt, seed=1):
    cfg = config.copy()
    n = cfg.n
    rand = np.random.default_rng(seed).random((sweeps, kernel.RAND_PER_TRIAL * n + 2))
    stats = np.zeros(6, dtype=np.int64)
    b3 = cfg.box3()
    t0 = time.perf_counter()
    backend.run_sweeps(cfg.table, cfg.types, cfg.positions, cfg.orientations, b3, cfg.dimension,
                       np.ascontiguousarray(moves.delta, float), np.ascontiguousarray(moves.dtheta, float),
                       float(moves.dV), 8.0, npt, rand, stats)
    dt = time.perf_counter() - t0
    cfg.set_box3(b3)
    return dt, cfg


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=400)
    ap.add_argument("--sweeps", type=int, default=20)
    ap.add_argument("--phi", type=float, default=0.6)
    ap.add_argument("--cases", nargs="*", default=list(CASES))
    ap.add_argument("--npt", action="store_true")
    args = ap.parse_args()
    if kernel.compiled_backend is None:
        raise SystemExit("compiled kernel is not built; run `pip install -e . --no-build-isolation` first")
    py, cy = kernel.get_backend("python"), kernel.get_backend("cython")
    print(f"{'case':14s} {'N':>5s} {'python s':>9s} {'cython s':>9s} {'speedup':>8s} "
          f"{'moves/s (cython)':>17s} identical")
    for case in args.cases:
        phi = args.phi if CASES[case][0] == 2 else min(args.phi, 0.45)
        config, moves = prepared(case, args.n, phi)
        t_py, c_py = time_backend(py, config, moves, args.sweeps, args.npt)
        t_cy, c_cy = time_backend(cy, config, moves, args.sweeps, args.npt)
        same = (np.array_equal(c_py.positions, c_cy.positions)
                and np.array_equal(c_py.orientations, c_cy.orientations)
                and np.array_equal(c_py.box.edges, c_cy.box.edges))
        rate = args.n * args.sweeps / t_cy
        print(f"{case:14s} {args.n:5d} {t_py:9.3f} {t_cy:9.4f} {t_py / t_cy:8.1f} {rate:17.3g} {same}")


if __name__ == "__main__":
    main()
