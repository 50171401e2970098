"""Compare the numba and numpy trajectory kernels on identical blocks.

    python3 benchmarks/bench_kernels.py [--blocks 8] [--dim 32]
"""

import argparse
import time

import numpy as np

from seqweak import kernels, wigner
from seqweak.montecarlo import SequencePlan
from seqweak.qcore import QuantumState, pauli_along
from seqweak.rng import BLOCK_SIZE, block_variates


def cases(dim):
    up = QuantumState.from_vector([1, 0])
    x, y = pauli_along((1, 0, 0)), pauli_along((0, 1, 0))
    pair = wigner.canonical_pair(dim)
    vac = wigner.vacuum(dim)
    return {
        "spin x,x (a=2)": SequencePlan.build(up, [x, x], [2.0, 2.0]),
        "spin x,y,y,x (strong)": SequencePlan.build(up, [x, y, y, x], [0.0] * 4),
        f"canonical q,p,q,p D={dim} (a=5)": SequencePlan.build(vac, [pair.q_op, pair.p_op] * 2, [5.0] * 4),
    }


def time_kernel(fn, plan, variates, repeat=3):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        for v in variates:
            fn(*plan.kernel_args(), v.u_mix, v.u_branch, v.z)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--blocks", type=int, default=8)
    ap.add_argument("--dim", type=int, default=32)
    args = ap.parse_args()
    if not kernels.HAVE_NUMBA:
        print("numba is not installed; only the numpy kernel is available")
    print(f"{'case':36s} {'numpy [s]':>10s} {'numba [s]':>10s} {'speedup':>8s} {'traj/s (numba)':>15s}")
    for name, plan in cases(args.dim).items():
        variates = [block_variates(12345, b, plan.steps) for b in range(args.blocks)]
        t_np = time_kernel(kernels.chain_numpy, plan, variates)
        if kernels.HAVE_NUMBA:
            kernels.chain_numba(*plan.kernel_args(), variates[0].u_mix, variates[0].u_branch, variates[0].z)
            t_nb = time_kernel(kernels.chain_numba, plan, variates)
            n = args.blocks * BLOCK_SIZE
            print(f"{name:36s} {t_np:10.3f} {t_nb:10.3f} {t_np / t_nb:8.2f} {n / t_nb:15.3g}")
        else:
            print(f"{name:36s} {t_np:10.3f} {'-':>10s}")


if __name__ == "__main__":
    main()
