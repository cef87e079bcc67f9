"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py            # per-kernel timings
    python3 benchmarks/bench_kernels.py --e2e 5    # plus grid detection under both backends

Kernel timings call both variants directly in one process.  The end-to-end
comparison starts a subprocess per backend, because the
GRAINPIPE_DISABLE_NUMBA flag is read at import time.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from grainpipe.vision import _kernels as K
from grainpipe._accel import HAVE_NUMBA


def _inputs(seed=0, size=400):
    rng = np.random.default_rng(seed)
    mask = rng.random((size, size)) < 0.45
    ys, xs = (v.astype(np.float64) for v in np.nonzero(rng.random((size, size)) < 0.05))
    theta = np.deg2rad(np.arange(0.0, 180.0, 0.5))
    diag = float(np.hypot(size, size))
    t_center = rng.integers(0, theta.size, ys.size)
    ang = rng.uniform(0, 2 * np.pi, ys.size)
    radii = np.arange(60, 90, dtype=np.float64)
    return {
        "label": ((mask, True),),
        "hough_lines": ((ys, xs, np.cos(theta), np.sin(theta), -diag, 1.0, int(2 * diag) + 1, t_center, 20),),
        "center_votes": ((ys, xs, np.sin(ang), np.cos(ang), radii, size, size),),
        "circle_votes": ((ys[:2000], xs[:2000], radii, 90, size, size, 1),),
    }


PAIRS = {
    "label": ("label_numba", "label_numpy"),
    "hough_lines": ("hough_lines_numba", "hough_lines_numpy"),
    "center_votes": ("center_votes_numba", "center_votes_numpy"),
    "circle_votes": ("circle_votes_numba", "circle_votes_numpy"),
}


def bench_kernels(repeat):
    inputs = _inputs()
    print(f"{'kernel':<14}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}  agree")
    for name, (fast_name, slow_name) in PAIRS.items():
        (args,) = inputs[name]
        slow = getattr(K, slow_name)
        t_slow = min(timeit.repeat(lambda: slow(*args), number=1, repeat=repeat)) * 1e3
        if not HAVE_NUMBA:
            print(f"{name:<14}{'-':>12}{t_slow:>12.2f}{'-':>10}  -")
            continue
        fast = getattr(K, fast_name)
        fast(*args)  # compile outside the timing
        t_fast = min(timeit.repeat(lambda: fast(*args), number=1, repeat=repeat)) * 1e3
        a, b = fast(*args), slow(*args)
        same = all(np.array_equal(x, y) for x, y in zip(a, b)) if isinstance(a, tuple) else np.array_equal(a, b)
        print(f"{name:<14}{t_fast:>12.2f}{t_slow:>12.2f}{t_slow / t_fast:>9.1f}x  {same}")


_E2E = """
import sys, time
import numpy as np
import grainpipe.synthscene as ss, grainpipe.standardize as st, grainpipe.fiducial as fd, grainpipe.gridfind as gf
from grainpipe._accel import backend
frames = [ss.render_reference(ss.SceneSpec.random(s))[0] for s in range(int(sys.argv[1]) + 1)]
def detect(cube):
    s = st.standardize(cube)
    gf.detect_grid(s.plate, fd.detect_markers(s.plate))
detect(frames[0])  # warm-up, includes numba compilation
t = time.perf_counter()
for cube in frames[1:]:
    detect(cube)
print(backend(), (time.perf_counter() - t) / (len(frames) - 1))
"""


def bench_e2e(scenes):
    for flag in ("0", "1"):
        env = dict(os.environ, GRAINPIPE_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", _E2E, str(scenes)], env=env, capture_output=True, text=True,
                             check=True)
        backend, secs = out.stdout.split()
        print(f"grid detection per scene [{backend}]: {float(secs):.3f} s")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--e2e", type=int, default=0, metavar="N", help="also time grid detection on N scenes")
    args = ap.parse_args()
    bench_kernels(args.repeat)
    if args.e2e:
        bench_e2e(args.e2e)


if __name__ == "__main__":
    main()
