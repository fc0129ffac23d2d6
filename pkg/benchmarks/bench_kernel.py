"""Compiled vs. numpy macrospin stepper: throughput and agreement.

    python3 benchmarks/bench_kernel.py [--cells 3136] [--steps 1500] [--json out.json]
"""

import argparse
import json
import time

import numpy as np

from irmen import backend
from irmen import magnetodynamics as md


def throughput(kernel, n, steps, temperature, repeats=3):
    g = md.geometry_for_length(60)
    p = md.MagnetParams.for_geometry(g, temperature=temperature)
    best = float("inf")
    for r in range(repeats):
        m = md.equilibrium_state(np.zeros(n))
        t0 = time.perf_counter()
        md.evolve(m, p, g, [0, 1e5, 0], duration=steps * 1e-12, dt=1e-12,
                  noise_key=1234 + r if temperature else None, kernel=kernel)
        best = min(best, time.perf_counter() - t0)
    return n * steps / best


def agreement(n=64, steps=300):
    """Largest component difference between backends on a thermal ramp."""
    g = md.geometry_for_length(40)
    p = md.MagnetParams.for_geometry(g, temperature=300.0)
    out = []
    for name in backend.available():
        m = md.equilibrium_state(np.linspace(-1, 1, n))
        md.evolve(m, p, g, [0, 1e5, 0], [0, 3e5, 0], duration=steps * 1e-12, dt=1e-12,
                  ramp_time=130e-12, noise_key=99, kernel=backend.get(name))
        out.append(m)
    return float(np.abs(out[0] - out[-1]).max())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cells", type=int, default=3136)
    ap.add_argument("--steps", type=int, default=1500)
    ap.add_argument("--python-steps", type=int, default=100)
    ap.add_argument("--json")
    args = ap.parse_args()
    rows = []
    for name in backend.available():
        steps = args.steps if name == "compiled" else args.python_steps
        for temp in (0.0, 300.0):
            rate = throughput(backend.get(name), args.cells, steps, temp)
            rows.append({"backend": name, "temperature_K": temp, "cell_steps_per_s": rate})
            print(f"{name:9s} T={temp:5.0f} K  {rate / 1e6:8.2f} M cell-steps/s "
                  f"({1e9 / rate:6.2f} ns per cell-step)")
    res = {"cells": args.cells, "rows": rows}
    if len(backend.available()) > 1:
        for temp in (0.0, 300.0):
            r = {x["backend"]: x["cell_steps_per_s"] for x in rows if x["temperature_K"] == temp}
            res[f"speedup_T{temp:g}"] = r["compiled"] / r["python"]
            print(f"speedup at T={temp:g} K: {res[f'speedup_T{temp:g}']:.1f}x")
        res["max_abs_difference"] = agreement()
        print(f"backend agreement (thermal ramp, 300 steps): {res['max_abs_difference']:.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(res, fh, indent=2)


if __name__ == "__main__":
    main()
