"""Time the compiled and pure-Python DP oracle backends on one synthetic building.

    python benchmarks/bench_oracle.py --days 28 --grids 65 257 1025 --repeats 3
"""

import argparse
import statistics
import time

from emsdistill.data import derive_battery_spec, synth_bundle
from emsdistill.env import EnvConfig
from emsdistill.oracle import OracleConfig, dp_backward_compiled, dp_backward_python, dp_optimal_schedule


def timed(cfg: OracleConfig, backend, repeats: int):
    times, sched = [], None
    for _ in range(repeats):
        t0 = time.perf_counter()
        sched = dp_optimal_schedule(cfg, backend=backend)
        times.append(time.perf_counter() - t0)
    return statistics.median(times), sched


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--days", type=int, default=28)
    ap.add_argument("--grids", type=int, nargs="+", default=[65, 257, 1025])
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args(argv)

    bundle = synth_bundle(a.seed, a.days, "arbitrage")
    env = EnvConfig(bundle, derive_battery_spec(bundle))
    print(f"{len(bundle)} slots, capacity {env.spec.capacity_max:.2f} kWh, median of {a.repeats} runs")
    print("| grid | python s | compiled s | speed-up | identical |")
    print("|---|---|---|---|---|")
    for g in a.grids:
        cfg = OracleConfig(env, g)
        py_t, py_s = timed(cfg, dp_backward_python, a.repeats)
        if dp_backward_compiled is None:
            print(f"| {g} | {py_t:.3f} | n/a | n/a | n/a |")
            continue
        cy_t, cy_s = timed(cfg, dp_backward_compiled, a.repeats)
        same = py_s.total_cost == cy_s.total_cost and (py_s.soe == cy_s.soe).all()
        print(f"| {g} | {py_t:.3f} | {cy_t:.3f} | {py_t / cy_t:.1f}x | {same} |")


if __name__ == "__main__":
    main()
