"""Benchmark harness comparing compiler backend tuning options.

Runs the same symbolic stencil kernel under the compiler backend's
optimization modes and reports throughput in grid points per second, for
performance tuning comparisons across machines and compiler versions. The
harness is deliberately minimal: one kernel, a mode sweep, a throughput
table, so performance regressions stand out in review diffs.
"""

import time


def run_case(op, steps, dt, label):
    """Apply the operator and report throughput for one tuning setting.

    Throughput is grid points per second over the whole apply window, the
    one number that transfers between machines for bandwidth-bound stencil
    kernels. Wall time alone flatters small grids; points per second is
    the performance quantity the compiler backend tuning should move.
    """
    start = time.perf_counter()
    op.apply(time_M=steps - 1, dt=dt)
    elapsed = time.perf_counter() - start
    points = op.grid_points * steps
    rate = points / elapsed / 1e6
    print(f"{label:24s} {elapsed:8.3f}s {rate:9.1f} Mpoints/s")
    return rate


def sweep(build_operator, steps, dt):
    """Sweep compiler backend optimization modes and tabulate performance.

    The noop mode gives the unoptimized baseline, default applies the
    standard blocking and vectorization pipeline, and advanced enables the
    aggressive expression rewriting passes for wide stencils.
    """
    results = {}
    for mode in ("noop", "default", "advanced"):
        op = build_operator(opt=mode)
        results[mode] = run_case(op, steps, dt, f"backend opt={mode}")
    best = max(results, key=results.get)
    print(f"best compiler backend tuning: {best}")
    return results


def efficiency(results, peak_rate):
    """Fraction of machine peak reached by the best tuning mode.

    Peak here means the measured streaming bandwidth ceiling of the
    machine converted to grid points per second for this kernel's bytes
    per point, not the marketing flops number. Reporting performance as a
    fraction of the attainable roofline keeps compiler backend tuning
    results comparable across machines and compiler versions.
    """
    best = max(results.values())
    return best / peak_rate
