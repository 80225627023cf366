"""Per-stage frame latency of the compiled and numpy runtimes on the full-size model.

    python3 benchmarks/bench_backends.py [--iters 2000] [--json out.json]
"""
import argparse
import json

from drape.runtime import STAGES, compare_backends
from drape.runtime.bench import latency_model


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--warmup", type=int, default=200)
    ap.add_argument("--json", help="write the raw report here")
    args = ap.parse_args()

    flat, *_ = latency_model()
    report = compare_backends(flat, args.iters, args.warmup)
    names = sorted(report)
    rows = [(stage, [report[b]["stages_us"][stage]["median"] for b in names]) for stage in STAGES]
    rows.append(("mlp", [report[b]["mlp_us"]["median"] for b in names]))
    rows.append(("total", [report[b]["total_us"]["median"] for b in names]))

    print(f"{'median us':<16}" + "".join(f"{b:>12}" for b in names))
    for label, vals in rows:
        print(f"{label:<16}" + "".join(f"{v:12.1f}" for v in vals))
    if len(names) == 2:
        a, b = (report[n]["total_us"]["median"] for n in names)
        print(f"\n{names[1]} / {names[0]} total: {b / a:.2f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(report, fh, indent=2)


if __name__ == "__main__":
    main()
