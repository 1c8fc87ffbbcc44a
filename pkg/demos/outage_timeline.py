"""Run the bundled gateway outage scenario and sketch the queue depths.

The sensor buffers locally while the gateway is off the home network, then the
gateway's pull loop catches up.  Nothing is lost and nothing is stored twice.

    python demos/outage_timeline.py [gateway-loss|internet-loss]
"""

import sys

from homesense import builtin_scenario, run_scenario

name = sys.argv[1] if len(sys.argv) > 1 else "gateway-loss"
report = run_scenario(builtin_scenario(name))
s = report.summary

t = report.column("t")
depths = {c: report.column(c) for c in report.columns if c.startswith("q_") or c == "gateway_queue"}
peak = max(max(v) for v in depths.values()) or 1
print(f"{name}: {s['generated']} samples generated, {s['sink_count']} in the sink")
for i in range(0, len(t), 10):
    bars = "  ".join(f"{c:>14} {'#' * round(20 * v[i] / peak):<20}" for c, v in depths.items())
    print(f"t={int(t[i]) // 60:4d}m  {bars}")

def secs(x):
    return "never" if x is None else f"{x:.0f}s"


for f in s["faults"]:
    print(
        f"{f['kind']} on {f['target']} {f['start']:.0f}-{f['end']:.0f}s: "
        f"sensors drained in {secs(f['sensor_drain_s'])}, gateway in {secs(f['gateway_drain_s'])}"
    )
