"""
Killing the leader under load
=============================

64 closed-loop clients hammer 16384 keys. The leader is killed at t=2s and
the survivors take over after the 100ms failure detector fires.
"""

import numpy as np

from bizur.scenario import load_scenario, run

cfg = load_scenario("""
name: kill-demo
seed: 0
duration_s: 4
workload: {clients: 64, keys: 16384}
faults:
  - {at_s: 2, action: kill_leader}
""")
result = run(cfg)
print(result.csv())

# 100ms windows around the kill
t = result.acked_times
windows = np.bincount(t // 100_000, minlength=40)
for i in range(17, 26):
    print("%4.1fs %6d %s" % (i / 10, windows[i], "#" * (windows[i] // 40)))

first = t[t > 2_000_000][0]
print("first acknowledged op after the kill: +%.1f ms" % ((first - 2_000_000) / 1000))
print("new leader:", result.cluster.leader())
