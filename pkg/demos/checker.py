"""
Hunting for linearizability bugs
================================

Seeded runs with a leader kill and 5% message loss, checked against a
sequential register model. The second half swaps in a broken node that skips
the write-back after recovery.
"""

from bizur.checker import CheckerParams, run_check

ok = sum(run_check(seed).ok for seed in range(50))
print("correct nodes: %d/50 seeds linearizable" % ok)

broken = CheckerParams(mutant=True)
for seed in range(200):
    res = run_check(seed, broken)
    if not res.verdict.ok:
        break
print("broken node caught at seed", seed)
v = res.verdict
print("key %r, shortest failing prefix: %d events" % (v.key, len(v.prefix)))
# only the offending key matters; the other keys were linearizable
key = v.prefix.events[-1].key
for line in v.prefix.dumps().splitlines():
    if line.split()[4] == key.decode():
        print(line)
