"""How much noise data does a pure LSTM need to mimic a linear plant?

Trains the {39} network on 2, 5, 10 and 20 noise files drawn from the
synthetic 3x3 study plant and prints validation RMS and Multi-Rain ratio
per size. Takes roughly eight minutes on one core.
"""

import sys

from hybrid_sysid import synth
from hybrid_sysid.cli import run_study, spearman

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
rows = run_study(synth.study_plant(200.0), (2, 5, 10, 20), ((39,),), seed)
print(f"{'files':>5}  {'rms':>6}  {'multirain':>9}")
for r in rows:
    print(f"{r['files']:5d}  {r['rms']:6.3f}  {r['multirain']:9.3f}")
rho = spearman([r["files"] for r in rows], [r["rms"] for r in rows])
print(f"rank correlation of size and rms: {rho:.2f}")
