"""Group pixels of a toy image by a label map, scan them in group order, and
put them back.  Prints the label map, the unfold order, and the scan cost of
one semantic pass against four raster directions.

Run: python3 demos/semantic_reordering.py
"""
import numpy as np

from attnssm import build_plan, preset, sgn_fold, sgn_unfold
from attnssm.macs import scan_cost_report

height, width = 4, 6
labels = np.zeros((height, width), dtype=int)
labels[:, 3:] = 2
labels[1:3, 1:5] = 1
print("labels:\n", labels)

plan = build_plan(labels.reshape(1, -1), T=3)
print("unfold order:", plan.perm[0].tolist())
print("group starts:", plan.group_offsets[0].tolist())

tokens = np.arange(height * width, dtype=float).reshape(1, -1, 1)
round_trip = sgn_fold(sgn_unfold(tokens, plan), plan)
print("fold(unfold(x)) == x:", np.array_equal(round_trip, tokens))

report = scan_cost_report(preset("v2-toy"), directions=4, height=360, width=640)
print(f"SSM-stage MACs at 360x640: four directions {report['multi']['total']:,}, "
      f"semantic {report['semantic']['total']:,} "
      f"({report['ratio_multi_vs_semantic']:.2f}x fewer)")
