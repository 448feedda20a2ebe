"""
==========================================
What the range sensor buys, across p
==========================================

Three normalized views of the sensor's value as market penetration varies,
all at a fixed arrival rate.  Each curve peaks at a low-to-moderate p: with
almost no connected vehicles there is rarely a follower to range off, and
with full penetration the last CV already is the last vehicle.
"""

import numpy as np

from cvqueue import SignalDemandConfig, improvement_curves
from cvqueue.core import P_GRID_FULL

cfg = SignalDemandConfig(lam=0.133, p=0.5)  # p here is a placeholder; swept below
curves = improvement_curves(cfg, P_GRID_FULL)

print(f"lambda = {cfg.lam} veh/s, R = {cfg.red} s, mean queue = {cfg.lam*cfg.red:.2f}")
print()
print(f"{'p':>6} {'V off':>9} {'V on':>9} {'VMR gain %':>11} {'CoV gain %':>11} {'sd gain':>9}")
for i, p in enumerate(curves.p_values):
    marks = ""
    if i == int(np.argmax(curves.vmr_pct)):
        marks += "  <- VMR peak"
    if i == int(np.argmax(curves.cov_pct)):
        marks += "  <- CoV peak"
    if i == int(np.argmax(curves.sd_diff)):
        marks += "  <- sd peak"
    print(
        f"{p:>6.3f} {curves.v_off[i]:>9.4f} {curves.v_on[i]:>9.4f}"
        f" {curves.vmr_pct[i]:>11.3f} {curves.cov_pct[i]:>11.3f}"
        f" {curves.sd_diff[i]:>9.4f}{marks}"
    )

print()
print("VMR gain  = (V_off - V_on) / (lambda R) * 100   -- variance units")
print("CoV gain  = (sd_off - sd_on) / (lambda R) * 100 -- sd units")
print("sd gain   = sd_off - sd_on                      -- vehicles")
print()
print("To regenerate as CSV:  cvqueue figure --figure fig3 --out <dir>")
print("                       cvqueue figure --figure fig4 --out <dir>")
