"""
Ranking anchor placements in a non-convex room
===============================================

Eight anchors in a 10 m L-shaped room.  Walls block line of sight and the
sensing range is limited, so the set of visible anchors changes across the
floor.  We draw a few random valid placements and rank them three ways.
"""
import warnings

from mineloc import NoiseModel, generate_suite, l_room, metric_correlation_study

room = l_room()
suite = generate_suite(room, n=6, L=8, seed=1)
print(f"{len(suite)} valid placements drawn (coverage >= 4 anchors per cell)\n")

with warnings.catch_warnings():
    warnings.simplefilter("ignore", RuntimeWarning)
    res = metric_correlation_study(suite, [NoiseModel("gaussian", 0.2)], D=50, seed=0)["gaussian"]

print(f"{'placement':10s} {'RMSE m':>8s} {'PEB m':>8s} {'MI nats':>8s}")
for m in sorted(res["metrics"], key=lambda m: m.rmse):
    print(f"{m.placement_id:10s} {m.rmse:8.3f} {m.peb:8.3f} {m.mi:8.3f}")

# A good placement has low RMSE, low PEB and high MI.
print(f"\nrho(RMSE, PEB) = {res['rmse_peb'].rho:.3f}")
print(f"rho(RMSE, MI)  = {res['rmse_mi'].rho:.3f}")
