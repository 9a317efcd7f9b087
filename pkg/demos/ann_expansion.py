"""Grow the known region of the mass plane with a neural predictor.

A regressor learns (m1, m2) -> (x1, v1, v2, T) from a continuation
lattice.  Its predictions seed Newton at untried masses around the
boundary; whatever converges joins the training set for the next round.
Failures become the "non-periodic" class of a three-way classifier.
"""

import numpy as np

from threebody import ann
from threebody.cns import IntegratorConfig
from threebody.continuation import build_seed_grid
from threebody.dynamics import Masses
from threebody.expansion import RoadmapConfig, assemble_classifier_dataset, expand_rounds
from threebody.finder import OrbitGuess, newton_correct
from threebody.stability import screen_stability

fast = IntegratorConfig.fast()
seed = newton_correct(OrbitGuess(Masses(1, 1, 1), "-1.325626981682458", "-0.8933877752879044",
                                 "-0.2885702941263346", "9.199307755830397", "0.383160887655628", "bhh-1"),
                      1e-12, cfg=fast)
grid = build_seed_grid(seed, (("0.97", "1.00"), ("1.00", "1.03")), "0.01", 1e-12, fast)

net = ann.TrainConfig(hidden=(64, 64, 64), max_epochs=2000, plateau=200)
cfg = RoadmapConfig(seed_region=None, rounds=[("ring", 3), ("ring", 3)], stall=0.05, tol=1e-10,
                    train=net, split=(1.0, 0.0, 0.0))
res = expand_rounds(grid.orbits, [], seed.theta, cfg, seed.family)
for rep in res.reports:
    print(f"round {rep.round}: {rep.converged}/{rep.issued} converged, prediction MRE {rep.mean_relative_error:.1e}")
print(f"found {len(res.orbits)} orbits, {len(res.failures)} failed mass points")

print("prediction at (0.985, 1.015):", np.round(ann.forward(res.model, [0.985, 1.015]), 5))

# stability labels from double-precision return maps, then the classifier
labelled = []
for rec, rep in zip(res.orbits, screen_stability(res.orbits)):
    if rep is not None:
        rec.stability = rep.label
        labelled.append(rec)
data = assemble_classifier_dataset(labelled, res.failures, (0.8, 0.1, 0.1))
print("class counts:", np.bincount(np.argmax(data.Y, axis=1), minlength=3))
try:
    clf, _ = ann.train_classifier(data, ann.TrainConfig.classifier(hidden=(32, 32), max_epochs=500))
except ann.TrainingError as err:
    print("classifier skipped:", err)
else:
    print("stable/unstable/non-periodic at (0.985, 1.015):", np.round(ann.forward(clf, [0.985, 1.015]), 3))
