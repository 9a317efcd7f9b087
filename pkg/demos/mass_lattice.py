"""Fill a small mass lattice by continuation and screen its stability.

The seed orbit at m1 = m2 = 1 is continued along m1, then every orbit on
that line along m2.  Float precision keeps this to a minute or so; pass a
P = 40 config to ``build_seed_grid`` for the high-precision version.
"""

from threebody.cns import IntegratorConfig
from threebody.continuation import build_seed_grid
from threebody.dynamics import Masses
from threebody.finder import OrbitGuess, newton_correct
from threebody.stability import screen_stability
from threebody.store import dumps_orbits

fast = IntegratorConfig.fast()
seed = newton_correct(OrbitGuess(Masses(1, 1, 1), "-1.325626981682458", "-0.8933877752879044",
                                 "-0.2885702941263346", "9.199307755830397", "0.383160887655628", "bhh-1"),
                      1e-12, cfg=fast)

grid = build_seed_grid(seed, (("0.97", "1.00"), ("1.00", "1.03")), "0.01", 1e-12, fast)
print(f"{len(grid)} orbits, {len(grid.uncovered)} lattice points missed")

print(" m1    m2     x1        T       stability  max|lambda|-1")
for rec, rep in zip(grid, screen_stability(grid.orbits)):
    print(f"{rec.masses.m1:<5} {rec.masses.m2:<5} {float(rec.x1):.5f} {float(rec.T):.5f}  "
          f"{rep.label:<10} {rep.max_modulus_excess:.1e}")

# the store is plain JSON lines with exact decimal strings
print(dumps_orbits(grid.orbits[:1]))
