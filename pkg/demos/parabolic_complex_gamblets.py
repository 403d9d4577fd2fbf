"""
Heat equation with Radau IIA and complex shifts
===============================================

Diagonalizing the Runge-Kutta matrix turns each step into three shifted
solves, two of them with complex conjugate shifts. Each shift gets its own
hierarchy built in complex arithmetic.
"""

import numpy as np

from gamblets import FemGrid, assemble, build_hierarchy
from gamblets.diagnostics import condition_report
from gamblets.discretization import multiscale_coefficient
from gamblets.integrators import TABLEAUX, GambletBackend, IntegratorPlan, heat_benchmark, multi_timestep_run, run

r = 4
_, cells = build_hierarchy(r)
asm = assemble(FemGrid(r), multiscale_coefficient(r))
prob = heat_benchmark(asm)

print("Radau IIA eigenvalues:", [complex(x) for x in TABLEAUX["radau2a"].eig[0]])
backend = GambletBackend(asm, cells)
plan = IntegratorPlan("radau2a", 0.1, 1.0, backend)
traj = run(prob, plan, keep="final")
print("shifts:", [complex(t) for t in backend.taus])
print("largest imaginary residue in the state:", plan.stats["max_imag_residue"])

for tau, gh in backend.hierarchies.items():
    conds = [f"{rep.cond:.1f}" for rep in condition_report(gh)]
    print(f"tau={tau:.4f}: block condition numbers {conds}")

# coarse steps with a geometrically refined last interval
res = multi_timestep_run(prob, IntegratorPlan("euler", 0.1, 1.0, GambletBackend(asm, cells)), 1 / 1280)
print(f"s={res.s}, {res.n_steps} steps, last interval: {np.round(res.schedule[-res.s - 1:], 6)}")
