from devito import *
import numpy as np

grid = Grid(shape=(101,), extent=(1.0,))
u = TimeFunction(name='u', grid=grid, space_order=1)
dt, c, nx, nsteps = 1e-4, 1.0, 100, 500

# 1-based indexing habit + misspelled array name
u_data = np.zeros((nx + 1), dtype=np.float64)
for i in range(1, nx + 1):
    x = (i - 1) * 0.01
    if 0.2 <= x <= 0.4:
        nu_data[i] = 1.0
    u.data[0][1:] = nu_data  # typo + offset assignment

# bc= keyword and condition-string SubDomain are both invalid forms
bcs = [SubDomain('x==0', {'u': 0}), SubDomain('x==1', {'u': 0})]
eq = Eq(u.dt, -c * u.dx)  # centred difference where upwind is required
op = Operator(eq, bc=bcs)
op.apply(time_M=nsteps - 1, dt=dt)
