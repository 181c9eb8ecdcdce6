from devito import Grid, TimeFunction, Eq, solve, Operator, Constant

nx, Lx = 200, 1.0
grid = Grid(shape=(nx,), extent=(Lx,))
x, = grid.dimensions
u = TimeFunction(name='u', grid=grid, time_order=1, space_order=1)
c = Constant(name='c', value=1.0)

# chained attribute form does not exist in the API
eq = Eq(u.dt, -c * u.dx.backward)
stencil = solve(eq, u.forward)
op = Operator(Eq(u.forward, stencil))
