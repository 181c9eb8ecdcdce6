from devito import Grid, TimeFunction, Eq, solve, Operator, Constant, first_derivative

nx, Lx = 200, 1.0
grid = Grid(shape=(nx,), extent=(Lx,))
x, = grid.dimensions
u = TimeFunction(name='u', grid=grid, time_order=1, space_order=1)
c = Constant(name='c', value=1.0)

# first-order upwind: explicit side (c>0 -> left; c<0 -> right)
du_dx = first_derivative(u, dim=x, side='left')
eq = Eq(u.dt, -c * du_dx)
stencil = solve(eq, u.forward)
op = Operator([Eq(u.forward, stencil)])
