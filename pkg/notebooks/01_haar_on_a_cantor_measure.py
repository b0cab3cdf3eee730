# %% [markdown]
# # Adapted Haar functions on a Cantor measure
#
# The Cantor-6 fixture puts 64 equal atoms on the middle-thirds construction.
# Dyadic cubes cut it unevenly, so the Haar functions have to be adapted to
# the mass of each cube and its parent.

# %%
import numpy as np

from sparsedom import geometry as geo
from sparsedom.fixtures import fixture_measure
from sparsedom.geometry import DyadicCube
from sparsedom.haar import analyze, haar, plancherel, telescope, universe

mu = fixture_measure("cantor6")
Q = DyadicCube(0, -2, (-1,))  # side 4, holds [0, 1) in its central half
print(mu.size, "atoms, growth exponent", round(mu.alpha, 4), "certificate", mu.C_growth)

# %% [markdown]
# Each h_I is constant on I and on the rest of its parent. Its squared norm
# is 1 - mu(I)/mu(parent), so cubes that carry all of the parent's mass give
# the zero function.

# %%
for I in mu.cubes_in(Q, 6)[:12]:
    h = haar(mu, I)
    v = h.values(mu)
    print(f"{str(I):16s} mass {mu.mass(I):.4f}  norm^2 {np.sum(v * v * mu.weights):.4f}"
          f"  mean {np.sum(v * mu.weights):+.1e}")

# %% [markdown]
# Telescoping: the Haar expansion over the children of R reproduces the
# difference of conditional expectations at every atom.

# %%
rng = np.random.default_rng(0)
f = rng.normal(size=mu.size)
R = mu.grids.cube_at(0, 2, mu.points[10])
lhs, rhs = telescope(mu, f, R)
print("telescoping max error", np.max(np.abs(lhs - rhs)))

# %% [markdown]
# Summed to full resolution, the coefficients carry exactly the energy of
# f minus its mean on Q.

# %%
energy, norm = plancherel(mu, f, Q)
print(f"sum |<f,h_I>|^2 = {energy:.6f}   ||f||^2 = {norm:.6f}")
cm = analyze(mu, f, universe(mu, Q, 4))
print(len(cm.entries), "coefficients down to depth 4")
