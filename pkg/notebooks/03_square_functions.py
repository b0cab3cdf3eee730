# %% [markdown]
# # Square functions and their empirical constants
#
# Six square functions control the separated, nested and local parts of the
# wavelet expansion of the dual pair. Here we evaluate them on a uniform
# measure and estimate their L2 and weak-L1 constants on random corpora.

# %%
import numpy as np

from sparsedom.fixtures import fixture_measure, random_functions
from sparsedom.geometry import DyadicCube
from sparsedom.squarefns import SquareParams, SquareSystem, inner, operator_norm_probe, square_bilinear

mu = fixture_measure("uniform64")
root = DyadicCube(0, -2, (-1,))

# %%
f = random_functions(mu, 1, 3, positive=False)[0]
for e in (0, 1, 2):
    system = SquareSystem(mu, root, 6, SquareParams(e=e, alpha=mu.alpha))
    norms = []
    for j in (1, 2, 3):
        for s in (1, -1):
            S = system.square(f, j, s)
            norms.append(np.sqrt(inner(mu, S, S)))
    print(f"e={e}: ||S f|| =", " ".join(f"{v:7.3f}" for v in norms))

# %% [markdown]
# Two independent corpora should give constants of the same size.

# %%
system = SquareSystem(mu, root, 6, SquareParams(e=1, alpha=mu.alpha))
A = random_functions(mu, 50, 11, positive=False)
B = random_functions(mu, 50, 12, positive=False)
for probe in ("L2", "weakL1"):
    for j in (1, 2, 3):
        a = operator_norm_probe(system, probe, j, 1, A).constant
        b = operator_norm_probe(system, probe, j, 1, B).constant
        print(f"{probe:6s} S{j}+  {a:.4f}  {b:.4f}")

# %%
g = random_functions(mu, 2, 4, positive=False)[1]
system0 = SquareSystem(mu, root, 6, SquareParams(alpha=mu.alpha))
B = square_bilinear(system0, f, g, e_max=3)
print("B(f, g) =", round(B["value"], 6), " tail weight", round(B["tail_weight"], 4))
