"""Write the bundled correlated-Gaussian sample used by ``sieve estimate-mi``.

5000 draws of (X, Y) standard normal with correlation 0.9; the true mutual
information is -0.5 * ln(1 - 0.81) = 0.830 nats.
"""

from pathlib import Path

import numpy as np

from sieve.checkpoint import write_arrays

N, RHO, SEED = 5000, 0.9, 20240901

rng = np.random.default_rng(SEED)
x = rng.standard_normal(N)
y = RHO * x + np.sqrt(1 - RHO**2) * rng.standard_normal(N)
target = Path(__file__).resolve().parents[1] / "src" / "sieve" / "data" / "gaussian-corr0.9.siv"
write_arrays(target, {"x": x[:, None].astype(np.float32), "y": y[:, None].astype(np.float32)})
print(target)
