"""Linear-complexity attention versus the quadratic dot-product form.

The efficient variant softmaxes queries along features and keys along
positions, collapses keys and values into a d x d global context, and
never touches an n x n matrix. The probe times both variants and prints
the growth ratios.
"""

import numpy as np

from medpnet.autodiff import Tensor, record_shapes
from medpnet.edcp import complexity_probe, dot_product_attention, efficient_attention

rng = np.random.default_rng(0)

# Same answer where both are exact: a single query row.
Q, K, V = (Tensor(rng.normal(size=(1, 8))) for _ in range(3))
print("n=1 agreement:", np.allclose(dot_product_attention(Q, K, V).data, efficient_attention(Q, K, V).data))

# Allocation audit: nothing n x n appears in the efficient path.
n = 512
with record_shapes() as shapes:
    efficient_attention(
        Tensor(rng.normal(size=(n, 64))), Tensor(rng.normal(size=(n, 64))), Tensor(rng.normal(size=(n, 64)))
    )
print(f"n x n allocated by efficient attention: {(n, n) in shapes}")
print("largest allocations:", sorted(shapes, key=lambda s: -np.prod(s))[:3])

sizes = [1024, 2048, 4096]
print(f"\ntiming, d=64, sizes {sizes} (median seconds per call)")
for variant in ("efficient", "dot_product"):
    rows = complexity_probe(sizes, d=64, variant=variant)
    times = [t for _, t in rows]
    ratios = [times[i + 1] / times[i] for i in range(len(times) - 1)]
    cells = "  ".join(f"{n}: {t * 1e3:7.2f} ms" for n, t in rows)
    print(f"{variant:>12}  {cells}   doubling ratios: {[round(r, 2) for r in ratios]}")
print("\nlinear scaling doubles cost per doubling; the quadratic variant quadruples it.")
