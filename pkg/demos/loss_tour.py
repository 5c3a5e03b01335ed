"""A short tour of the bag losses.

Prints each loss on a few hand-picked bags, then shows which frames receive
a gradient: the max-only losses touch a single frame, MMM touches them all.

    python demos/loss_tour.py
"""
import numpy as np

from wsmil import autodiff as ad
from wsmil.losses import LOSS_KINDS, bag_loss, batch_loss

bags = {
    "confident event": ([0.05, 0.95, 0.9, 0.1], 1),
    "flat 0.5": ([0.5, 0.5, 0.5, 0.5], 1),
    "clean negative": ([0.01, 0.02, 0.01, 0.03], 0),
    "false alarm": ([0.01, 0.8, 0.02, 0.01], 0),
}

print(f"{'bag':<16}" + "".join(f"{k:>10}" for k in LOSS_KINDS))
for name, (o, Y) in bags.items():
    print(f"{name:<16}" + "".join(f"{bag_loss(k, o, Y).value:>10.4f}" for k in LOSS_KINDS))

# Gradient per frame for one positive bag
o = ad.Tensor(np.array([[0.2, 0.7, 0.4, 0.3, 0.6]]), requires_grad=True)
print("\ngradient of each loss w.r.t. the five frame scores (Y = 1):")
for kind in LOSS_KINDS:
    (g,) = ad.backward(batch_loss(kind, o, [1]), [o])
    print(f"  {kind:<9}", np.array2string(g[0], precision=3, suppress_small=True),
          f"-> {np.count_nonzero(g)} frame(s)")
