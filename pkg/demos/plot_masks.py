"""
Blind-spot masks on the patch grid
==================================

Builds every mask variant for a 224x224 frame with 16 pixel patches and
draws them side by side. Masked patches are black.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from blindspot.masks import FieldOfView, FrameGeometry, build_mask, masking_ratio

out = Path("demo_output")
out.mkdir(exist_ok=True)
frame = FrameGeometry(224, 224, 16)

###############################################################################
# The head camera sees 109 degrees across and 70 down. The central 60x60
# degrees stay visible, and two 5x7 degree blind spots sit 15 degrees to
# either side of fixation. Everything outside the central region is hidden.

camera = FieldOfView.parse("109x70")
masks = {
    "no_peripheral": build_mask("no_peripheral", frame, camera),
    "blindspot": build_mask("blindspot", frame, camera),
    # the wider binocular field leaves only a small center visible
    "center": build_mask("center", frame),
    "random_tube": build_mask("random_tube", frame, ratio=0.9, seed=0),
}
for name, mask in masks.items():
    print(f"{name:14s} {mask.n_masked:3d}/{mask.grid.size} masked  ratio {masking_ratio(mask):.4f}")

###############################################################################
# The blind-spot mask alone: rows of the grid, 1 = masked.

print()
for row in masks["blindspot"].grid.astype(int):
    print("".join(str(v) for v in row))

###############################################################################
# Side by side.

fig, axes = plt.subplots(1, len(masks), figsize=(3 * len(masks), 3.2))
for ax, (name, mask) in zip(axes, masks.items()):
    ax.imshow(~mask.grid, cmap="gray", vmin=0, vmax=1)
    ax.set_title(f"{name}\n{masking_ratio(mask):.1%} masked", fontsize=9)
    ax.set_xticks([])
    ax.set_yticks([])
fig.tight_layout()
fig.savefig(out / "masks.png", dpi=120)
print(f"\nwrote {out / 'masks.png'}")
