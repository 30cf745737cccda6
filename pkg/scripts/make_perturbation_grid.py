"""Write a two-channel (Re, Im of f^zz) bump perturbation grid for `lcft beltrami`."""
import argparse

import numpy as np

from lcft.beltrami import smooth_bump
from lcft.gridio import write_grid

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("out")
p.add_argument("--n", type=int, default=512)
p.add_argument("--half-width", type=float, default=2.0)
p.add_argument("--amplitude", type=complex, default=0.3 + 0.1j)
args = p.parse_args()

t = np.linspace(-args.half_width, args.half_width, args.n)
z = t[None, :] + 1j * t[:, None]
f = args.amplitude * smooth_bump(z, 0.2 - 0.1j, 0.8)
write_grid(args.out, np.stack([f.real, f.imag]), args.half_width)
print(f"wrote {args.out}: {args.n}x{args.n}, half-width {args.half_width}")
