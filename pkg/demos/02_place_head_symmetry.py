# coding: utf-8

# # Why the place head is equivariant
#
# The place model correlates an encoding of the picked crop against an
# encoding of the scene, once per candidate rotation.  Built from equivariant
# networks, rotating the crop only shifts the angle channels, and rotating
# the whole scene rotates the map in space.

import numpy as np

from equitransporter.fields import rotate_array
from equitransporter.groups import element, inverse, permute, regular
from equitransporter.nn import unet
from equitransporter.transporter import place_baseline, place_equivariant

rng = np.random.default_rng(3)
n = 4
psi = unet(n, 2, (8, 8, 8), odd=True, rng=rng, name="psi")
phi = unet(n, 2, (8, 8, 8), rng=rng, name="phi")

crop = rng.normal(size=(2, 13, 13))
scene = rng.normal(size=(2, 32, 32))
base = place_equivariant(psi, phi, crop, scene, n).data
print("place map", base.shape, "= angle channels x rows x cols")

# ## Rotating the crop
#
# Turning the picked object by a quarter turn should not change where it goes,
# only which rotation is needed to get there.

g = element(n, 1)
turned = place_equivariant(psi, phi, rotate_array(crop, g), scene, n).data
shifted = permute(regular(n), inverse(g), base, axis=0)
print("max |turned - channel-shifted|: %.2e" % np.abs(turned - shifted).max())

# ## Rotating everything
#
# Rotating crop and scene together rotates the map in space and keeps the
# relative angle channel fixed.

both = place_equivariant(psi, phi, rotate_array(crop, g), rotate_array(scene, g), n).data
print("max |both - rotated map|: %.2e" % np.abs(both - rotate_array(base, g)).max())

# ## The same numbers, computed the expensive way
#
# The classic head rotates the crop n times and runs the crop encoder on each
# copy.  With an equivariant encoder, rotating its output once is identical.

slow = place_baseline(psi, phi, crop, scene, n).data
print("max |lift-then-encode - encode-then-lift|: %.2e" % np.abs(slow - base).max())

# ## Breaking the symmetry on purpose
#
# Untying the filter copies is a mutation that should break all of the above.

psi_u = unet(n, 2, (8, 8, 8), odd=True, rng=rng, untied=True)
phi_u = unet(n, 2, (8, 8, 8), rng=rng, untied=True)
a = place_equivariant(psi_u, phi_u, crop, scene, n).data
b = place_equivariant(psi_u, phi_u, rotate_array(crop, g), rotate_array(scene, g), n).data
print("untied, max |both - rotated map|: %.2e" % np.abs(b - rotate_array(a, g)).max())
