# coding: utf-8

# # Rotations, representations and feature fields
#
# A feature field is an image whose channels carry a group representation.
# Rotating it moves the pixels and, for non-trivial types, mixes the channels.

import numpy as np

from equitransporter.fields import act_array, lift, rotate_array, rotate_pixel, validity_mask
from equitransporter.fields import FeatureField
from equitransporter.groups import compose, element, quotient, regular, rep_matrix, standard

np.set_printoptions(precision=3, suppress=True)

# ## The group C_8 and its representations

g = element(8, 1)
print("generator angle", g.angle)
print("standard rep, 2x2 rotation:\n", rep_matrix(standard(8), g))
print("regular rep is a cyclic shift:\n", rep_matrix(regular(4), element(4, 1)))

# The quotient C_8/C_2 only sees angles mod pi, which is what a parallel gripper needs.

q = quotient(8, 2)
print("quotient of a half turn is the identity:", np.array_equal(rep_matrix(q, element(8, 4)), np.eye(4)))
h = compose(g, element(8, 3))
print("homomorphism:", np.allclose(rep_matrix(standard(8), h), rep_matrix(standard(8), g) @ rep_matrix(standard(8), element(8, 3))))

# ## Rotating pixels
#
# Quarter turns are index permutations.  Other angles interpolate, and pixels
# whose source falls outside the grid are masked out.

img = np.zeros((1, 9, 9))
img[0, 1, 4] = 1
print(rotate_array(img, element(4, 1))[0].astype(int))
print("pixel (1, 4) goes to", rotate_pixel((1, 4), element(4, 1), 9))

eighth = rotate_array(img, element(8, 1))[0]
print("an eighth turn spreads the pixel over %d neighbours" % (eighth > 1e-12).sum())
print("clean pixels at an eighth turn: %d of 81" % validity_mask(9, element(8, 1)).sum())

# ## Regular fields
#
# A regular field of C_4 has 4 channels.  Rotating it by g moves pixels and
# shifts the channels by one step.

x = np.arange(4 * 3 * 3, dtype=float).reshape(4, 3, 3)
y = act_array(element(4, 1), x, regular(4))
print("channel 1 of the rotated field is channel 0 rotated:",
      np.array_equal(y[1], rotate_array(x[0][None], element(4, 1))[0]))

# ## Lifting
#
# Stacking the n rotated copies of an image gives a lifted stack.

f = FeatureField(np.random.default_rng(0).normal(size=(1, 7, 7)))
stack = lift(f, 4)
print("lifted shape", stack.data.shape)
