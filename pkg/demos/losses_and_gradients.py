"""The point-set losses on small hand-made polygons, and a finite-difference
check of their gradients.

Run: python3 demos/losses_and_gradients.py
"""
# %% setup
import numpy as np

from polytrack import (chamfer_loss, point_set_matching_loss, reg_first_derivative,
                       reg_second_derivative)
from polytrack.gradcheck import central_difference, loss_suites, relative_error

square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])

# %% matching ignores where the labels start
shifted = np.roll(square, 1, axis=0)
print("relabelled square:", point_set_matching_loss(square, shifted).value)
print("square moved by 0.5:", point_set_matching_loss(square, square + [0.5, 0]).value)

# %% chamfer compares sets, not pairs
print("chamfer:", chamfer_loss([[0, 0], [1, 0]], [[0, 0], [0, 1]]).value)

# %% the regularisers see shape change but not translation
print("R1 doubled square:", reg_first_derivative(square, 2 * square).value)
print("R1 translated square:", reg_first_derivative(square, square + 3).value)
bent = square.copy()
bent[0] += [0.1, 0.0]
print("R2 one corner moved:", reg_second_derivative(square, bent).value)

# %% one gradient by hand
rng = np.random.default_rng(0)
gt = rng.uniform(0, 10, (8, 2))
pred = gt + rng.normal(0, 0.5, gt.shape)
num = central_difference(lambda x: chamfer_loss(gt, x).value, pred, 1e-5)
print("chamfer grad rel err:", relative_error(chamfer_loss(gt, pred).grad, num))

# %% the full suites used by `polytrack check-grad`
for r in loss_suites(count=20):
    print(r.line())
