"""Pure-numpy reference implementation of the integration hot loop.

The compiled extension in ``_kernels.pyx`` mirrors this exactly, including
floating-point evaluation order, so both backends produce bit-identical
states.  Selection happens in :mod:`neuriteflow._backend`.
"""

import numpy as np

BACKEND_NAME = "python"


def advance(ops, c0, cp, n_sub, dt_sub, D, k_att, k_det,
            inlet, inlet_c0, inlet_cp, outlet, outlet_pred, clamp_eps):
    """Run ``n_sub`` explicit-Euler sub-steps in place.

    Returns 0 on success, 1 when a state value went non-finite or below
    ``-clamp_eps``.  Small negative round-off (within ``clamp_eps``) is
    clamped to zero.
    """
    lap = ops.lap
    up = ops.up
    for _ in range(n_sub):
        lap0 = lap.dot(c0)
        adv = up.dot(cp)
        rhs0 = (D * lap0 - k_att * c0) + k_det * cp
        rhs1 = (k_att * c0 - k_det * cp) - adv
        c0 += dt_sub * rhs0
        cp += dt_sub * rhs1
        if inlet.size:
            c0[inlet] = inlet_c0
            cp[inlet] = inlet_cp
        if outlet.size:
            c0[outlet] = c0[outlet_pred]
            cp[outlet] = cp[outlet_pred]
        for arr in (c0, cp):
            if not np.all(np.isfinite(arr)):
                return 1
            neg = arr < 0.0
            if neg.any():
                if np.any(arr < -clamp_eps):
                    return 1
                arr[neg] = 0.0
    return 0
