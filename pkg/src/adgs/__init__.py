"""Distractor-robust Gaussian splatting with co-regularized models and a
moving-average proxy, at desk scale on the CPU."""

import os

# The TBB layer is often unavailable; workqueue is always present and keeps
# numba from warning on first parallel launch.
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"
