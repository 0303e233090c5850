"""Non-neural core of a keypoint-based monocular 3D detector.

KITTI I/O, box geometry, training-target encoding, losses with analytic
gradients, decoding, and AP_R40 evaluation.
"""

__version__ = "0.1.0"
