"""Small-time density asymptotics for hypoelliptic RDEs driven by fBm."""

__version__ = "0.1.0"

from .fgauss import CMElement, FbmSpec, IncrementGram, fbm_cov, sample_fbm  # noqa: F401
from .indexsets import Exponent, enumerate_exponents  # noqa: F401
from .paths import GridPath, uniform_grid  # noqa: F401
from .roughlift import RoughPathGrid, dilate, lift_grid_path, pair_with_time, young_translate  # noqa: F401
from .tensor_sig import TruncatedSignature, chen_mul, dilate_sig, segment_signature  # noqa: F401
