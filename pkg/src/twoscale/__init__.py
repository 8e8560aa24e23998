"""twoscale: two-scale quadratic-variation estimation for power-law random fields.

Simulate 2-D power-law (intrinsic) and Matérn Gaussian random fields on
square lattices, estimate the scale/roughness pair ``(phi1, phi2)`` from
bilinear quadratic variations at steps 1 and 2, and predict the exact
finite-lattice and asymptotic covariance of the estimates.

Modules
-------
gcmodel      covariance models, spectra, stencil constants
lattice      bilinear filters, quadratic variations, filter matrices
fieldsim     exact Gaussian samplers and field dumps
estimate     moment, Laplacian, Whittle and REML estimators
asymptotics  covariance prediction and the delta method
robust       deletions, thinning, jitter, Matérn misspecification
bench        seeded Monte Carlo experiments and table output
cli          command-line interface (``python -m twoscale``)
"""
from .errors import *  # noqa: F401,F403
from .gcmodel import *  # noqa: F401,F403
from .lattice import *  # noqa: F401,F403
from .fieldsim import *  # noqa: F401,F403
from .estimate import *  # noqa: F401,F403
from .asymptotics import *  # noqa: F401,F403
from .robust import *  # noqa: F401,F403
from .bench import *  # noqa: F401,F403

__version__ = "0.1.0"
