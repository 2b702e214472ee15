"""Ground states and semiclassical concentration for quasilinear Schrodinger equations.

The quasilinear problem is solved through the dual change of variables
``u = G^{-1}(v)``, which turns it into a semilinear one with a smooth energy.
"""

__version__ = "0.1.0"

from .transform import Transform, STANDARD, IDENTITY  # noqa: E402,F401
from .closed_form import TalentiBubble, talenti_eval, talenti_residual  # noqa: E402,F401
from .shooting import ShootConfig, find_ground_state  # noqa: E402,F401
from .grids import RadialGrid, TensorGrid, GridField  # noqa: E402,F401
