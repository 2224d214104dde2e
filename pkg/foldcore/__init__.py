import logging

from foldcore.folding import FoldedLayer
from foldcore.folding import backward_vjp
from foldcore.folding import forward
from foldcore.folding import jacobian_dense
from foldcore.folding import rate_study
from foldcore.folding import unfold_jacobian
from foldcore.options import Options

__version__ = '0.1.0'

logging.getLogger(__name__).addHandler(logging.NullHandler())


def fold(forward_solver, step, readout=None, options=None):
    """A :class:`FoldedLayer` configured from ``options``."""
    options = Options() if options is None else options
    return FoldedLayer.from_options(forward_solver, step, options,
                                    readout=readout)
