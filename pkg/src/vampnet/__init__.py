"""VAMPnets on numpy: Brownian dynamics toy systems, VAMP scores, a
hand-written Softmax network with its own backpropagation, Koopman
analysis, and a conventional TICA/k-means/MSM baseline."""
from .errors import (ConfigError, DimensionError, DivergenceError, EmptyDatasetError,
                     NumericalError, ParseError, RankZeroError, VampnetError)

__version__ = "0.1.0"
