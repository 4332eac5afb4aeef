"""Differentially private distributed cardinality estimation.

FMS/FM/HLL sketches, discrete-Gaussian noise accounting, authenticated
secret sharing with ZeroTest, and the secure aggregation protocol built from
them.
"""

from .dpnoise import (PrivacyBudget, Sensitivity, Statistic, calibrate_sigma, cdp_to_dp,
                      epsilon_d, sample_discrete_gaussian)
from .errors import (ConfigurationError, DpDiceError, InvalidParameter, MacCheckError,
                     MaterialExhausted, MaterialReuse, ProtocolAbort, TransportError)
from .hashing import HashKey
from .sketch import Estimate, FmSketch, FmsSketch, HllSketch, Method, fms_estimate

__version__ = "0.1.0"
