"""Laboratory for the histogram query problem: planted instances, exact counting,
collision probabilities, decay rates, thresholds and flow-polynomial identities."""

__version__ = "0.1.0"

from .core import (GuardExceeded, in_flow_space, kl_bernoulli, overlap,  # noqa: F401
                   shannon_entropy)
