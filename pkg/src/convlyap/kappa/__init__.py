from .functions import (
    Kappa, PiecewiseKappa, PowerKappa, evaluate, invert, compose, chi,
    convex_majorant, concave_inverse,
)
from .delta import (
    DeltaCertificate, ReachCertificate, monotone_envelope, riemann_smooth,
    polygonal_delta, polygonal_chain_value, reach_envelope,
)
from .kl import KLFunction, ExponentialKL, GridKL, KLAxiomReport, check_kl_axioms
from .construction import ConstructedKL, build_kl_construction, construct_kl_from_certificate
from .sontag import SontagPair, sontag_factorize
