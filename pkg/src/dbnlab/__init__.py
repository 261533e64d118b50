"""Exact inference, constructive synthesis and error bounds for discrete deep belief networks."""

from dbnlab.errors import (
    CapacityError,
    ConstraintError,
    DbnLabError,
    DomainError,
    ResourceError,
    SchemaError,
)
from dbnlab.state_space import CylinderSet, StateSpace, enumerate_cylinder, index, one_hot
from dbnlab.distributions import (
    Dist,
    MixtureOfProducts,
    PartitionModel,
    empirical_from_samples,
    kl,
    partition_max_kl,
    project_to_partition,
    sample_dirichlet,
)

__all__ = [
    "CapacityError",
    "ConstraintError",
    "CylinderSet",
    "DbnLabError",
    "Dist",
    "DomainError",
    "MixtureOfProducts",
    "PartitionModel",
    "ResourceError",
    "SchemaError",
    "StateSpace",
    "empirical_from_samples",
    "enumerate_cylinder",
    "index",
    "kl",
    "one_hot",
    "partition_max_kl",
    "project_to_partition",
    "sample_dirichlet",
]

__version__ = "0.1.0"
