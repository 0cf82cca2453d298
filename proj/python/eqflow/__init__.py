"""Equivariant flow maps over permutation groups."""

from ._eqflow import (
    ControlLayer,
    FlowBlowUp,
    PermGroup,
    Permutation,
    check_family_equivariance,
    check_invariance,
    check_resolves,
    families,
    integrate,
    inverse_integrate,
    param_count,
    run_cli,
    target,
)

__all__ = [
    "ControlLayer",
    "FlowBlowUp",
    "PermGroup",
    "Permutation",
    "check_family_equivariance",
    "check_invariance",
    "check_resolves",
    "families",
    "integrate",
    "inverse_integrate",
    "param_count",
    "run_cli",
    "target",
]
