"""Coarse-grained protein-ligand structure and affinity toolkit."""

from ._core import (
    FormatError,
    InputError,
    NumericError,
    bin_center,
    bin_index,
    decode_complex_summary,
    distance_matrix,
    emax,
    emax_select,
    expected_distance,
    focal_loss,
    generate_complex,
    huber_loss,
    kabsch_rmsd,
    lddt_pli,
    ligand_rmsd,
    optimization_loss,
    optimize_pose,
    pairwise_entropy,
    pathwise_update,
    pocket_residues,
    relative_affinity_loss,
    __version__,
)

__all__ = [
    "FormatError",
    "InputError",
    "NumericError",
    "bin_center",
    "bin_index",
    "decode_complex_summary",
    "distance_matrix",
    "emax",
    "emax_select",
    "expected_distance",
    "focal_loss",
    "generate_complex",
    "huber_loss",
    "kabsch_rmsd",
    "lddt_pli",
    "ligand_rmsd",
    "optimization_loss",
    "optimize_pose",
    "pairwise_entropy",
    "pathwise_update",
    "pocket_residues",
    "relative_affinity_loss",
    "__version__",
]
