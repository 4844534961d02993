"""1D finite-element primitives: meshes, linear shape functions, quadrature, assembly.

Every scale uses two-node linear elements integrated with two Gauss points.
Phase index 0 is the soft/light constituent, 1 the stiff/heavy one.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from fe2dyn.errors import ConfigError

SOFT = 0
STIFF = 1

GAUSS_POINTS = np.array([-1.0, 1.0]) / np.sqrt(3.0)
GAUSS_WEIGHTS = np.array([1.0, 1.0])
# N[gp, node] on the reference element [-1, 1]
SHAPE_VALUES = np.column_stack([(1.0 - GAUSS_POINTS) / 2.0, (1.0 + GAUSS_POINTS) / 2.0])


@dataclass(frozen=True, eq=False)
class Mesh1D:
    """Chain of two-node elements with one material phase per element."""

    node_coords: np.ndarray
    elements: np.ndarray
    phase_of_element: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.node_coords, dtype=float)
        el = np.asarray(self.elements, dtype=np.int64).reshape(-1, 2)
        ph = np.asarray(self.phase_of_element, dtype=np.int64)
        object.__setattr__(self, "node_coords", x)
        object.__setattr__(self, "elements", el)
        object.__setattr__(self, "phase_of_element", ph)
        if x.ndim != 1 or x.size < 2:
            raise ConfigError("mesh needs at least two nodes")
        if np.any(np.diff(x) <= 0.0):
            raise ConfigError("node coordinates must be strictly increasing")
        if ph.shape != (el.shape[0],):
            raise ConfigError("one phase index per element required")
        if el.min() < 0 or el.max() >= x.size or np.any(el[:, 1] - el[:, 0] != 1):
            raise ConfigError("elements must join adjacent nodes")

    @property
    def n_nodes(self) -> int:
        return self.node_coords.size

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @cached_property
    def lengths(self) -> np.ndarray:
        x = self.node_coords[self.elements]
        return x[:, 1] - x[:, 0]

    @property
    def volume(self) -> float:
        return float(self.lengths.sum())

    @property
    def first_moment(self) -> float:
        """Discrete integral of X over the mesh."""
        x = self.node_coords[self.elements]
        return float(np.sum(self.lengths * x.mean(axis=1)))


@dataclass(frozen=True)
class ElementBasis:
    shape_values: np.ndarray
    shape_gradients: np.ndarray
    gauss_weights: np.ndarray
    jacobian: float


def element_basis(length: float) -> ElementBasis:
    """Linear shape functions of one element sampled at the two Gauss points."""
    if length <= 0.0:
        raise ConfigError("element length must be positive")
    grads = np.tile([-1.0 / length, 1.0 / length], (GAUSS_POINTS.size, 1))
    return ElementBasis(SHAPE_VALUES.copy(), grads, GAUSS_WEIGHTS.copy(), length / 2.0)


@dataclass(frozen=True)
class Quadrature:
    """Gauss-point data of a whole mesh, stacked over elements.

    ``N`` is (n_gp, 2) and shared by all elements; ``B`` is (n_el, 2) and
    constant within an element; ``dV`` and ``X`` are (n_el, n_gp).
    """

    N: np.ndarray
    B: np.ndarray
    dV: np.ndarray
    X: np.ndarray


def quadrature(mesh: Mesh1D) -> Quadrature:
    le = mesh.lengths
    xe = mesh.node_coords[mesh.elements]
    B = np.column_stack([-1.0 / le, 1.0 / le])
    dV = np.outer(le / 2.0, GAUSS_WEIGHTS)
    X = xe @ SHAPE_VALUES.T
    return Quadrature(SHAPE_VALUES, B, dV, X)


def _mesh_from_segments(segments, l_E: float) -> Mesh1D:
    """Mesh a sequence of (length, phase) layers with elements of roughly l_E."""
    coords = [0.0]
    phases = []
    for seg_len, phase in segments:
        n = max(1, int(round(seg_len / l_E)))
        start = coords[-1]
        coords.extend(start + seg_len * np.arange(1, n + 1) / n)
        phases.extend([phase] * n)
    n_el = len(phases)
    elements = np.column_stack([np.arange(n_el), np.arange(1, n_el + 1)])
    return Mesh1D(np.array(coords), elements, np.array(phases))


def _check_lengths(**lengths):
    for name, value in lengths.items():
        if not np.isfinite(value) or value <= 0.0:
            raise ConfigError(f"{name} must be positive, got {value!r}")


def unit_cell_layers(unit_cell: str, l_M: float):
    """Layer sequence of one unit cell.

    Type A is [soft | stiff]; type B is the half-period shift
    [stiff/2 | soft | stiff/2] of the same laminate.
    """
    if unit_cell == "A":
        return [(l_M, SOFT), (l_M, STIFF)]
    if unit_cell == "B":
        return [(l_M / 2.0, STIFF), (l_M, SOFT), (l_M / 2.0, STIFF)]
    raise ConfigError(f"unknown unit cell type {unit_cell!r}")


def build_rve_mesh(unit_cell: str, n_cells: int, l_M: float, l_E: float) -> Mesh1D:
    """RVE of ``n_cells`` unit cells, shifted so its volume centroid sits at X = 0."""
    _check_lengths(l_M=l_M, l_E=l_E)
    if n_cells < 1:
        raise ConfigError("n_cells must be >= 1")
    layers = unit_cell_layers(unit_cell, l_M) * n_cells
    # merge the touching stiff halves of neighbouring type-B cells
    merged = []
    for seg_len, phase in layers:
        if merged and merged[-1][1] == phase:
            merged[-1] = (merged[-1][0] + seg_len, phase)
        else:
            merged.append((seg_len, phase))
    mesh = _mesh_from_segments(merged, l_E)
    shift = mesh.first_moment / mesh.volume
    return Mesh1D(mesh.node_coords - shift, mesh.elements, mesh.phase_of_element)


def build_layered_bar(length: float, l_M: float, l_E: float, first_phase: int = STIFF) -> Mesh1D:
    """Phase-resolved bar on [0, length] with layers of thickness l_M."""
    _check_lengths(length=length, l_M=l_M, l_E=l_E)
    n_layers = int(np.ceil(length / l_M - 1e-9))
    segments = []
    for i in range(n_layers):
        seg = min(l_M, length - i * l_M)
        segments.append((seg, (first_phase + i) % 2))
    return _mesh_from_segments(segments, l_E)


def build_uniform_bar(length: float, n_elements: int, phase: int = SOFT) -> Mesh1D:
    _check_lengths(length=length)
    if n_elements < 1:
        raise ConfigError("n_elements must be >= 1")
    x = np.linspace(0.0, length, n_elements + 1)
    elements = np.column_stack([np.arange(n_elements), np.arange(1, n_elements + 1)])
    return Mesh1D(x, elements, np.full(n_elements, phase))


def assemble(global_size: int, contributions: np.ndarray, dof_map: np.ndarray) -> np.ndarray:
    """Additive assembly of stacked element vectors (n_el, k) or matrices (n_el, k, k).

    Negative entries in ``dof_map`` mark eliminated DOFs and are skipped.
    """
    contributions = np.asarray(contributions, dtype=float)
    dof_map = np.asarray(dof_map, dtype=np.int64)
    if dof_map.max(initial=-1) >= global_size:
        raise IndexError("dof map exceeds global size")
    if contributions.ndim == 2:
        out = np.zeros(global_size)
        keep = dof_map >= 0
        np.add.at(out, dof_map[keep], contributions[keep])
        return out
    out = np.zeros((global_size, global_size))
    rows = np.broadcast_to(dof_map[:, :, None], contributions.shape)
    cols = np.broadcast_to(dof_map[:, None, :], contributions.shape)
    keep = (rows >= 0) & (cols >= 0)
    np.add.at(out, (rows[keep], cols[keep]), contributions[keep])
    return out


def assemble_banded(n: int, k_el: np.ndarray, dof_map: np.ndarray) -> np.ndarray:
    """Assemble 2x2 element matrices of a chain into (3, n) storage for ``solve_banded((1, 1), ...)``.

    Requires |dof_a - dof_b| <= 1 within every element.
    """
    ab = np.zeros((3, n))
    for a in range(2):
        for b in range(2):
            i = dof_map[:, a]
            j = dof_map[:, b]
            keep = (i >= 0) & (j >= 0)
            np.add.at(ab, (1 + i[keep] - j[keep], j[keep]), k_el[keep, a, b])
    return ab
