"""1D two-region elastic bar with a single cohesive interface.

The bar occupies [0, L], is discretized with uniform linear elements, and
carries one cohesive zone at an inter-element boundary. The node at that
boundary is duplicated so the displacement field can jump; the pair of
duplicated nodes is coupled through a traction-separation law with bilinear
softening. Both end displacements are prescribed, so the reduced system has
one unknown per interior node.

Sign convention: the interface opening is ``delta_u = u[right] - u[left]``,
positive in tension. The cohesive force enters the residual of the left face
node with a minus sign and the right face node with a plus sign, which keeps
the assembled tangent symmetric and positive definite while the interface is
undamaged.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

CASE_IDS = ("ItP", "ItC")

#: Soft lower bound for the penalty stiffness relative to the bar stiffness.
PENALTY_RATIO_MIN = 100.0


class MeshError(ValueError):
    """Raised when a mesh cannot be built as requested."""


@dataclass(frozen=True)
class Mesh1D:
    """Node coordinates, element connectivity and the cohesive node pair.

    ``cz_interface`` is the ordinal of the inter-element boundary carrying
    the cohesive zone (1 .. n_elements - 1); ``cz_pair`` holds the duplicated
    node indices (left face, right face) in the expanded numbering.
    """

    n_elements: int
    node_x: np.ndarray
    elements: tuple[tuple[int, int], ...]
    cz_interface: int
    cz_pair: tuple[int, int]

    def __post_init__(self):
        n_nodes = self.node_x.shape[0]
        if n_nodes != self.n_elements + 2:
            raise MeshError(
                f"expected {self.n_elements + 2} nodes (one duplicated pair), got {n_nodes}"
            )
        if not (0 < self.cz_interface < self.n_elements):
            raise MeshError("cohesive interface must be strictly interior")
        m, n = self.cz_pair
        if self.node_x[m] != self.node_x[n]:
            raise MeshError("duplicated pair must share a coordinate")
        dx = np.diff(self.node_x)
        # Strictly increasing except for the single zero-length gap at the
        # duplicated pair.
        if np.any(dx < 0) or np.count_nonzero(dx == 0) != 1:
            raise MeshError("node coordinates must increase, with one duplicated pair")

    @property
    def length(self) -> float:
        return float(self.node_x[-1] - self.node_x[0])


@dataclass(frozen=True)
class Material:
    """Linear elastic bar material."""

    E: float
    A: float = 1.0

    def __post_init__(self):
        if self.E <= 0 or self.A <= 0:
            raise ValueError("E and A must be positive")


@dataclass(frozen=True)
class CohesiveLaw:
    """Bilinear traction-separation law.

    K_p is the penalty stiffness of the intact interface, delta_0 the opening
    at damage onset and delta_f the opening at which traction vanishes.
    """

    K_p: float
    delta_0: float
    delta_f: float

    def __post_init__(self):
        if self.K_p <= 0:
            raise ValueError("K_p must be positive")
        if not (0 < self.delta_0 < self.delta_f):
            raise ValueError("need 0 < delta_0 < delta_f")

    def check_penalty(self, material: Material, length: float) -> None:
        """Warn when K_p is not clearly stiffer than the bar itself."""
        bar_stiffness = material.E * material.A / length
        if self.K_p < PENALTY_RATIO_MIN * bar_stiffness:
            warnings.warn(
                f"penalty stiffness K_p={self.K_p:g} is below "
                f"{PENALTY_RATIO_MIN:g} x E*A/L={bar_stiffness:g}; the intact "
                "interface will add noticeable compliance",
                stacklevel=2,
            )


@dataclass(frozen=True)
class CaseSpec:
    """Prescribed end displacements for one boundary value problem."""

    case_id: str
    u_left: float
    u_right: float

    def __post_init__(self):
        if self.case_id not in CASE_IDS:
            raise ValueError(f"case_id must be one of {CASE_IDS}")


@dataclass(frozen=True)
class Problem:
    """Reduced (Dirichlet-eliminated) nonlinear system for one case."""

    mesh: Mesh1D
    material: Material
    law: CohesiveLaw
    case: CaseSpec
    n_free: int
    dof_map: tuple[int, ...] = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return self.mesh.node_x.shape[0]

    def full_displacement(self, u_free: np.ndarray) -> np.ndarray:
        """Insert the prescribed end values around the free DOF vector."""
        u_free = np.asarray(u_free, dtype=float)
        if u_free.shape != (self.n_free,):
            raise ValueError(f"expected {self.n_free} free DOFs, got {u_free.shape}")
        u = np.empty(self.n_nodes)
        u[0] = self.case.u_left
        u[-1] = self.case.u_right
        u[1:-1] = u_free
        return u


def build_mesh(n_elements: int, L: float, cz_fraction: float) -> Mesh1D:
    """Build a uniform mesh with a duplicated node at the cohesive interface.

    The interface is placed at the inter-element boundary nearest
    ``cz_fraction * L``; if that is not an exact boundary the location snaps
    to the nearest interior one and a warning is emitted.
    """
    if n_elements < 2:
        raise MeshError("need at least 2 elements so the interface is interior")
    if L <= 0:
        raise MeshError("bar length must be positive")
    if not (0.0 < cz_fraction < 1.0):
        raise MeshError("cz_fraction must lie strictly inside (0, 1)")

    h = L / n_elements
    interface = int(round(cz_fraction * n_elements))
    interface = min(max(interface, 1), n_elements - 1)
    x_target = cz_fraction * L
    x_actual = interface * h
    if abs(x_actual - x_target) > 1e-12 * L:
        warnings.warn(
            f"cohesive interface snapped from x={x_target:g} to the nearest "
            f"inter-element boundary x={x_actual:g}",
            stacklevel=2,
        )

    base = np.linspace(0.0, L, n_elements + 1)
    node_x = np.insert(base, interface + 1, base[interface])
    elements = []
    for e in range(n_elements):
        a = e if e < interface else e + 1
        elements.append((a, a + 1))
    return Mesh1D(
        n_elements=n_elements,
        node_x=node_x,
        elements=tuple(elements),
        cz_interface=interface,
        cz_pair=(interface, interface + 1),
    )


def damage(delta_u: float, law: CohesiveLaw) -> float:
    """Damage of the interface at opening ``delta_u``, clamped to [0, 1].

    Zero up to the onset opening, one beyond the final opening, and the
    bilinear-softening expression in between. Negative openings (contact) do
    not damage the interface.
    """
    if delta_u <= law.delta_0:
        return 0.0
    if delta_u >= law.delta_f:
        return 1.0
    d = law.delta_f * (delta_u - law.delta_0) / (delta_u * (law.delta_f - law.delta_0))
    return min(max(d, 0.0), 1.0)


def cohesive_traction(delta_u: float, law: CohesiveLaw) -> float:
    """Traction transmitted by the interface at opening ``delta_u``.

    Tension follows ``(1 - d) * K_p * delta_u``; compression is pure penalty
    contact with the undamaged stiffness.
    """
    if delta_u < 0.0:
        return law.K_p * delta_u
    return (1.0 - damage(delta_u, law)) * law.K_p * delta_u


def cohesive_tangent(delta_u: float, law: CohesiveLaw) -> float:
    """Derivative of the traction; right-sided at the two kinks."""
    if delta_u < law.delta_0:
        return law.K_p
    if delta_u >= law.delta_f:
        return 0.0
    # Constant negative slope of the softening branch.
    return -law.K_p * law.delta_0 / (law.delta_f - law.delta_0)


def make_case(
    case_id: str,
    mesh: Mesh1D,
    material: Material,
    law: CohesiveLaw,
    u_right: float,
) -> Problem:
    """Assemble a Problem with u(0) = 0 and u(L) = u_right prescribed."""
    law.check_penalty(material, mesh.length)
    case = CaseSpec(case_id=case_id, u_left=0.0, u_right=float(u_right))
    n_free = mesh.node_x.shape[0] - 2
    dof_map = tuple(range(1, mesh.node_x.shape[0] - 1))
    return Problem(
        mesh=mesh,
        material=material,
        law=law,
        case=case,
        n_free=n_free,
        dof_map=dof_map,
    )


def _cohesive_force_and_tangent(u: np.ndarray, problem: Problem) -> tuple[float, float, float]:
    m, n = problem.mesh.cz_pair
    delta_u = float(u[n] - u[m])
    A = problem.material.A
    return (
        delta_u,
        A * cohesive_traction(delta_u, problem.law),
        A * cohesive_tangent(delta_u, problem.law),
    )


def assemble_residual(u_free: np.ndarray, problem: Problem) -> np.ndarray:
    """Internal force imbalance at the free DOFs.

    At an exact equilibrium the result vanishes componentwise; prescribed end
    displacements are folded in through the full displacement vector.
    """
    u = problem.full_displacement(u_free)
    mesh, mat = problem.mesh, problem.material
    r = np.zeros(problem.n_nodes)
    for a, b in mesh.elements:
        h = mesh.node_x[b] - mesh.node_x[a]
        ke = mat.E * mat.A / h
        f = ke * (u[a] - u[b])
        r[a] += f
        r[b] -= f
    m, n = mesh.cz_pair
    _, force, _ = _cohesive_force_and_tangent(u, problem)
    r[m] -= force
    r[n] += force
    return r[1:-1]


def assemble_jacobian(u_free: np.ndarray, problem: Problem) -> np.ndarray:
    """Tangent of the reduced residual: elastic stiffness plus cohesive block."""
    u = problem.full_displacement(u_free)
    mesh, mat = problem.mesh, problem.material
    n_nodes = problem.n_nodes
    K = np.zeros((n_nodes, n_nodes))
    for a, b in mesh.elements:
        h = mesh.node_x[b] - mesh.node_x[a]
        ke = mat.E * mat.A / h
        K[a, a] += ke
        K[b, b] += ke
        K[a, b] -= ke
        K[b, a] -= ke
    m, n = mesh.cz_pair
    _, _, kc = _cohesive_force_and_tangent(u, problem)
    K[m, m] += kc
    K[n, n] += kc
    K[m, n] -= kc
    K[n, m] -= kc
    return K[1:-1, 1:-1]


PROBLEM_KEYS = (
    "n_elements",
    "L",
    "E",
    "A",
    "K_p",
    "delta_0",
    "delta_f",
    "u_right",
    "case_id",
)


def problem_from_dict(doc: dict) -> Problem:
    """Build a Problem from a flat JSON-style document.

    Recognized keys: n_elements, L, E, A, K_p, delta_0, delta_f, u_right,
    case_id, plus optional cz_fraction (default 0.5). Values are read as
    64-bit floats.
    """
    missing = [k for k in PROBLEM_KEYS if k not in doc]
    if missing:
        raise ValueError(f"problem document is missing keys: {missing}")
    mesh = build_mesh(
        int(doc["n_elements"]), float(doc["L"]), float(doc.get("cz_fraction", 0.5))
    )
    material = Material(E=float(doc["E"]), A=float(doc["A"]))
    law = CohesiveLaw(
        K_p=float(doc["K_p"]),
        delta_0=float(doc["delta_0"]),
        delta_f=float(doc["delta_f"]),
    )
    return make_case(str(doc["case_id"]), mesh, material, law, float(doc["u_right"]))


def load_problem(path: str) -> Problem:
    """Read a problem document from a JSON file."""
    with open(path, encoding="utf-8") as fh:
        return problem_from_dict(json.load(fh))
