"""End-to-end gradients of compliance and the volume constraint.

Compliance is self-adjoint, so its field sensitivity is

    dJ/drho_e = -p (E0 - Emin) rho_e^(p-1) * u_e . K0 . u_e

per element; that seed (and the constant volume seed) is pulled back through
the Boolean tree, each primitive's projection chain, the softmax operator
encoding, and the affine de-normalization of the design vector.  A central
finite-difference harness verifies any entry of either gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import csg, fea, geometry

__all__ = [
    "ForwardState",
    "FdEntry",
    "grad_compliance",
    "grad_volume",
    "fd_check",
    "central_difference",
]


@dataclass(eq=False)
class ForwardState:
    """Everything one forward pass produced, plus the fixed problem context.

    The gradient routines require a completed pass: tapes, node_values and u
    must all be present.
    """

    z: np.ndarray
    params: list
    weights: np.ndarray                  # (n_internal, 4)
    tapes: list                          # ProjectionTape per primitive
    node_values: np.ndarray              # (n_nodes, n_cells), root in row 0
    u: np.ndarray                        # full-length displacements
    J: float
    g_v: float
    # context
    mesh: fea.Mesh = None
    material: fea.Material = None
    k0: np.ndarray = None
    vf_star: float = None
    softmax_scale: float = None
    frozen: dict[int, int] = field(default_factory=dict)
    scales: dict[str, float] = field(default_factory=dict)  # affine block widths
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def field_values(self) -> np.ndarray:
        return self.node_values[0]

    def _require_complete(self):
        if self.u is None or self.node_values is None or not self.tapes:
            raise ValueError("forward state incomplete: run a full forward pass first")


def compliance_field_grad(state: ForwardState) -> np.ndarray:
    """dJ/drho_e from the self-adjoint compliance rule."""
    m = state.material
    ce = fea.element_energies(state.u, state.mesh, state.k0)
    rho = state.field_values
    return -m.penalty * (m.e0 - m.emin) * rho ** (m.penalty - 1.0) * ce


def volume_field_grad(state: ForwardState) -> np.ndarray:
    """dg_v/drho_e = v_e / (vf* sum v_e), constant across elements."""
    mesh = state.mesh
    total = mesh.element_area * mesh.n_elements
    return np.full(mesh.n_elements, mesh.element_area / (state.vf_star * total))


def _field_grad_to_design(state: ForwardState, seed: np.ndarray) -> np.ndarray:
    """Pull a root-field sensitivity back to the normalized design vector."""
    n_p = len(state.params)
    sides = state.params[0].sides
    leaf_seeds, weight_grads = csg.tree_backward(state.weights, state.node_values, seed)

    out = np.zeros(state.z.size)
    s = state.scales
    for i, tape in enumerate(state.tapes):
        d_cx, d_cy, d_th, d_d = geometry.projection_param_grad(tape, leaf_seeds[i])
        out[i] = d_cx * s["cx"]
        out[n_p + i] = d_cy * s["cy"]
        out[2 * n_p + i] = d_th * s["theta"]
        out[3 * n_p + i * sides: 3 * n_p + (i + 1) * sides] = d_d * s["d"]

    offset = n_p * (sides + 3)
    for node in range(state.weights.shape[0]):
        if node in state.frozen:
            continue
        b = state.weights[node]
        gb = weight_grads[node]
        out[offset:offset + 4] = state.softmax_scale * b * (gb - float(b @ gb))
        offset += 4
    return out


def grad_compliance(state: ForwardState) -> np.ndarray:
    """dJ/dz for the normalized design vector of a completed forward pass."""
    state._require_complete()
    return _field_grad_to_design(state, compliance_field_grad(state))


def grad_volume(state: ForwardState) -> np.ndarray:
    """dg_v/dz for the normalized design vector of a completed forward pass."""
    state._require_complete()
    return _field_grad_to_design(state, volume_field_grad(state))


def central_difference(fn, z: np.ndarray, index: int, step: float) -> float:
    """Central difference of a scalar function of z in one coordinate."""
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    zp = np.array(z, dtype=float)
    zm = np.array(z, dtype=float)
    zp[index] += step
    zm[index] -= step
    return (fn(zp) - fn(zm)) / (2.0 * step)


FD_FLOOR = 1e-7  # |FD| below this is indistinguishable from difference noise


@dataclass(eq=False)
class FdEntry:
    """One checked design-vector entry of the finite-difference report."""

    index: int
    label: str
    skipped: bool = False
    analytic_j: float = 0.0
    fd_j: float = 0.0
    rel_err_j: float = 0.0
    analytic_g: float = 0.0
    fd_g: float = 0.0
    rel_err_g: float = 0.0

    @property
    def max_rel_err(self) -> float:
        """Worst relative error over the two functionals, FD floor applied."""
        worst = 0.0
        if abs(self.fd_j) > FD_FLOOR:
            worst = max(worst, self.rel_err_j)
        if abs(self.fd_g) > FD_FLOOR:
            worst = max(worst, self.rel_err_g)
        return worst


def _rel_err(analytic: float, fd: float) -> float:
    return abs(analytic - fd) / max(abs(fd), 1e-300)


def fd_check(model, z: np.ndarray, indices=None, step: float = 1e-6) -> list[FdEntry]:
    """Compare analytic dJ/dz and dg_v/dz against central differences.

    indices address the full design layout including frozen operator slots;
    frozen entries come back marked skipped.  The report is sorted worst
    first.  model must offer evaluate(z) -> (J, g), forward_gradients(z) ->
    (J, g, dJ, dg), full_size, full_to_free and label_for_index.
    """
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    _, _, dj, dg = model.forward_gradients(z)
    if indices is None:
        indices = range(model.full_size)

    entries = []
    for idx in indices:
        idx = int(idx)
        label = model.label_for_index(idx)
        free = model.full_to_free[idx]
        if free < 0:
            entries.append(FdEntry(index=idx, label=label, skipped=True))
            continue
        zp = np.array(z, dtype=float)
        zm = np.array(z, dtype=float)
        zp[free] += step
        zm[free] -= step
        jp, gp = model.evaluate(zp)
        jm, gm = model.evaluate(zm)
        fd_j = (jp - jm) / (2.0 * step)
        fd_g = (gp - gm) / (2.0 * step)
        entries.append(FdEntry(
            index=idx, label=label,
            analytic_j=float(dj[free]), fd_j=fd_j, rel_err_j=_rel_err(dj[free], fd_j),
            analytic_g=float(dg[free]), fd_g=fd_g, rel_err_g=_rel_err(dg[free], fd_g),
        ))
    entries.sort(key=lambda e: (e.skipped, -e.max_rel_err))
    return entries
