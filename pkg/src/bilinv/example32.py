"""Critical points of the scalar bilinear problem ``(1 - x - yx)^2 + beta (y^2 + x^2)``.

Setting the gradient to zero gives ``x = (1 + y) / ((1 + y)^2 + beta)`` and
a quintic in ``y``; all real critical points come from its real roots.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .objective import phi_hessian, scalar_example_problem
from .tensor import JointState

__all__ = [
    "CriticalPoint",
    "quintic_coefficients",
    "x_of_y",
    "critical_points",
    "REFERENCE_POINTS",
    "REFERENCE_GLOBAL_MIN",
    "example32_verify",
]

#: published critical points as ``(x, y)`` pairs, rounded to three decimals
REFERENCE_POINTS = {
    0.1: [((-0.101, -1.010), "saddle"), ((-1.139, -1.744), "min"), ((0.698, 0.359), "min")],
    1.0: [((0.492, 0.201), "min")],
}
REFERENCE_GLOBAL_MIN = {0.1: (0.698, 0.359), 1.0: (0.492, 0.201)}


@dataclass(frozen=True)
class CriticalPoint:
    x: float
    y: float
    kind: str
    objective: float
    hessian_eigs: tuple


def quintic_coefficients(beta):
    """Coefficients, highest degree first, of the critical-point polynomial in ``y``."""
    return np.array([1.0, 4.0, 2.0 * (3 + beta), 4.0 * (1 + beta), beta * (2 + beta), -1.0])


def x_of_y(y, beta):
    return (1.0 + y) / ((1.0 + y) ** 2 + beta)


def _classify(eigs, tol=1e-10):
    if np.all(eigs > tol):
        return "min"
    if np.all(eigs < -tol):
        return "max"
    if eigs.min() < -tol and eigs.max() > tol:
        return "saddle"
    return "degenerate"


def critical_points(beta, imag_tol=1e-9):
    """Real critical points sorted by ``y``; roots come from companion-matrix eigenvalues."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    roots = np.roots(quintic_coefficients(beta))
    real = np.sort(roots[np.abs(roots.imag) <= imag_tol * np.maximum(1, np.abs(roots))].real)
    prob = scalar_example_problem(beta)
    out = []
    for y in real:
        x = x_of_y(y, beta)
        s = JointState(np.array([y]), np.array([x]))
        eigs = np.linalg.eigvalsh(phi_hessian(prob, s))
        phi = (1 - x - y * x) ** 2 + beta * (y * y + x * x)
        out.append(CriticalPoint(float(x), float(y), _classify(eigs), float(phi), tuple(eigs)))
    return out


@dataclass
class VerifyReport:
    passed: bool
    lines: list = field(default_factory=list)
    seconds: float = 0.0


def example32_verify(tol=1e-2):
    """Compare computed critical points with the published ``(x, y)`` values."""
    t0 = time.perf_counter()
    ok = True
    lines = []
    for beta, ref in REFERENCE_POINTS.items():
        pts = critical_points(beta)
        if len(pts) != len(ref):
            ok = False
            lines.append(f"beta={beta}: expected {len(ref)} critical points, found {len(pts)}")
            continue
        for (rx, ry), kind in ref:
            match = [p for p in pts if abs(p.x - rx) <= tol and abs(p.y - ry) <= tol]
            good = len(match) == 1 and match[0].kind == kind
            ok &= good
            got = f"({match[0].x:.4f}, {match[0].y:.4f}) {match[0].kind}" if match else "none"
            lines.append(f"beta={beta}: ref ({rx}, {ry}) {kind} -> {got} "
                         f"[{'PASS' if good else 'FAIL'}]")
        mins = [p for p in pts if p.kind == "min"]
        best = min(mins, key=lambda p: p.objective)
        rx, ry = REFERENCE_GLOBAL_MIN[beta]
        glob = abs(best.x - rx) <= tol and abs(best.y - ry) <= tol
        ok &= glob
        lines.append(f"beta={beta}: global minimum ({best.x:.4f}, {best.y:.4f}) "
                     f"[{'PASS' if glob else 'FAIL'}]")
    return VerifyReport(bool(ok), lines, time.perf_counter() - t0)
