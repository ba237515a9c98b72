"""Shape functions and quadrature for linear triangles and bilinear quads."""

import numpy as np

TRI3 = "tri3"
QUAD4 = "quad4"

KIND_BY_NNODES = {3: TRI3, 4: QUAD4}

_G = 1.0 / np.sqrt(3.0)

# reference-element quadrature: (points, weights)
QUADRATURE = {
    TRI3: (
        np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]]),
        np.full(3, 1 / 6),
    ),
    QUAD4: (
        np.array([[-_G, -_G], [_G, -_G], [_G, _G], [-_G, _G]]),
        np.ones(4),
    ),
}

# one order higher, used for error norms and body forces
QUADRATURE_HIGH = {
    TRI3: (
        np.array(
            [
                [0.445948490915965, 0.445948490915965],
                [0.108103018168070, 0.445948490915965],
                [0.445948490915965, 0.108103018168070],
                [0.091576213509771, 0.091576213509771],
                [0.816847572980459, 0.091576213509771],
                [0.091576213509771, 0.816847572980459],
            ]
        ),
        0.5
        * np.array(
            [
                0.223381589678011,
                0.223381589678011,
                0.223381589678011,
                0.109951743655322,
                0.109951743655322,
                0.109951743655322,
            ]
        ),
    ),
    QUAD4: (
        np.array(
            [[a, b] for b in (-np.sqrt(0.6), 0.0, np.sqrt(0.6)) for a in (-np.sqrt(0.6), 0.0, np.sqrt(0.6))]
        ),
        np.array([a * b for b in (5 / 9, 8 / 9, 5 / 9) for a in (5 / 9, 8 / 9, 5 / 9)]),
    ),
}

LINE_GAUSS = (np.array([0.5 - 0.5 * _G, 0.5 + 0.5 * _G]), np.array([0.5, 0.5]))

REFERENCE_NODES = {
    TRI3: np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
    QUAD4: np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]),
}


def shape(kind, xi):
    """Shape function values and reference gradients.

    Parameters
    ----------
    kind : str
        ``"tri3"`` or ``"quad4"``.
    xi : array_like, shape (..., 2)
        Reference coordinates.

    Returns
    -------
    N : ndarray, shape (..., nen)
    dN : ndarray, shape (..., nen, 2)
    """
    xi = np.asarray(xi, dtype=float)
    r, s = xi[..., 0], xi[..., 1]
    if kind == TRI3:
        N = np.stack([1.0 - r - s, r, s], axis=-1)
        dN = np.broadcast_to(
            np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]), xi.shape[:-1] + (3, 2)
        ).copy()
        return N, dN
    if kind == QUAD4:
        sr = np.array([-1.0, 1.0, 1.0, -1.0])
        ss = np.array([-1.0, -1.0, 1.0, 1.0])
        rr = r[..., None]
        s_ = s[..., None]
        N = 0.25 * (1 + sr * rr) * (1 + ss * s_)
        dN = np.stack([0.25 * sr * (1 + ss * s_), 0.25 * ss * (1 + sr * rr)], axis=-1)
        return N, dN
    raise ValueError(f"unknown element kind {kind!r}")


def physical_gradients(kind, xi, coords):
    """Physical shape-function gradients and Jacobian determinants.

    ``coords`` has shape (E, nen, 2); ``xi`` shape (Q, 2). Returns
    ``N`` (Q, nen), ``dNdx`` (E, Q, nen, 2) and ``detJ`` (E, Q).
    """
    N, dN = shape(kind, xi)
    J = np.einsum("qai,eaj->eqji", dN, coords)
    detJ = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1]
    inv[..., 1, 1] = J[..., 0, 0]
    inv[..., 0, 1] = -J[..., 0, 1]
    inv[..., 1, 0] = -J[..., 1, 0]
    inv /= detJ[..., None, None]
    dNdx = np.einsum("qai,eqij->eqaj", dN, inv)
    return N, dNdx, detJ


def inverse_map(kind, coords, x, tol=1e-13, max_iter=25):
    """Reference coordinates of physical points ``x`` in elements ``coords``.

    ``coords`` (P, nen, 2) and ``x`` (P, 2) are paired row by row.
    """
    coords = np.asarray(coords, dtype=float)
    x = np.asarray(x, dtype=float)
    if kind == TRI3:
        a = coords[:, 0]
        J = np.stack([coords[:, 1] - a, coords[:, 2] - a], axis=-1)
        return np.linalg.solve(J, (x - a)[..., None])[..., 0]
    xi = np.zeros_like(x)
    scale = np.max(np.ptp(coords, axis=1), axis=1)
    for _ in range(max_iter):
        N, dN = shape(kind, xi)
        res = np.einsum("pa,pai->pi", N, coords) - x
        if np.all(np.linalg.norm(res, axis=1) <= tol * scale):
            break
        J = np.einsum("pai,paj->pij", coords, dN)
        xi = xi - np.linalg.solve(J, res[..., None])[..., 0]
    return xi


def contains_reference(kind, xi, tol=1e-10):
    """True where reference coordinates lie inside the element (with slack)."""
    xi = np.asarray(xi, dtype=float)
    if kind == TRI3:
        r, s = xi[..., 0], xi[..., 1]
        return (r >= -tol) & (s >= -tol) & (r + s <= 1.0 + tol)
    return np.all(np.abs(xi) <= 1.0 + tol, axis=-1)


def polygon_area(xy):
    """Signed shoelace area of polygon(s) with vertices along axis -2."""
    xy = np.asarray(xy, dtype=float)
    x, y = xy[..., 0], xy[..., 1]
    return 0.5 * np.sum(x * np.roll(y, -1, axis=-1) - np.roll(x, -1, axis=-1) * y, axis=-1)


def shape_at(kind, coords, xi):
    """Shape values and physical gradients at per-point reference coordinates.

    ``coords`` (P, nen, 2) pairs with ``xi`` (P, 2). Returns ``N`` (P, nen)
    and ``dNdx`` (P, nen, 2).
    """
    N, dN = shape(kind, xi)
    J = np.einsum("pai,paj->pji", dN, coords)
    dNdx = np.einsum("pai,pij->paj", dN, np.linalg.inv(J))
    return N, dNdx
