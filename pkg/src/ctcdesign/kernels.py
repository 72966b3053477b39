"""Array-level logit kernels shared by the true behavior, the models and the designer.

All kernels place the outside good (deterministic utility 0) at index 0 of
their probability outputs.
"""

import numpy as np

_TINY = 1e-280


def style_onehot(styles, n_styles):
    styles = np.asarray(styles, dtype=int)
    out = np.zeros(styles.shape + (n_styles,))
    np.put_along_axis(out, styles[..., None], 1.0, axis=-1)
    return out


def collapse_rules(masks, weights, present_styles):
    """Merge rules that induce the same consideration pattern on ``present_styles``.

    Returns ``(patterns, mass, null_mass)`` where ``patterns`` is a boolean
    (K, B) array restricted to present styles, ``mass`` the merged weights and
    ``null_mass`` the weight of rules that consider nothing present.
    """
    masks = np.asarray(masks, dtype=bool)
    weights = np.asarray(weights, dtype=float)
    present = np.zeros(masks.shape[1], dtype=bool)
    present[np.asarray(present_styles, dtype=int)] = True
    restricted = masks & present
    cols = np.flatnonzero(present)
    codes = restricted[:, cols] @ (1 << np.arange(len(cols)))
    uniq, inverse = np.unique(codes, return_inverse=True)
    mass = np.bincount(inverse, weights=weights, minlength=len(uniq))
    patterns = np.zeros((len(uniq), masks.shape[1]), dtype=bool)
    patterns[:, cols] = (uniq[:, None] >> np.arange(len(cols))) & 1
    null = uniq == 0
    null_mass = float(mass[null].sum())
    return patterns[~null], mass[~null], null_mass


class MixtureLogit:
    """Mixture of logits over coefficient draws and consideration patterns.

    ``P_j = sum_K w_K mean_i [b_j in K] exp(u_ij) / (1 + sum_{k in K} exp(u_ik))``.
    Consideration patterns carrying mass ``null_mass`` that contain no
    vehicle send their mass to the outside good.

    Parameters
    ----------
    styles : (J,) int
    patterns : (K, B) bool
    weights : (K,) float
    null_mass : float
    """

    def __init__(self, styles, patterns, weights, null_mass=0.0):
        self.styles = np.asarray(styles, dtype=int)
        self.patterns = np.asarray(patterns, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.null_mass = float(null_mass)
        n_styles = self.patterns.shape[1]
        self.onehot = style_onehot(self.styles, n_styles)  # (J, B)
        self._wS = self.weights[:, None] * self.patterns  # (K, B)

    def _core(self, u):
        u = np.atleast_2d(u)
        shift = np.maximum(u.max(axis=1), 0.0)
        x = np.exp(u - shift[:, None])
        base = np.exp(-shift)
        D = base[:, None] + (x @ self.onehot) @ self.patterns.T  # (I, K)
        W = 1.0 / D
        A = W @ self._wS  # (I, B)
        return x, base, D, W, A

    def probabilities(self, u, per_draw=False):
        """Choice probabilities; ``u`` is (I, J). Returns (J+1,) or (I, J+1)."""
        u = np.atleast_2d(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            x, base, D, W, A = self._core(u)
            P = np.empty((x.shape[0], x.shape[1] + 1))
            P[:, 1:] = x * A[:, self.styles]
            P[:, 0] = base * (W @ self.weights) + self.null_mass
        bad = np.flatnonzero(np.any(D < _TINY, axis=1))
        for i in bad:
            P[i] = self._stable_row(u[i])
        return P if per_draw else P.mean(axis=0)

    def _stable_row(self, u):
        """One draw's probabilities with a separate log-sum-exp shift per pattern.

        Used when the shared shift underflows a pattern's denominator, i.e.
        when the best vehicle is very attractive and some pattern excludes it.
        """
        considered = self.patterns[:, self.styles] > 0  # (K, J)
        masked = np.where(considered, u[None, :], -np.inf)
        m = np.maximum(masked.max(axis=1), 0.0)
        x = np.exp(masked - m[:, None])
        den = np.exp(-m) + x.sum(axis=1)
        out = np.empty(len(u) + 1)
        out[1:] = self.weights @ (x / den[:, None])
        out[0] = self.weights @ (np.exp(-m) / den) + self.null_mass
        return out

    def revenue_vjp(self, u, margins):
        """Probabilities and the gradient of ``sum_j P_j * margins_j`` w.r.t. ``u``.

        Returns ``(P (J+1,), G (I, J))`` where ``G[i, k]`` is the derivative
        with respect to draw ``i``'s utility of vehicle ``k`` (already
        divided by I).
        """
        u = np.atleast_2d(u)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            x, base, D, W, A = self._core(u)
            n = x.shape[0]
            P = np.empty((n, x.shape[1] + 1))
            P[:, 1:] = x * A[:, self.styles]
            P[:, 0] = base * (W @ self.weights) + self.null_mass
            F = (x * margins[None, :]) @ self.onehot  # (I, B)
            Mbar = (F @ self.patterns.T) * W  # (I, K): sum_j m_j P_Kij
            T = (Mbar * W) @ self._wS  # (I, B)
            G = x * (margins[None, :] * A[:, self.styles] - T[:, self.styles]) / n
        for i in np.flatnonzero(np.any(D < _TINY, axis=1)):
            P[i], g = self._stable_row_vjp(u[i], margins)
            G[i] = g / n
        return P.mean(axis=0), G

    def _stable_row_vjp(self, u, margins):
        """:meth:`_stable_row` plus the revenue gradient ``sum_K w_K P_Kk (m_k - R_K)``."""
        considered = self.patterns[:, self.styles] > 0
        masked = np.where(considered, u[None, :], -np.inf)
        m = np.maximum(masked.max(axis=1), 0.0)
        x = np.exp(masked - m[:, None])
        den = np.exp(-m) + x.sum(axis=1)
        PK = x / den[:, None]  # (K, J)
        R = PK @ margins
        out = np.empty(len(u) + 1)
        out[1:] = self.weights @ PK
        out[0] = self.weights @ (np.exp(-m) / den) + self.null_mass
        g = self.weights @ (PK * (margins[None, :] - R[:, None]))
        return out, g


def logit_probabilities(u):
    """Plain logit with outside good over the last axis of ``u``; returns (..., J+1)."""
    u = np.asarray(u, dtype=float)
    shift = np.maximum(u.max(axis=-1, keepdims=True), 0.0)
    x = np.exp(u - shift)
    base = np.exp(-shift)
    denom = base + x.sum(axis=-1, keepdims=True)
    return np.concatenate([base / denom, x / denom], axis=-1)
