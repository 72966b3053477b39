"""MNL, random-coefficients, nested (Daly) and consider-then-choose logit models.

Each model family exposes probability kernels for a single :class:`Market`
plus a vectorized log-likelihood with its analytic gradient in an
unconstrained parameterization:

* body-style effects use effects coding, ``theta_B = -sum(theta_1..theta_{B-1})``;
* RCL spreads enter as raw scales ``s`` with ``sigma = |s|`` (draws are symmetric);
* NML nest scales are ``lambda_max * sigmoid(eta)``;
* CTC rule weights are a softmax over R logits with the last one pinned at 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import ClassVar, Union

import numpy as np
from scipy.special import expit, logsumexp, softmax

from .kernels import MixtureLogit, logit_probabilities
from .market import Market, MarketBatch, stack_markets, stack_shares
from .population import N_STYLES, all_rules

EFFECTS_TOL = 1e-9
DEFAULT_LAMBDA_MAX = 10.0
RCL_LOG_PRICE_MAX = 5.0
DEFAULT_RCL_BOUND = 50.0
DEFAULT_RCL_DRAWS = 1000


def _check_effects(theta_b):
    theta_b = np.asarray(theta_b, dtype=float)
    if abs(theta_b.sum()) > EFFECTS_TOL * max(1.0, np.abs(theta_b).max()):
        raise ValueError(f"body-style effects must sum to zero (got {theta_b.sum():.3g})")
    return theta_b


def _effects_from_free(phi):
    return np.append(phi, -np.sum(phi))


def _effects_grad(g_b):
    return g_b[:-1] - g_b[-1]


@dataclass(frozen=True)
class MnlParams:
    theta_p: float
    theta_e: float
    theta_a: float
    theta_0: float
    theta_b: np.ndarray
    kind: ClassVar[str] = "mnl"

    def __post_init__(self):
        object.__setattr__(self, "theta_b", _check_effects(self.theta_b))

    @property
    def n_styles(self):
        return len(self.theta_b)

    def utilities(self, market: Market) -> np.ndarray:
        return (
            -np.exp(self.theta_p) * market.p
            + self.theta_e / market.e
            + self.theta_a / market.a
            + self.theta_0
            + self.theta_b[market.b]
        )

    def probabilities(self, market):
        return mnl_probs(market, self)

    def to_dict(self):
        return {
            "theta_p": self.theta_p,
            "theta_e": self.theta_e,
            "theta_a": self.theta_a,
            "theta_0": self.theta_0,
            "theta_b": self.theta_b.tolist(),
        }


@dataclass(frozen=True)
class RclParams:
    """Means and sds of (price, fuel economy, acceleration, constant, style_1..style_B)."""

    mu: np.ndarray
    sigma: np.ndarray
    n_draws: int = DEFAULT_RCL_DRAWS
    draw_seed: int = 0
    kind: ClassVar[str] = "rcl"

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        if mu.shape != sigma.shape or mu.ndim != 1 or len(mu) < 5:
            raise ValueError("mu and sigma must be (4 + B,) vectors")
        if np.any(sigma < 0):
            raise ValueError("sigma must be nonnegative")
        _check_effects(mu[4:])
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n_styles(self):
        return len(self.mu) - 4

    def normals(self) -> np.ndarray:
        return rcl_normals(self.n_draws, self.n_styles, self.draw_seed)

    def coefficient_draws(self) -> np.ndarray:
        return self.mu + self.sigma * self.normals()

    def probabilities(self, market):
        return rcl_probs(market, self)

    def to_dict(self):
        return {
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "n_draws": self.n_draws,
            "draw_seed": self.draw_seed,
        }


@dataclass(frozen=True)
class NmlParams:
    theta_p: float
    theta_e: float
    theta_a: float
    theta_0: float
    theta_b: np.ndarray
    lam: np.ndarray
    lambda_max: float = DEFAULT_LAMBDA_MAX
    kind: ClassVar[str] = "nml"

    def __post_init__(self):
        object.__setattr__(self, "theta_b", _check_effects(self.theta_b))
        lam = np.asarray(self.lam, dtype=float)
        if lam.shape != self.theta_b.shape:
            raise ValueError("one nest scale per body style")
        if np.any(lam <= 0) or np.any(lam > self.lambda_max):
            raise ValueError(f"nest scales must lie in (0, {self.lambda_max}]")
        object.__setattr__(self, "lam", lam)

    @property
    def n_styles(self):
        return len(self.theta_b)

    def probabilities(self, market):
        return nml_probs(market, self)

    def to_dict(self):
        return {
            "theta_p": self.theta_p,
            "theta_e": self.theta_e,
            "theta_a": self.theta_a,
            "theta_0": self.theta_0,
            "theta_b": self.theta_b.tolist(),
            "lam": self.lam.tolist(),
            "lambda_max": self.lambda_max,
        }


@dataclass(frozen=True)
class CtcParams:
    """Homogeneous logit after screening; ``alpha[r]`` weights consideration rule ``rules[r]``."""

    theta_p: float
    theta_e: float
    theta_a: float
    theta_0: float
    alpha: np.ndarray
    rules: np.ndarray = field(default=None, repr=False)
    kind: ClassVar[str] = "ctc"

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        rules = self.rules
        if rules is None:
            n_styles = int(round(np.log2(len(alpha) + 1)))
            rules = all_rules(n_styles)
        rules = np.asarray(rules, dtype=bool)
        if rules.shape[0] != len(alpha):
            raise ValueError("one alpha per consideration rule")
        if np.any(alpha < 0) or np.any(alpha > 1) or abs(alpha.sum() - 1) > 1e-10:
            raise ValueError("alpha must lie on the probability simplex")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "rules", rules)

    @property
    def n_styles(self):
        return self.rules.shape[1]

    def utilities(self, market):
        return -np.exp(self.theta_p) * market.p + self.theta_e / market.e + self.theta_a / market.a + self.theta_0

    def probabilities(self, market):
        return ctc_probs(market, self)

    def sparsified(self, threshold=1e-6) -> "CtcParams":
        alpha = np.where(self.alpha < threshold, 0.0, self.alpha)
        return CtcParams(self.theta_p, self.theta_e, self.theta_a, self.theta_0, alpha / alpha.sum(), self.rules)

    def to_dict(self):
        return {
            "theta_p": self.theta_p,
            "theta_e": self.theta_e,
            "theta_a": self.theta_a,
            "theta_0": self.theta_0,
            "alpha": self.alpha.tolist(),
            "rules": ["".join("1" if v else "0" for v in r) for r in self.rules],
        }


ChoiceModel = Union[MnlParams, RclParams, NmlParams, CtcParams]


def model_to_dict(model: ChoiceModel) -> dict:
    return {"kind": model.kind, "params": model.to_dict()}


def model_from_dict(doc: dict) -> ChoiceModel:
    kind, p = doc["kind"], doc["params"]
    if kind == "mnl":
        return MnlParams(p["theta_p"], p["theta_e"], p["theta_a"], p["theta_0"], np.array(p["theta_b"]))
    if kind == "rcl":
        return RclParams(np.array(p["mu"]), np.array(p["sigma"]), int(p["n_draws"]), int(p["draw_seed"]))
    if kind == "nml":
        return NmlParams(
            p["theta_p"], p["theta_e"], p["theta_a"], p["theta_0"],
            np.array(p["theta_b"]), np.array(p["lam"]), float(p["lambda_max"]),
        )
    if kind == "ctc":
        rules = np.array([[c == "1" for c in r] for r in p["rules"]], dtype=bool)
        return CtcParams(p["theta_p"], p["theta_e"], p["theta_a"], p["theta_0"], np.array(p["alpha"]), rules)
    raise ValueError(f"unknown model kind {kind!r}")


def rcl_normals(n_draws, n_styles, seed):
    """Common random numbers for simulated RCL probabilities."""
    return np.random.default_rng(seed).standard_normal((n_draws, 4 + n_styles))


# ---------------------------------------------------------------------------
# single-market probability kernels


def mnl_probs(market: Market, params: MnlParams) -> np.ndarray:
    return logit_probabilities(params.utilities(market))


def rcl_probs(market: Market, params: RclParams, normals=None) -> np.ndarray:
    theta = params.mu + params.sigma * (params.normals() if normals is None else normals)
    u = (
        -np.exp(theta[:, :1]) * market.p
        + theta[:, 1:2] / market.e
        + theta[:, 2:3] / market.a
        + theta[:, 3:4]
        + theta[:, 4:][:, market.b]
    )
    return logit_probabilities(u).mean(axis=0)


def nml_probs(market: Market, params: NmlParams) -> np.ndarray:
    u = -np.exp(params.theta_p) * market.p + params.theta_e / market.e + params.theta_a / market.a
    nests = np.unique(market.b)
    V = np.array([logsumexp(u[market.b == b]) for b in nests])
    W = params.theta_0 + params.theta_b[nests] + params.lam[nests] * V
    log_den = logsumexp(np.append(W, 0.0))
    log_pn = dict(zip(nests, W - log_den))
    log_v = dict(zip(nests, V))
    out = np.empty(market.n_vehicles + 1)
    out[0] = np.exp(-log_den)
    for j, b in enumerate(market.b):
        out[j + 1] = np.exp(u[j] - log_v[b] + log_pn[b])
    return out


def ctc_probs(market: Market, params: CtcParams) -> np.ndarray:
    kernel = MixtureLogit(market.b, params.rules, params.alpha)
    return kernel.probabilities(params.utilities(market)[None, :])


def predict_proba(model: ChoiceModel, market: Market) -> np.ndarray:
    return model.probabilities(market)


# ---------------------------------------------------------------------------
# batched log-likelihoods


def _core_utility(theta_p, theta_e, theta_a, batch):
    return -np.exp(theta_p) * batch.p + theta_e * batch.inv_e + theta_a * batch.inv_a


def _theta_grads(g_u, theta_p, batch):
    """Gradients of (theta_p, theta_e, theta_a, theta_0) from d LL / d u."""
    return np.array(
        [
            np.sum(g_u * batch.p) * -np.exp(theta_p),
            np.sum(g_u * batch.inv_e),
            np.sum(g_u * batch.inv_a),
            np.sum(g_u),
        ]
    )


def _safe_log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def _weighted_sum(shares, logp):
    """sum S log P, treating S = 0 terms as 0 even when P = 0."""
    with np.errstate(invalid="ignore"):
        return float(np.sum(np.where(shares > 0, shares * logp, 0.0)))


class ModelFamily:
    """A model family's unconstrained parameterization and likelihood."""

    kind: str

    def __init__(self, n_styles=N_STYLES):
        self.n_styles = n_styles

    @property
    def n_free(self) -> int:
        raise NotImplementedError

    def unpack(self, x) -> ChoiceModel:
        raise NotImplementedError

    def pack(self, params) -> np.ndarray:
        raise NotImplementedError

    def loglik(self, x, batch: MarketBatch, shares: np.ndarray, gradient=True):
        raise NotImplementedError

    def initial(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def param_scale(self) -> np.ndarray:
        """Typical magnitude of each free parameter, used to precondition the optimizer.

        The fuel-economy and acceleration coefficients multiply features of
        order 0.1 and so live on a scale about ten times the others.
        """
        d = np.ones(self.n_free)
        d[1:3] = 10.0
        return d

    def bounds(self, coefficient_bound=None):
        """Box on the free parameters, or None when the family is unbounded."""
        return None


class MnlFamily(ModelFamily):
    kind = "mnl"

    @property
    def n_free(self):
        return 4 + self.n_styles - 1

    def unpack(self, x):
        return MnlParams(*map(float, x[:4]), _effects_from_free(x[4:]))

    def pack(self, params):
        return np.concatenate([[params.theta_p, params.theta_e, params.theta_a, params.theta_0], params.theta_b[:-1]])

    def loglik(self, x, batch, shares, gradient=True):
        th_p, th_e, th_a, th_0 = x[:4]
        theta_b = _effects_from_free(x[4:])
        u = _core_utility(th_p, th_e, th_a, batch) + th_0 + theta_b[batch.b]
        u = np.where(batch.mask, u, -np.inf)
        shift = np.maximum(u.max(axis=1), 0.0)
        log_den = shift + np.log(np.exp(-shift) + np.exp(u - shift[:, None]).sum(axis=1))
        logp = np.where(batch.mask, u - log_den[:, None], 0.0)
        ll = _weighted_sum(shares[:, 0], -log_den) + _weighted_sum(shares[:, 1:], logp)
        if not gradient:
            return ll
        P = np.where(batch.mask, np.exp(logp), 0.0)
        g_u = shares[:, 1:] - shares.sum(axis=1, keepdims=True) * P
        g = _theta_grads(g_u, th_p, batch)
        g_b = np.einsum("mj,mjb->b", g_u, batch.onehot)
        return ll, np.concatenate([g, _effects_grad(g_b)])

    def initial(self, rng):
        x = 0.1 * rng.standard_normal(self.n_free)
        x[0] = 0.0
        return x


class RclFamily(ModelFamily):
    """Simulated-likelihood RCL with fixed standard-normal draws (common random numbers)."""

    kind = "rcl"

    def __init__(self, n_styles=N_STYLES, n_draws=DEFAULT_RCL_DRAWS, draw_seed=0):
        super().__init__(n_styles)
        self.n_draws = n_draws
        self.draw_seed = draw_seed
        self.z = rcl_normals(n_draws, n_styles, draw_seed)

    @property
    def n_coef(self):
        return 4 + self.n_styles

    @property
    def n_free(self):
        return 2 * self.n_coef - 1

    def _split(self, x):
        k = self.n_coef - 1
        mu = np.concatenate([x[:4], _effects_from_free(x[4:k])])
        s = x[k:]
        return mu, s

    def unpack(self, x):
        mu, s = self._split(x)
        return RclParams(mu, np.abs(s), self.n_draws, self.draw_seed)

    def pack(self, params):
        return np.concatenate([params.mu[:4], params.mu[4:-1], params.sigma])

    def _design(self, batch):
        """Non-price features (1/e, 1/a, 1, style one-hot) flattened to (M*J, C-1), cached per batch."""
        cached = getattr(batch, "_rcl_design", None)
        if cached is None:
            MJ = batch.p.size
            X = np.concatenate(
                [
                    batch.inv_e.reshape(MJ, 1),
                    batch.inv_a.reshape(MJ, 1),
                    np.ones((MJ, 1)),
                    batch.onehot.reshape(MJ, self.n_styles),
                ],
                axis=1,
            ) * batch.mask.reshape(MJ, 1)
            cached = (X, (batch.p * batch.mask).reshape(MJ))
            batch._rcl_design = cached
        return cached

    def loglik(self, x, batch, shares, gradient=True):
        mu, s = self._split(x)
        theta = mu + s * self.z  # (I, C)
        X, p_flat = self._design(batch)
        n, (M, J) = self.n_draws, batch.p.shape
        exp_p = np.exp(theta[:, 0])
        u = (theta[:, 1:] @ X.T - np.outer(exp_p, p_flat)).reshape(n, M, J)
        u[:, ~batch.mask] = -np.inf
        shift = np.maximum(u.max(axis=2), 0.0)  # (I, M)
        xu = np.exp(u - shift[..., None])
        base = np.exp(-shift)
        den = base + xu.sum(axis=2)
        P_i = np.empty((n, M, J + 1))
        P_i[..., 0] = base / den
        P_i[..., 1:] = xu / den[..., None]
        P = P_i.mean(axis=0)  # (M, J+1)
        ll = _weighted_sum(shares, _safe_log(P))
        if not gradient:
            return ll
        r = np.where(shares > 0, shares / np.where(P > 0, P, 1.0), 0.0)
        rho = np.einsum("imj,mj->im", P_i, r)
        G = P_i[..., 1:] * (r[None, :, 1:] - rho[..., None])
        G = G.reshape(n, M * J) / n
        h = np.empty((n, self.n_coef))
        h[:, 0] = -exp_p * (G @ p_flat)
        h[:, 1:] = G @ X
        g_mu = h.sum(axis=0)
        g_s = np.einsum("ic,ic->c", h, self.z)
        return ll, np.concatenate([g_mu[:4], _effects_grad(g_mu[4:]), g_s])

    def initial(self, rng):
        k = self.n_coef - 1
        x = np.empty(self.n_free)
        x[:k] = 0.1 * rng.standard_normal(k)
        x[0] = 0.0
        x[k:] = 0.1
        return x

    def param_scale(self):
        d = super().param_scale()
        k = self.n_coef - 1
        d[k + 1 : k + 3] = 10.0
        return d

    def bounds(self, coefficient_bound=None):
        """``|x| <= bound * param_scale``, with the log-price mean and its spread capped at ``RCL_LOG_PRICE_MAX``.

        Without a box the simulated likelihood can keep rising as every
        coefficient grows, which turns each draw into a deterministic
        consumer type and drives some predicted shares to exactly zero.
        """
        if coefficient_bound is None:
            return None
        hi = coefficient_bound * self.param_scale()
        k = self.n_coef - 1
        hi[0] = hi[k] = RCL_LOG_PRICE_MAX
        return list(zip(-hi, hi))


class NmlFamily(ModelFamily):
    kind = "nml"

    def __init__(self, n_styles=N_STYLES, lambda_max=DEFAULT_LAMBDA_MAX):
        super().__init__(n_styles)
        self.lambda_max = lambda_max

    @property
    def n_free(self):
        return 4 + 2 * self.n_styles - 1

    def _split(self, x):
        B = self.n_styles
        theta_b = _effects_from_free(x[4 : 4 + B - 1])
        lam = self.lambda_max * expit(x[4 + B - 1 :])
        return theta_b, lam

    def unpack(self, x):
        theta_b, lam = self._split(x)
        lam = np.clip(lam, np.finfo(float).tiny, self.lambda_max)
        return NmlParams(*map(float, x[:4]), theta_b, lam, self.lambda_max)

    def pack(self, params):
        q = np.minimum(params.lam / self.lambda_max, 1 - 1e-12)
        eta = np.log(q) - np.log1p(-q)
        return np.concatenate(
            [[params.theta_p, params.theta_e, params.theta_a, params.theta_0], params.theta_b[:-1], eta]
        )

    def loglik(self, x, batch, shares, gradient=True):
        th_p, th_e, th_a, th_0 = x[:4]
        theta_b, lam = self._split(x)
        u = np.where(batch.mask, _core_utility(th_p, th_e, th_a, batch), -np.inf)
        oh = batch.onehot.astype(bool)  # (M, J, B)
        um = np.where(oh, u[..., None], -np.inf).max(axis=1)  # (M, B)
        nonempty = np.isfinite(um)
        um0 = np.where(nonempty, um, 0.0)
        with np.errstate(divide="ignore"):
            V = um0 + np.log(np.einsum("mjb,mj->mb", batch.onehot, np.exp(u - np.take_along_axis(um0, batch.b, 1))))
        V = np.where(nonempty, V, 0.0)
        W = np.where(nonempty, th_0 + theta_b[None, :] + lam[None, :] * V, -np.inf)
        shift = np.maximum(W.max(axis=1), 0.0)
        log_den = shift + np.log(np.exp(-shift) + np.exp(W - shift[:, None]).sum(axis=1))
        log_pn = W - log_den[:, None]  # (M, B)
        V_j = np.take_along_axis(V, batch.b, 1)
        log_cond = np.where(batch.mask, u - V_j, 0.0)
        logp = np.where(batch.mask, log_cond + np.take_along_axis(log_pn, batch.b, 1), 0.0)
        ll = _weighted_sum(shares[:, 0], -log_den) + _weighted_sum(shares[:, 1:], logp)
        if not gradient:
            return ll
        S = shares[:, 1:]
        S_tot = shares.sum(axis=1)
        SN = np.einsum("mj,mjb->mb", S, batch.onehot)
        PN = np.where(nonempty, np.exp(log_pn), 0.0)
        gW = np.where(nonempty, SN - S_tot[:, None] * PN, 0.0)  # (M, B)
        cond = np.where(batch.mask, np.exp(log_cond), 0.0)
        g_u = S - np.take_along_axis(SN, batch.b, 1) * cond + np.take_along_axis(gW * lam[None, :], batch.b, 1) * cond
        g_u = np.where(batch.mask, g_u, 0.0)
        g_theta = _theta_grads(g_u, th_p, batch)
        g_theta[3] = gW.sum()
        g_b = gW.sum(axis=0)
        g_lam = (gW * V).sum(axis=0)
        g_eta = g_lam * lam * (1.0 - lam / self.lambda_max)
        return ll, np.concatenate([g_theta, _effects_grad(g_b), g_eta])

    def initial(self, rng):
        B = self.n_styles
        x = np.empty(self.n_free)
        x[: 4 + B - 1] = 0.1 * rng.standard_normal(4 + B - 1)
        x[0] = 0.0
        q = 1.0 / self.lambda_max
        x[4 + B - 1 :] = np.log(q) - np.log1p(-q)
        return x


class CtcFamily(ModelFamily):
    kind = "ctc"

    def __init__(self, n_styles=N_STYLES, rules=None):
        super().__init__(n_styles)
        self.rules = all_rules(n_styles) if rules is None else np.asarray(rules, dtype=bool)
        self.S = self.rules.astype(float)

    @property
    def n_rules(self):
        return len(self.rules)

    @property
    def n_free(self):
        return 4 + self.n_rules - 1

    def _alpha(self, x):
        return softmax(np.append(x[4:], 0.0))

    def unpack(self, x):
        return CtcParams(*map(float, x[:4]), self._alpha(x), self.rules)

    def pack(self, params):
        with np.errstate(divide="ignore"):
            logit = np.log(np.maximum(params.alpha, 1e-300))
        logit = logit - logit[-1]
        return np.concatenate([[params.theta_p, params.theta_e, params.theta_a, params.theta_0], logit[:-1]])

    def loglik(self, x, batch, shares, gradient=True):
        return self._loglik(x[:4], self._alpha(x), batch, shares, gradient, x_alpha=True)

    def loglik_alpha(self, theta, alpha, batch, shares, gradient=True):
        """Likelihood at an explicit alpha (gradient w.r.t. theta and alpha directly)."""
        return self._loglik(theta, alpha, batch, shares, gradient, x_alpha=False)

    def _loglik(self, theta, alpha, batch, shares, gradient, x_alpha):
        th_p, th_e, th_a, th_0 = theta
        u = np.where(batch.mask, _core_utility(th_p, th_e, th_a, batch) + th_0, -np.inf)
        shift = np.maximum(u.max(axis=1), 0.0)
        xu = np.exp(u - shift[:, None])  # (M, J), 0 where padded
        base = np.exp(-shift)
        E = np.einsum("mj,mjb->mb", xu, batch.onehot)
        D = base[:, None] + E @ self.S.T  # (M, R)
        Wd = 1.0 / D
        A = Wd @ (alpha[:, None] * self.S)  # (M, B)
        A_j = np.take_along_axis(A, batch.b, 1)
        P0 = base * (Wd @ alpha)
        with np.errstate(divide="ignore"):
            logp = np.where(batch.mask, u - shift[:, None] + _safe_log(A_j), 0.0)
        ll = _weighted_sum(shares[:, 0], _safe_log(P0)) + _weighted_sum(shares[:, 1:], logp)
        if not gradient:
            return ll
        if not np.isfinite(ll):
            return ll, np.full(4 + (len(alpha) - 1 if x_alpha else len(alpha)), np.nan)
        S = shares[:, 1:]
        ratio = np.where(S > 0, S / np.where(A_j > 0, A_j, 1.0), 0.0)  # (S_j / P_j) * x_j
        Rx = np.einsum("mj,mjb->mb", np.where(batch.mask, ratio, 0.0), batch.onehot)
        r0 = np.where(shares[:, 0] > 0, shares[:, 0] / np.where(P0 > 0, P0, 1.0), 0.0)
        q = Wd * (Rx @ self.S.T + (r0 * base)[:, None])  # (M, R)
        g_alpha = q.sum(axis=0)
        T = (q * Wd) @ (alpha[:, None] * self.S)  # (M, B)
        g_u = np.where(batch.mask, S - xu * np.take_along_axis(T, batch.b, 1), 0.0)
        g_theta = _theta_grads(g_u, th_p, batch)
        if not x_alpha:
            return ll, np.concatenate([g_theta, g_alpha])
        g_eta = alpha * (g_alpha - alpha @ g_alpha)
        return ll, np.concatenate([g_theta, g_eta[:-1]])

    def initial(self, rng):
        x = np.empty(self.n_free)
        x[:4] = 0.1 * rng.standard_normal(4)
        x[0] = 0.0
        alpha = np.full(self.n_rules, 1.0 / self.n_rules) + 0.1 / self.n_rules * rng.dirichlet(np.ones(self.n_rules))
        alpha /= alpha.sum()
        logit = np.log(alpha)
        x[4:] = (logit - logit[-1])[:-1]
        return x


FAMILIES = {"mnl": MnlFamily, "rcl": RclFamily, "nml": NmlFamily, "ctc": CtcFamily}


def family_for(model: ChoiceModel) -> ModelFamily:
    if model.kind == "rcl":
        return RclFamily(model.n_styles, model.n_draws, model.draw_seed)
    if model.kind == "nml":
        return NmlFamily(model.n_styles, model.lambda_max)
    if model.kind == "ctc":
        return CtcFamily(model.n_styles, model.rules)
    return MnlFamily(model.n_styles)


@dataclass
class LogLikelihood:
    value: float
    gradient: np.ndarray
    finite: bool


def log_likelihood(model: ChoiceModel, markets, shares, gradient=True) -> LogLikelihood:
    """``sum_m sum_j S_jm log P_jm`` and its gradient in the model's free parameterization.

    A zero probability on an observed alternative yields ``value = -inf``
    with ``finite = False`` rather than an exception.
    """
    fam = family_for(model)
    batch = markets if isinstance(markets, MarketBatch) else stack_markets(markets, model.n_styles)
    S = shares if isinstance(shares, np.ndarray) and shares.ndim == 2 else stack_shares(shares, batch.p.shape[1])
    if model.kind == "ctc":
        theta = np.array([model.theta_p, model.theta_e, model.theta_a, model.theta_0])
        if np.all(model.alpha > 0):
            out = fam.loglik(fam.pack(model), batch, S, gradient)
        else:
            out = fam.loglik_alpha(theta, model.alpha, batch, S, gradient)
    else:
        out = fam.loglik(fam.pack(model), batch, S, gradient)
    ll, g = out if gradient else (out, None)
    return LogLikelihood(float(ll), g, bool(np.isfinite(ll)))
