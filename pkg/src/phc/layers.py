"""Neural layers: hypercomplex affine maps, component batch normalization,
the two dropout variants, and the dense collapse to real logits."""

from __future__ import annotations

import numpy as np

from . import algebra
from . import autodiff as ad
from .autodiff import Tensor
from .rng import derive_rng

WEIGHT_SCHEMES = ("phc-normal", "glorot", "he")


def phc_normal_std(n: int, d: int, k: int) -> float:
    """Init standard deviation sqrt(2 / (n * (fan_in + fan_out)))."""
    return float(np.sqrt(2.0 / (n * (d + k))))


def resolve_contribution_scheme(scheme: str, n: int) -> str:
    """'auto' picks the fixed rule for n in {2, 4}, shifted identity otherwise."""
    if scheme != "auto":
        return scheme
    if n == 2:
        return "complex"
    if n == 4:
        return "quaternion"
    return "shifted-identity"


class PhmLinear:
    """Affine layer whose weight matrix is a sum of n Kronecker products.

    Stores n contribution matrices (n x n), n component weight matrices
    (k/n x d/n) and an optional length-k bias. The assembled k x d matrix is
    rebuilt differentiably on every forward pass.
    """

    def __init__(self, n: int, in_width: int, out_width: int, *,
                 bias: bool = True,
                 weight_scheme: str = "phc-normal",
                 contribution_scheme: str = "auto",
                 trainable_contributions: bool = True,
                 seed: int = 0, layer_index: int = 0):
        if in_width % n or out_width % n:
            raise ValueError(
                f"widths ({out_width}, {in_width}) must be divisible by n={n}")
        if weight_scheme not in WEIGHT_SCHEMES:
            raise ValueError(f"unknown weight scheme {weight_scheme!r}")
        self.n = n
        self.d = in_width
        self.k = out_width
        scheme = resolve_contribution_scheme(contribution_scheme, n)
        cs = algebra.init_contributions(n, scheme, seed=seed, layer_index=layer_index)
        self.contributions = [Tensor(m, requires_grad=trainable_contributions)
                              for m in cs.matrices]
        rows, cols = out_width // n, in_width // n
        self.weights = []
        for i in range(n):
            rng = derive_rng(seed, "phm-weight", layer_index, i)
            if weight_scheme == "phc-normal":
                w = rng.normal(0.0, phc_normal_std(n, in_width, out_width),
                               size=(rows, cols))
            elif weight_scheme == "glorot":
                limit = np.sqrt(6.0 / (rows + cols))
                w = rng.uniform(-limit, limit, size=(rows, cols))
            else:
                w = rng.normal(0.0, np.sqrt(2.0 / cols), size=(rows, cols))
            self.weights.append(Tensor(w, requires_grad=True))
        self.bias = Tensor(np.zeros(out_width), requires_grad=True) if bias else None

    def assembled(self) -> Tensor:
        """Differentiable k x d block matrix, sum of Kronecker products."""
        u = ad.kron(self.contributions[0], self.weights[0])
        for c, w in zip(self.contributions[1:], self.weights[1:]):
            u = u + ad.kron(c, w)
        return u

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.d:
            raise ValueError(f"expected input width {self.d}, got {x.shape}")
        y = ad.matmul(x, ad.transpose(self.assembled()))
        if self.bias is not None:
            y = y + self.bias
        return y

    def named_tensors(self, prefix: str = ""):
        for i, c in enumerate(self.contributions):
            yield f"{prefix}contributions.{i}", c
        for i, w in enumerate(self.weights):
            yield f"{prefix}weights.{i}", w
        if self.bias is not None:
            yield f"{prefix}bias", self.bias

    def trainable_count(self) -> int:
        return sum(t.size for _, t in self.named_tensors() if t.requires_grad)


def init_phm(n: int, k: int, d: int, weight_scheme: str = "phc-normal",
             contribution_scheme: str = "auto", seed: int = 0, *,
             bias: bool = True, layer_index: int = 0,
             trainable_contributions: bool = True) -> PhmLinear:
    """Build a PhmLinear with output width k and input width d."""
    return PhmLinear(n, d, k, bias=bias, weight_scheme=weight_scheme,
                     contribution_scheme=contribution_scheme,
                     trainable_contributions=trainable_contributions,
                     seed=seed, layer_index=layer_index)


def to_components(h: Tensor, n: int) -> Tensor:
    """Reshape (b, n*m) to (b, n, m); the concatenated component layout."""
    b, k = h.shape
    if k % n:
        raise ValueError(f"width {k} not divisible by n={n}")
    return ad.reshape(h, (b, n, k // n))


def from_components(h3: Tensor) -> Tensor:
    b, n, m = h3.shape
    return ad.reshape(h3, (b, n * m))


class ComponentBatchNorm:
    """Standard batch normalization applied per (component, channel) pair.

    Normalizes each of the n*m slices of a (batch, n, m) tensor over the
    batch axis. Running statistics use the biased batch variance.
    """

    def __init__(self, n: int, m: int, momentum: float = 0.1, eps: float = 1e-5):
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.n = n
        self.m = m
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones((n, m)), requires_grad=True)
        self.beta = Tensor(np.zeros((n, m)), requires_grad=True)
        self.running_mean = np.zeros((n, m))
        self.running_var = np.ones((n, m))

    def forward(self, h3: Tensor, training: bool) -> Tensor:
        if h3.ndim != 3 or h3.shape[1:] != (self.n, self.m):
            raise ValueError(f"expected (b, {self.n}, {self.m}), got {h3.shape}")
        if training:
            if h3.shape[0] < 2:
                raise ValueError("batch normalization needs batch size >= 2 in train mode")
            mu = h3.mean(axis=0)
            centered = h3 - mu
            var = (centered * centered).mean(axis=0)
            self.running_mean *= 1.0 - self.momentum
            self.running_mean += self.momentum * mu.data
            self.running_var *= 1.0 - self.momentum
            self.running_var += self.momentum * var.data
        else:
            mu = Tensor(self.running_mean)
            centered = h3 - mu
            var = Tensor(self.running_var)
        norm = centered / ad.sqrt(var + self.eps)
        return self.gamma * norm + self.beta

    def named_tensors(self, prefix: str = ""):
        yield f"{prefix}gamma", self.gamma
        yield f"{prefix}beta", self.beta

    def named_buffers(self, prefix: str = ""):
        yield f"{prefix}running_mean", self.running_mean
        yield f"{prefix}running_var", self.running_var


def hc_dropout(h3: Tensor, p: float, mode: str = "component",
               rng: np.random.Generator | None = None,
               training: bool = True) -> Tensor:
    """Dropout over a (b, n, m) tensor.

    Component mode zeroes a hidden unit together with all n of its algebra
    components (mask shape (b, 1, m) broadcast over the component axis);
    flat mode masks every scalar independently. Kept values are rescaled by
    1/(1-p) so the expected output matches the input. Identity when not
    training or p == 0.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return h3
    if mode not in ("component", "flat"):
        raise ValueError(f"unknown dropout mode {mode!r}")
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    b, n, m = h3.shape
    shape = (b, 1, m) if mode == "component" else (b, n, m)
    keep = (rng.random(shape) >= p).astype(np.float64)
    return h3 * Tensor(keep / (1.0 - p))


class RealTransform:
    """Dense affine map, used to collapse the algebra axis to real outputs."""

    def __init__(self, in_width: int, out_width: int, *, seed: int = 0,
                 key: str = "real"):
        rng = derive_rng(seed, "real-transform", key)
        limit = np.sqrt(6.0 / (in_width + out_width))
        self.weight = Tensor(rng.uniform(-limit, limit, (in_width, out_width)),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_width), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return real_transform(x, self.weight, self.bias)

    def named_tensors(self, prefix: str = ""):
        yield f"{prefix}weight", self.weight
        yield f"{prefix}bias", self.bias


def real_transform(h: Tensor, a_r: Tensor, b_r: Tensor) -> Tensor:
    if h.shape[1] != a_r.shape[0]:
        raise ValueError(f"width mismatch: {h.shape} @ {a_r.shape}")
    return ad.matmul(h, a_r) + b_r
