"""Temporal-gated RBF network: Gaussian RBF branch, linearized GRU branch,
sigmoid fusion gate, with exact analytic Jacobians.

The network output is a convex combination of the two branch outputs,

    y = g * y_rbf + (1 - g) * y_gru,

where the gate g is a sigmoid of an affine map of [x; h_prev].  The GRU
branch is "linearized": the usual sigmoid gates are replaced by hard clamps
to [0, 1] and the candidate state is affine (no tanh).  Parameter gradients
are single-step: the dependence of h_prev on the parameters is truncated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TgrbfNet",
    "ForwardTrace",
    "rbf_kernel",
    "rbf_forward",
    "lgru_step",
    "gate_value",
    "sigmoid",
]

# Derivative of clamp(a, 0, 1): 1 strictly inside (0, 1), 0 outside and at
# the kinks themselves (saturated gates stay frozen).
def _clamp_mask(pre: np.ndarray) -> np.ndarray:
    return ((pre > 0.0) & (pre < 1.0)).astype(float)


def sigmoid(a):
    return 1.0 / (1.0 + np.exp(-a))


def rbf_kernel(x: np.ndarray, center: np.ndarray, width: float) -> float:
    """Gaussian kernel exp(-||x - center||^2 / (2 width^2))."""
    if width <= 0.0:
        raise ValueError(f"kernel width must be positive, got {width}")
    x = np.asarray(x, dtype=float)
    center = np.asarray(center, dtype=float)
    if x.shape != center.shape:
        raise ValueError(f"shape mismatch: x {x.shape} vs center {center.shape}")
    d2 = float(np.sum((x - center) ** 2))
    return float(np.exp(-d2 / (2.0 * width * width)))


def rbf_forward(x, centers, widths, weights):
    """Evaluate the RBF branch.  Returns (y_rbf, phi)."""
    x = np.asarray(x, dtype=float)
    centers = np.asarray(centers, dtype=float)
    if centers.ndim != 2 or centers.shape[1] != x.shape[0]:
        raise ValueError(f"centers shape {centers.shape} incompatible with input {x.shape}")
    if np.any(np.asarray(widths) <= 0.0):
        raise ValueError("all kernel widths must be positive")
    d2 = np.sum((centers - x) ** 2, axis=1)
    phi = np.exp(-d2 / (2.0 * np.asarray(widths, dtype=float) ** 2))
    return float(np.dot(weights, phi)), phi


def lgru_step(x, h_prev, W_z, b_z, W_r, b_r, W_h, b_h, out_w, out_b):
    """One linearized-GRU step.  Returns (h_next, y_gru, intermediates).

    pre_z/pre_r are the affine pre-activations; z and r are their hard
    clamps to [0, 1].  The candidate state n is affine in [x; r*h_prev].
    """
    zeta = np.concatenate([x, h_prev])
    pre_z = W_z @ zeta + b_z
    pre_r = W_r @ zeta + b_r
    z = np.clip(pre_z, 0.0, 1.0)
    r = np.clip(pre_r, 0.0, 1.0)
    xi = np.concatenate([x, r * h_prev])
    n = W_h @ xi + b_h
    h_next = (1.0 - z) * h_prev + z * n
    y_gru = float(out_w @ h_next + out_b)
    inter = {"zeta": zeta, "pre_z": pre_z, "pre_r": pre_r, "z": z, "r": r,
             "xi": xi, "n": n}
    return h_next, y_gru, inter


def gate_value(x, h_prev, gate_w, gate_b):
    """Fusion gate g = sigmoid(gate_w . [x; h_prev] + gate_b), in (0, 1)."""
    zeta = np.concatenate([x, h_prev])
    return float(sigmoid(float(np.dot(gate_w, zeta)) + gate_b))


@dataclass
class ForwardTrace:
    """All intermediates of one forward pass, for Jacobian reuse."""

    x: np.ndarray
    h_prev: np.ndarray
    phi: np.ndarray
    y_rbf: float
    pre_z: np.ndarray
    pre_r: np.ndarray
    z: np.ndarray
    r: np.ndarray
    n: np.ndarray
    h_next: np.ndarray
    y_gru: float
    g: float
    y: float
    zeta: np.ndarray
    xi: np.ndarray


# Parameter segments, in flat-vector order.  The first block is the online
# set (mask True); widths and LGRU biases are trained offline only.
_SEGMENTS = [
    ("rbf_w", True),
    ("centers", True),
    ("W_z", True),
    ("W_r", True),
    ("W_h", True),
    ("gate_w", True),
    ("gate_b", True),
    ("out_w", True),
    ("out_b", True),
    ("widths", False),
    ("b_z", False),
    ("b_r", False),
    ("b_h", False),
]


@dataclass
class TgrbfNet:
    """Network weights plus the recurrent hidden state.

    Value-semantics container: forward/jacobian methods never mutate the
    instance; `advance` is the explicit stateful step used by run loops.
    """

    centers: np.ndarray     # (m, n_in)
    widths: np.ndarray      # (m,), > 0
    rbf_w: np.ndarray       # (m,)
    W_z: np.ndarray         # (p, n_in + p)
    b_z: np.ndarray
    W_r: np.ndarray
    b_r: np.ndarray
    W_h: np.ndarray
    b_h: np.ndarray
    gate_w: np.ndarray      # (n_in + p,)
    gate_b: float
    out_w: np.ndarray       # (p,)
    out_b: float
    h_init: np.ndarray      # (p,)
    h: np.ndarray = field(default=None)  # current hidden state
    gate_frozen: bool = False            # force g = 1 (pure-RBF ablation)

    def __post_init__(self):
        if self.h is None:
            self.h = self.h_init.copy()
        if self.m < 1:
            raise ValueError("need at least one RBF node")
        if np.any(self.widths <= 0.0):
            raise ValueError("all kernel widths must be positive")
        if not all(np.all(np.isfinite(np.asarray(v, dtype=float)))
                   for v in (self.centers, self.widths, self.rbf_w, self.W_z,
                             self.b_z, self.W_r, self.b_r, self.W_h, self.b_h,
                             self.gate_w, self.gate_b, self.out_w, self.out_b,
                             self.h_init)):
            raise ValueError("network parameters must be finite")

    # -- dimensions ---------------------------------------------------------

    @property
    def m(self) -> int:
        return self.centers.shape[0]

    @property
    def n_in(self) -> int:
        return self.centers.shape[1]

    @property
    def p(self) -> int:
        return self.h_init.shape[0]

    def count_parameters(self) -> int:
        m, p, n = self.m, self.p, self.n_in
        return m * n + 2 * m + 3 * (p * (n + p) + p) + (p + 1) + (n + p + 1)

    # -- forward ------------------------------------------------------------

    def reset(self) -> None:
        """Reset the hidden state for a new independent sequence."""
        self.h = self.h_init.copy()

    def gate(self, x, h_prev=None) -> float:
        if self.gate_frozen:
            return 1.0
        h_prev = self.h if h_prev is None else h_prev
        return gate_value(np.asarray(x, dtype=float), h_prev,
                          self.gate_w, self.gate_b)

    def forward(self, x, h_prev=None) -> tuple[float, ForwardTrace]:
        """Evaluate the network at input x with hidden state h_prev
        (defaults to the stored state).  Pure: does not mutate self."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_in,):
            raise ValueError(f"input must have shape ({self.n_in},), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite network input")
        h_prev = self.h if h_prev is None else np.asarray(h_prev, dtype=float)

        y_rbf, phi = rbf_forward(x, self.centers, self.widths, self.rbf_w)
        h_next, y_gru, it = lgru_step(x, h_prev, self.W_z, self.b_z,
                                      self.W_r, self.b_r, self.W_h, self.b_h,
                                      self.out_w, self.out_b)
        g = self.gate(x, h_prev)
        y = g * y_rbf + (1.0 - g) * y_gru
        trace = ForwardTrace(x=x, h_prev=h_prev, phi=phi, y_rbf=y_rbf,
                             pre_z=it["pre_z"], pre_r=it["pre_r"],
                             z=it["z"], r=it["r"], n=it["n"], h_next=h_next,
                             y_gru=y_gru, g=g, y=y,
                             zeta=it["zeta"], xi=it["xi"])
        return y, trace

    def advance(self, x) -> tuple[float, ForwardTrace]:
        """forward() that also commits the new hidden state."""
        y, trace = self.forward(x)
        self.h = trace.h_next
        return y, trace

    # -- Jacobians ----------------------------------------------------------

    def jacobian_params(self, trace: ForwardTrace) -> np.ndarray:
        """dy/dW in flat-vector layout (single-step, h_prev held fixed)."""
        x, h_prev = trace.x, trace.h_prev
        g = trace.g
        phi, z, r, n = trace.phi, trace.z, trace.r, trace.n
        one_m_g = 1.0 - g

        diff = x - self.centers                         # (m, n_in)
        d_rbf_w = g * phi
        d_centers = (g * self.rbf_w * phi / self.widths ** 2)[:, None] * diff
        d_widths = g * self.rbf_w * phi * np.sum(diff ** 2, axis=1) / self.widths ** 3

        q = one_m_g * self.out_w                        # dy/dh_next
        mz = _clamp_mask(trace.pre_z)
        mr = _clamp_mask(trace.pre_r)
        zeta = trace.zeta

        cz = q * (n - h_prev) * mz                      # (p,)
        d_W_z = np.outer(cz, zeta)
        d_b_z = cz
        d_W_h = np.outer(q * z, trace.xi)
        d_b_h = q * z
        # reset-gate path: n_j depends on r_l through W_h[j, n_in + l] h_prev_l
        t = ((q * z) @ self.W_h[:, self.n_in:]) * h_prev * mr   # (p,)
        d_W_r = np.outer(t, zeta)
        d_b_r = t

        if self.gate_frozen:
            s_g = 0.0
        else:
            s_g = g * one_m_g * (trace.y_rbf - trace.y_gru)
        d_gate_w = s_g * zeta
        d_gate_b = np.array([s_g])
        d_out_w = one_m_g * trace.h_next
        d_out_b = np.array([one_m_g])

        return np.concatenate([
            d_rbf_w, d_centers.ravel(), d_W_z.ravel(), d_W_r.ravel(),
            d_W_h.ravel(), d_gate_w, d_gate_b, d_out_w, d_out_b,
            d_widths, d_b_z, d_b_r, d_b_h,
        ])

    def jacobian_input(self, trace: ForwardTrace) -> np.ndarray:
        """dy/dx including the RBF, LGRU and gate paths."""
        n_in = self.n_in
        g = trace.g
        diff = self.centers - trace.x
        d_rbf = g * np.sum((self.rbf_w * trace.phi / self.widths ** 2)[:, None] * diff,
                           axis=0)

        q = (1.0 - g) * self.out_w
        mz = _clamp_mask(trace.pre_z)
        mr = _clamp_mask(trace.pre_r)
        dn_dx = (self.W_h[:, :n_in]
                 + self.W_h[:, n_in:] @ ((trace.h_prev * mr)[:, None] * self.W_r[:, :n_in]))
        dh_dx = ((trace.n - trace.h_prev) * mz)[:, None] * self.W_z[:, :n_in] \
            + trace.z[:, None] * dn_dx
        d_gru = q @ dh_dx

        if self.gate_frozen:
            d_gate = 0.0
        else:
            d_gate = g * (1.0 - g) * (trace.y_rbf - trace.y_gru) * self.gate_w[:n_in]
        return d_rbf + d_gru + d_gate

    # -- flat parameter vector ----------------------------------------------

    def _segment_arrays(self) -> dict[str, np.ndarray]:
        return {
            "rbf_w": self.rbf_w, "centers": self.centers,
            "W_z": self.W_z, "W_r": self.W_r, "W_h": self.W_h,
            "gate_w": self.gate_w, "gate_b": np.atleast_1d(self.gate_b),
            "out_w": self.out_w, "out_b": np.atleast_1d(self.out_b),
            "widths": self.widths, "b_z": self.b_z, "b_r": self.b_r,
            "b_h": self.b_h,
        }

    def layout(self) -> list[tuple[str, int, int]]:
        """Ordered (name, offset, length) for every parameter segment."""
        out, off = [], 0
        arrs = self._segment_arrays()
        for name, _ in _SEGMENTS:
            size = arrs[name].size
            out.append((name, off, size))
            off += size
        return out

    def to_vector(self) -> np.ndarray:
        arrs = self._segment_arrays()
        return np.concatenate([arrs[name].ravel() for name, _ in _SEGMENTS])

    def from_vector(self, vec: np.ndarray) -> None:
        """Load parameters from a flat vector (inverse of to_vector)."""
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.count_parameters(),):
            raise ValueError(f"expected vector of length {self.count_parameters()}, "
                             f"got {vec.shape}")
        arrs = self._segment_arrays()
        off = 0
        for name, _ in _SEGMENTS:
            arr = arrs[name]
            chunk = vec[off:off + arr.size].reshape(arr.shape)
            off += arr.size
            if name == "gate_b":
                self.gate_b = float(chunk[0])
            elif name == "out_b":
                self.out_b = float(chunk[0])
            else:
                setattr(self, name, chunk.copy())
        if np.any(self.widths <= 0.0):
            raise ValueError("all kernel widths must be positive")

    def online_mask(self) -> np.ndarray:
        """Boolean mask over the flat vector selecting the online-updated
        segments (RBF weights/centers, LGRU matrices, gate, readout)."""
        arrs = self._segment_arrays()
        parts = [np.full(arrs[name].size, online, dtype=bool)
                 for name, online in _SEGMENTS]
        return np.concatenate(parts)

    def copy(self) -> "TgrbfNet":
        kw = {k: (v.copy() if isinstance(v, np.ndarray) else v)
              for k, v in self.__dict__.items()}
        return TgrbfNet(**kw)

    # -- checkpoint ---------------------------------------------------------

    def save(self, path) -> None:
        doc = {
            "format": "tgrbf-checkpoint-v1",
            "n_in": self.n_in, "m": self.m, "p": self.p,
            "segments": {name: np.asarray(arr, dtype=float).tolist()
                         for name, arr in self._segment_arrays().items()},
            "h_init": self.h_init.tolist(),
            "gate_frozen": self.gate_frozen,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)

    @classmethod
    def load(cls, path) -> "TgrbfNet":
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format") != "tgrbf-checkpoint-v1":
            raise ValueError(f"not a network checkpoint: {path}")
        seg = {k: np.asarray(v, dtype=float) for k, v in doc["segments"].items()}
        return cls(
            centers=seg["centers"], widths=seg["widths"], rbf_w=seg["rbf_w"],
            W_z=seg["W_z"], b_z=seg["b_z"], W_r=seg["W_r"], b_r=seg["b_r"],
            W_h=seg["W_h"], b_h=seg["b_h"],
            gate_w=seg["gate_w"], gate_b=float(seg["gate_b"][0]),
            out_w=seg["out_w"], out_b=float(seg["out_b"][0]),
            h_init=np.asarray(doc["h_init"], dtype=float),
            gate_frozen=bool(doc.get("gate_frozen", False)),
        )


def random_net(n_in: int, m: int, p: int, rng: np.random.Generator,
               scale: float = 0.3) -> TgrbfNet:
    """Random network for tests and gradient audits.  Gate and LGRU weights
    uniform in [-scale, scale]; gate bias 0.5; clamp gates start mid-range."""
    u = lambda *shape: rng.uniform(-scale, scale, size=shape)
    return TgrbfNet(
        centers=rng.uniform(-1.0, 1.0, size=(m, n_in)),
        widths=rng.uniform(0.5, 1.5, size=m),
        rbf_w=u(m),
        W_z=u(p, n_in + p), b_z=np.full(p, 0.5),
        W_r=u(p, n_in + p), b_r=np.full(p, 0.5),
        W_h=u(p, n_in + p), b_h=np.zeros(p),
        gate_w=u(n_in + p), gate_b=0.5,
        out_w=u(p), out_b=0.0,
        h_init=np.zeros(p),
    )
