"""
Window networks on a flat float64 parameter vector with a hand-derived
backward pass.

Two encoders read a (batch, W, in_dim) window:

- recurrent: linear input projection, single-layer LSTM, additive attention
  over the W hidden states (or the last hidden state when attention is off);
- feedforward: the flattened window through two tanh layers.

A linear or tanh head maps the encoding to the output. With `skip`, a
linear map of the newest input row is added before the head activation;
it always starts at zero.
"""

from dataclasses import dataclass
from typing import Any, Literal, Optional

import numpy as np

from errors import ConfigError, NumericError

Architecture = Literal["recurrent-with-attention", "feedforward"]
Head = Literal["linear", "tanh"]


@dataclass(frozen=True)
class NetworkSpec:
    architecture: Architecture
    window: int
    in_dim: int
    hidden_size: int
    out_dim: int
    head: Head = "linear"
    attention: bool = True
    skip: bool = False

    def __post_init__(self) -> None:
        if self.architecture not in ("recurrent-with-attention", "feedforward"):
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if self.window < 1 or self.hidden_size < 1:
            raise ConfigError("window and hidden_size must be at least 1")
        if self.head not in ("linear", "tanh"):
            raise ConfigError(f"unknown head {self.head!r}")

    @property
    def recurrent(self) -> bool:
        return self.architecture == "recurrent-with-attention"


class ParamLayout:
    """Named, shaped slices of one flat parameter vector."""

    def __init__(self, entries: list[tuple[str, tuple[int, ...]]]):
        self.entries = entries
        self.offsets: dict[str, tuple[int, int, tuple[int, ...]]] = {}
        offset = 0
        for name, shape in entries:
            size = int(np.prod(shape))
            self.offsets[name] = (offset, offset + size, shape)
            offset += size
        self.size = offset

    def views(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        if flat.shape != (self.size,):
            raise ConfigError(
                f"parameter vector has shape {flat.shape}, "
                f"layout expects ({self.size},)"
            )
        return {
            name: flat[start:stop].reshape(shape)
            for name, (start, stop, shape) in self.offsets.items()
        }

    def names(self) -> list[str]:
        return [name for name, _ in self.entries]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _check(value: np.ndarray, layer: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericError(layer)


class WindowNetwork:
    """
    Pure functions of (parameters, inputs); the network object only holds
    the architecture and the parameter layout.
    """

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.layout = self._build_layout()

    def _build_layout(self) -> ParamLayout:
        s = self.spec
        n = s.hidden_size
        entries: list[tuple[str, tuple[int, ...]]] = []
        if s.recurrent:
            entries += [
                ("in_W", (s.in_dim, n)),
                ("in_b", (n,)),
                ("lstm_Wx", (n, 4 * n)),
                ("lstm_Wh", (n, 4 * n)),
                ("lstm_b", (4 * n,)),
            ]
            if s.attention:
                entries += [
                    ("att_W", (n, n)),
                    ("att_b", (n,)),
                    ("att_v", (n,)),
                ]
        else:
            entries += [
                ("ff1_W", (s.window * s.in_dim, n)),
                ("ff1_b", (n,)),
                ("ff2_W", (n, n)),
                ("ff2_b", (n,)),
            ]
        entries += [("out_W", (n, s.out_dim)), ("out_b", (s.out_dim,))]
        if s.skip:
            entries.append(("skip_W", (s.in_dim, s.out_dim)))
        return ParamLayout(entries)

    def init(
        self, rng: np.random.Generator, zero_head: bool = False
    ) -> np.ndarray:
        """
        Uniform in ±1/sqrt(fan-in) per layer; biases share their layer's.
        The skip map starts at zero.
        """
        theta = np.zeros(self.layout.size)
        p = self.layout.views(theta)
        fan_in = {
            "in": self.spec.in_dim,
            "lstm": self.spec.hidden_size,
            "att": self.spec.hidden_size,
            "ff1": self.spec.window * self.spec.in_dim,
            "ff2": self.spec.hidden_size,
            "out": self.spec.hidden_size,
        }
        for name in self.layout.names():
            layer = name.split("_")[0]
            if layer == "skip" or (layer == "out" and zero_head):
                continue
            bound = 1.0 / np.sqrt(fan_in[layer])
            p[name][...] = rng.uniform(-bound, bound, size=p[name].shape)
        return theta

    # -- forward ---------------------------------------------------------

    def _lstm(
        self,
        p: dict[str, np.ndarray],
        u: np.ndarray,
        h0: Optional[np.ndarray] = None,
        c0: Optional[np.ndarray] = None,
    ) -> dict[str, np.ndarray]:
        """Run the cell over u: (B, T, n). Returns per-step tensors."""
        B, T, n = u.shape
        hs = np.zeros((T + 1, B, n))
        cs = np.zeros((T + 1, B, n))
        if h0 is not None:
            hs[0] = h0
            cs[0] = c0
        gates = np.zeros((T, 4, B, n))
        for t in range(T):
            z = u[:, t] @ p["lstm_Wx"] + hs[t] @ p["lstm_Wh"] + p["lstm_b"]
            i = _sigmoid(z[:, :n])
            f = _sigmoid(z[:, n : 2 * n])
            g = np.tanh(z[:, 2 * n : 3 * n])
            o = _sigmoid(z[:, 3 * n :])
            cs[t + 1] = f * cs[t] + i * g
            hs[t + 1] = o * np.tanh(cs[t + 1])
            gates[t] = (i, f, g, o)
        return {"hs": hs, "cs": cs, "gates": gates}

    def forward(
        self, theta: np.ndarray, x: np.ndarray
    ) -> tuple[np.ndarray, dict[str, Any]]:
        """
        Args:
            x: (B, W, in_dim) normalised inputs

        Returns:
            (output (B, out_dim), cache for `backward`)

        Raises:
            NumericError: a layer produced a non-finite value
        """
        p = self.layout.views(theta)
        cache: dict[str, Any] = {"x": x}
        if self.spec.recurrent:
            u = x @ p["in_W"] + p["in_b"]
            _check(u, "input")
            run = self._lstm(p, u)
            H = run["hs"][1:].transpose(1, 0, 2)
            _check(H, "lstm")
            cache.update(u=u, H=H, **run)
            if self.spec.attention:
                s = np.tanh(H @ p["att_W"] + p["att_b"])
                e = s @ p["att_v"]
                e = e - e.max(axis=1, keepdims=True)
                w = np.exp(e)
                alpha = w / w.sum(axis=1, keepdims=True)
                ctx = np.einsum("bw,bwn->bn", alpha, H)
                _check(ctx, "attention")
                cache.update(s=s, alpha=alpha)
            else:
                ctx = H[:, -1]
        else:
            xf = x.reshape(x.shape[0], -1)
            a1 = np.tanh(xf @ p["ff1_W"] + p["ff1_b"])
            _check(a1, "hidden1")
            ctx = np.tanh(a1 @ p["ff2_W"] + p["ff2_b"])
            _check(ctx, "hidden2")
            cache.update(xf=xf, a1=a1)
        cache["ctx"] = ctx
        y = self.head(theta, ctx, x[:, -1])
        cache["y"] = y
        return y, cache

    def head(
        self, theta: np.ndarray, ctx: np.ndarray, newest: Optional[np.ndarray] = None
    ) -> np.ndarray:
        """Output from the encoding and, with a skip map, the newest input row."""
        p = self.layout.views(theta)
        y = ctx @ p["out_W"] + p["out_b"]
        if self.spec.skip:
            if newest is None:
                raise ConfigError("a skip head needs the newest input row")
            y = y + newest @ p["skip_W"]
        if self.spec.head == "tanh":
            y = np.tanh(y)
        _check(y, "output")
        return y

    def predict(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        return self.forward(theta, x)[0]

    # -- backward --------------------------------------------------------

    def backward(
        self, theta: np.ndarray, cache: dict[str, Any], dy: np.ndarray
    ) -> np.ndarray:
        """Gradient of sum(dy * y) with respect to every parameter."""
        p = self.layout.views(theta)
        grad = np.zeros_like(theta)
        gv = self.layout.views(grad)
        ctx, y = cache["ctx"], cache["y"]

        dpre = dy * (1.0 - y**2) if self.spec.head == "tanh" else dy
        gv["out_W"][...] = ctx.T @ dpre
        gv["out_b"][...] = dpre.sum(axis=0)
        if self.spec.skip:
            gv["skip_W"][...] = cache["x"][:, -1].T @ dpre
        dctx = dpre @ p["out_W"].T

        if self.spec.recurrent:
            self._backward_recurrent(p, gv, cache, dctx)
        else:
            a1, xf = cache["a1"], cache["xf"]
            dz2 = dctx * (1.0 - ctx**2)
            gv["ff2_W"][...] = a1.T @ dz2
            gv["ff2_b"][...] = dz2.sum(axis=0)
            dz1 = (dz2 @ p["ff2_W"].T) * (1.0 - a1**2)
            gv["ff1_W"][...] = xf.T @ dz1
            gv["ff1_b"][...] = dz1.sum(axis=0)
        return grad

    def _backward_recurrent(
        self,
        p: dict[str, np.ndarray],
        gv: dict[str, np.ndarray],
        cache: dict[str, Any],
        dctx: np.ndarray,
    ) -> None:
        x, u, H = cache["x"], cache["u"], cache["H"]
        hs, cs, gates = cache["hs"], cache["cs"], cache["gates"]
        B, W, n = H.shape

        dH = np.zeros_like(H)
        if self.spec.attention:
            s, alpha = cache["s"], cache["alpha"]
            dalpha = np.einsum("bn,bwn->bw", dctx, H)
            dH += alpha[..., None] * dctx[:, None, :]
            de = alpha * (dalpha - np.sum(alpha * dalpha, axis=1, keepdims=True))
            gv["att_v"][...] = np.einsum("bw,bwn->n", de, s)
            dpa = de[..., None] * p["att_v"] * (1.0 - s**2)
            gv["att_W"][...] = np.einsum("bwn,bwm->nm", H, dpa)
            gv["att_b"][...] = dpa.sum(axis=(0, 1))
            dH += dpa @ p["att_W"].T
        else:
            dH[:, -1] += dctx

        gWx = np.zeros_like(p["lstm_Wx"])
        gWh = np.zeros_like(p["lstm_Wh"])
        gb = np.zeros_like(p["lstm_b"])
        du = np.zeros_like(u)
        dh_next = np.zeros((B, n))
        dc_next = np.zeros((B, n))
        for t in reversed(range(W)):
            i, f, g, o = gates[t]
            tc = np.tanh(cs[t + 1])
            dh = dH[:, t] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc**2)
            dz = np.concatenate(
                [
                    dc * g * i * (1.0 - i),
                    dc * cs[t] * f * (1.0 - f),
                    dc * i * (1.0 - g**2),
                    do * o * (1.0 - o),
                ],
                axis=1,
            )
            dc_next = dc * f
            gWx += u[:, t].T @ dz
            gWh += hs[t].T @ dz
            gb += dz.sum(axis=0)
            du[:, t] = dz @ p["lstm_Wx"].T
            dh_next = dz @ p["lstm_Wh"].T
        gv["lstm_Wx"][...] = gWx
        gv["lstm_Wh"][...] = gWh
        gv["lstm_b"][...] = gb
        gv["in_W"][...] = np.einsum("bwd,bwn->dn", x, du)
        gv["in_b"][...] = du.sum(axis=(0, 1))

    # -- batched inference with a shared prefix ---------------------------

    def encode_with_prefix(
        self, theta: np.ndarray, prefix: np.ndarray, tail: np.ndarray
    ) -> np.ndarray:
        """
        Encode K windows that share their first P steps.

        Args:
            prefix: (P, in_dim) steps common to every window (P may be 0)
            tail: (K, Q, in_dim) candidate-specific steps, P + Q = W

        Returns:
            (K, hidden) encodings, equal up to rounding to encoding each
            concatenated window separately
        """
        if not self.spec.recurrent:
            K = tail.shape[0]
            full = np.concatenate(
                [np.broadcast_to(prefix, (K, *prefix.shape)), tail], axis=1
            )
            return self.forward(theta, full)[1]["ctx"]

        p = self.layout.views(theta)
        K, Q, _ = tail.shape
        n = self.spec.hidden_size
        P = prefix.shape[0]
        if P > 0:
            pre = self._lstm(p, (prefix @ p["in_W"] + p["in_b"])[None])
            Hp = pre["hs"][1:, 0]
            h0 = np.broadcast_to(pre["hs"][-1], (K, n))
            c0 = np.broadcast_to(pre["cs"][-1], (K, n))
        else:
            Hp = np.zeros((0, n))
            h0 = c0 = None
        if Q > 0:
            run = self._lstm(p, tail @ p["in_W"] + p["in_b"], h0, c0)
            Ht = run["hs"][1:].transpose(1, 0, 2)
        else:
            Ht = np.zeros((K, 0, n))
        _check(Ht, "lstm")

        if not self.spec.attention:
            return Ht[:, -1] if Q > 0 else np.broadcast_to(Hp[-1], (K, n))

        ep = np.tanh(Hp @ p["att_W"] + p["att_b"]) @ p["att_v"]
        et = np.tanh(Ht @ p["att_W"] + p["att_b"]) @ p["att_v"]
        m = np.maximum(
            ep.max(initial=-np.inf), et.max(axis=1, initial=-np.inf)
        )
        wp = np.exp(ep[None, :] - m[:, None])
        wt = np.exp(et - m[:, None])
        z = wp.sum(axis=1) + wt.sum(axis=1)
        ctx = (wp @ Hp + np.einsum("kq,kqn->kn", wt, Ht)) / z[:, None]
        _check(ctx, "attention")
        return ctx
