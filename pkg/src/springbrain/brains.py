"""Controller ("brain") models.

Four memoryless controllers drive a body:

* LinearInputLayer (LIL) — affine map of the task input.
* Mlp — three affine layers with ReLU between layers 1-2 and 2-3,
  hidden width 128.
* SineWaveGenerator (SWG) — per-spring rest-length modulation
  l * (1 + A*sin(omega*t + phi)) with trainable A, phi and fixed omega=2*pi.
* FeedbackLayer (FL) — affine map from current spring lengths to modulated
  rest lengths, closing the loop without any clock.

``params()`` returns the live arrays keyed by slot name, so an in-place
parameter update is immediately visible to the holder.  Weight matrices are
stored input-major, (in, out).
"""

from __future__ import annotations

import json

import numpy as np

from . import autodiff as ad

OMEGA = 2.0 * np.pi  # SWG frequency, fixed and non-trainable

MLP_HIDDEN = 128


class BrainConfigError(ValueError):
    pass


def _affine(pv, prefix, u):
    return ad.add(ad.matmul(u, pv[prefix + ".W"]), pv[prefix + ".b"])


class LinearInputLayer:
    kind = "lil"

    def __init__(self, w, b, slot_prefix="lil"):
        self.w = np.asarray(w, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.slot_prefix = slot_prefix
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[1],):
            raise BrainConfigError("LIL shapes inconsistent")

    @classmethod
    def init(cls, in_dim, out_dim, seed, slot_prefix="lil"):
        rng = np.random.default_rng(seed)
        return cls(rng.normal(size=(in_dim, out_dim)), rng.normal(size=out_dim),
                   slot_prefix)

    def params(self):
        return {f"{self.slot_prefix}.W": self.w, f"{self.slot_prefix}.b": self.b}

    def forward(self, pv, u):
        if (u.value.shape[-1] if isinstance(u, ad.Var) else np.shape(u)[-1]) != self.w.shape[0]:
            raise BrainConfigError("LIL input dimension mismatch")
        return _affine(pv, self.slot_prefix, u)


class Mlp:
    kind = "mlp"

    def __init__(self, layers):
        # layers: [(W1, b1), (W2, b2), (W3, b3)], each W (in, out)
        if len(layers) != 3:
            raise BrainConfigError("Mlp requires exactly three layers")
        self.layers = [(np.asarray(w, float), np.asarray(b, float)) for w, b in layers]
        for (w1, _), (w2, _) in zip(self.layers, self.layers[1:]):
            if w1.shape[1] != w2.shape[0]:
                raise BrainConfigError("Mlp inner dimensions disagree")

    @classmethod
    def init(cls, in_dim, out_dim, seed, hidden=MLP_HIDDEN):
        rng = np.random.default_rng(seed)
        dims = [in_dim, hidden, hidden, out_dim]
        layers = []
        for fan_in, fan_out in zip(dims, dims[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))  # Xavier uniform
            layers.append((rng.uniform(-bound, bound, size=(fan_in, fan_out)),
                           np.zeros(fan_out)))
        return cls(layers)

    def params(self):
        out = {}
        for n, (w, b) in enumerate(self.layers, start=1):
            out[f"mlp.W{n}"] = w
            out[f"mlp.b{n}"] = b
        return out

    def forward(self, pv, u):
        h = ad.relu(ad.add(ad.matmul(u, pv["mlp.W1"]), pv["mlp.b1"]))
        h = ad.relu(ad.add(ad.matmul(h, pv["mlp.W2"]), pv["mlp.b2"]))
        return ad.add(ad.matmul(h, pv["mlp.W3"]), pv["mlp.b3"])


class SineWaveGenerator:
    kind = "swg"

    def __init__(self, amplitude, phase, omega=OMEGA):
        self.amplitude = np.asarray(amplitude, dtype=float)
        self.phase = np.asarray(phase, dtype=float)
        self.omega = float(omega)

    @classmethod
    def init(cls, n_springs, seed, amplitude_init=0.5):
        if amplitude_init not in (0.4, 0.5):
            raise BrainConfigError("amplitude init must be 0.4 or 0.5")
        rng = np.random.default_rng(seed)
        return cls(np.full(n_springs, amplitude_init),
                   rng.uniform(0.0, 2.0 * np.pi, size=n_springs))

    def params(self):
        return {"swg.A": self.amplitude, "swg.phi": self.phase}

    def modulate(self, pv, t, rest_lengths):
        """l * (1 + A*sin(omega*t + phi)); gradients reach A, phi, and l."""
        wave = ad.sin(ad.add(pv["swg.phi"], self.omega * t))
        return ad.mul(rest_lengths, ad.add(1.0, ad.mul(pv["swg.A"], wave)))

    def control(self, pv, rest_lengths):
        """Rollout control callback: (t, lengths) -> modulated rest lengths."""
        return lambda t, lengths: self.modulate(pv, t, rest_lengths)


class FeedbackLayer:
    kind = "fl"

    def __init__(self, w, b):
        self.w = np.asarray(w, dtype=float)
        self.b = np.asarray(b, dtype=float)
        if self.w.shape[0] != self.w.shape[1] or self.b.shape != (self.w.shape[1],):
            raise BrainConfigError("FL maps spring lengths to per-spring commands")

    @classmethod
    def init(cls, n_springs, seed):
        rng = np.random.default_rng(seed)
        return cls(rng.normal(size=(n_springs, n_springs)), rng.normal(size=n_springs))

    def params(self):
        return {"fl.W": self.w, "fl.b": self.b}

    def forward(self, pv, lengths):
        return _affine(pv, "fl", lengths)

    def control(self, pv):
        return lambda t, lengths: self.forward(pv, lengths)


def init_brain(kind, seed, *, in_dim=None, out_dim=None, n_springs=None,
               amplitude_init=0.5):
    if kind == "lil":
        return LinearInputLayer.init(in_dim, out_dim, seed)
    if kind == "mlp":
        return Mlp.init(in_dim, out_dim, seed)
    if kind == "swg":
        return SineWaveGenerator.init(n_springs, seed, amplitude_init)
    if kind == "fl":
        return FeedbackLayer.init(n_springs, seed)
    raise BrainConfigError(f"unknown brain kind '{kind}'")


# ---------------------------------------------------------------- checkpoints

def brain_to_doc(brain, seed=None):
    params = brain.params()
    return {
        "kind": brain.kind,
        "seed": seed,
        "shapes": {k: list(v.shape) for k, v in params.items()},
        "values": {k: v.reshape(-1).tolist() for k, v in params.items()},
        "omega": getattr(brain, "omega", None),
    }


def brain_from_doc(doc):
    vals = {k: np.array(v, dtype=float).reshape(doc["shapes"][k])
            for k, v in doc["values"].items()}
    kind = doc["kind"]
    if kind == "lil":
        prefix = next(iter(doc["shapes"])).split(".")[0]
        return LinearInputLayer(vals[f"{prefix}.W"], vals[f"{prefix}.b"], prefix)
    if kind == "mlp":
        return Mlp([(vals[f"mlp.W{n}"], vals[f"mlp.b{n}"]) for n in (1, 2, 3)])
    if kind == "swg":
        return SineWaveGenerator(vals["swg.A"], vals["swg.phi"], doc["omega"])
    if kind == "fl":
        return FeedbackLayer(vals["fl.W"], vals["fl.b"])
    raise BrainConfigError(f"unknown brain kind '{kind}'")


def save_brain(path, brain, seed=None):
    with open(path, "w") as fh:
        json.dump(brain_to_doc(brain, seed), fh)


def load_brain(path):
    with open(path) as fh:
        return brain_from_doc(json.load(fh))
