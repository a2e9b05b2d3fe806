"""Layer stacks: descriptors, shape tracing, receptive fields, training.

A stack is an ordered list of :class:`LayerSpec`. Two stacks ship with the
package:

* ``compact_architecture`` — the small trainable encoder-decoder (reflection
  pad, strided/dilated 3x3 convolutions, ELU, a linear classifier conv, and
  one x2 sub-pixel shuffle). It exercises every layer kind while training in
  minutes on a CPU.
* ``reference_architecture`` — the full 128x128 face-parsing encoder-decoder,
  kept as a weight-free descriptor for shape and receptive-field auditing.
  It additionally uses batch-norm rows and one channel concatenation, which
  the trainable path deliberately does not implement.

Descriptor text format: one layer per line,

    kind kh kw stride dilation cin cout ratio

where ``kind`` is pad|conv|elu|shuffle|classifier|bn|concat|dropout. For
``pad`` the kernel columns hold the pad amounts; ``shuffle`` uses ``ratio``
as its upscaling factor; ``concat`` uses ``ratio`` as the 1-based index of
the earlier layer whose output is concatenated; ``dropout`` stores its rate
in ``ratio`` as a percentage.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import layers
from .errors import DimensionError, FormatError
from .tensorio import read_checkpoint, write_checkpoint

KINDS = ("pad", "conv", "elu", "shuffle", "classifier", "bn", "concat", "dropout")
TRAINABLE_KINDS = ("pad", "conv", "elu", "shuffle", "classifier", "dropout")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kh: int = 0
    kw: int = 0
    stride: int = 1
    dilation: int = 1
    cin: int = 0
    cout: int = 0
    ratio: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DimensionError(f"unsupported layer kind {self.kind!r}")
        if self.kind in ("conv", "classifier"):
            if self.kh < 1 or self.kw < 1 or self.cin < 1 or self.cout < 1:
                raise DimensionError(f"{self.kind} needs kernel and channel extents")
            if self.stride < 1 or self.dilation < 1:
                raise DimensionError("stride and dilation must be >= 1")
            if self.kind == "classifier" and (
                self.stride != 1
                or self.dilation != 1
                or self.kh % 2 == 0
                or self.kw % 2 == 0
            ):
                raise DimensionError(
                    "classifier conv must be odd-sized, stride 1, dilation 1"
                )
        elif self.kind == "pad":
            if self.kh < 0 or self.kw < 0:
                raise DimensionError("pad amounts must be >= 0")
        elif self.kind == "shuffle":
            if self.ratio < 1:
                raise DimensionError("shuffle ratio must be >= 1")
        elif self.kind == "bn":
            if self.cin < 1:
                raise DimensionError("bn needs a channel count")
        elif self.kind == "concat":
            if self.ratio < 1:
                raise DimensionError("concat needs a 1-based source layer index")
        elif self.kind == "dropout":
            if not 0 <= self.ratio < 100:
                raise DimensionError("dropout percentage must lie in [0, 100)")

    @property
    def dropout_rate(self):
        return self.ratio / 100.0

    def to_line(self):
        return (
            f"{self.kind} {self.kh} {self.kw} {self.stride} "
            f"{self.dilation} {self.cin} {self.cout} {self.ratio}"
        )


def parse_descriptor(text):
    specs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) != 8:
            raise FormatError(f"descriptor line {lineno}: expected 8 fields")
        try:
            nums = [int(t) for t in tokens[1:]]
        except ValueError as exc:
            raise FormatError(f"descriptor line {lineno}: non-integer field") from exc
        try:
            specs.append(LayerSpec(tokens[0], *nums))
        except DimensionError as exc:
            raise FormatError(f"descriptor line {lineno}: {exc}") from exc
    return specs


def format_descriptor(specs):
    return "\n".join(s.to_line() for s in specs) + "\n"


def shape_check(specs, input_shape):
    """Propagate (C, H, W) through the stack; returns per-layer shapes.

    Raises on any incompatibility: channel mismatches, kernels larger than
    the running spatial extent, indivisible shuffles, misaligned concats.
    """
    c, h, w = input_shape
    if c < 1 or h < 1 or w < 1:
        raise DimensionError("input extents must be positive")
    shapes = []
    for idx, s in enumerate(specs):
        if s.kind == "pad":
            c, h, w = c, h + 2 * s.kh, w + 2 * s.kw
        elif s.kind in ("conv", "classifier"):
            if s.cin != c:
                raise DimensionError(
                    f"layer {idx + 1}: expects {s.cin} channels, got {c}"
                )
            ph = (s.kh - 1) // 2 if s.kind == "classifier" else 0
            pw = (s.kw - 1) // 2 if s.kind == "classifier" else 0
            keff_h = 1 + (s.kh - 1) * s.dilation
            keff_w = 1 + (s.kw - 1) * s.dilation
            hout = (h + 2 * ph - keff_h) // s.stride + 1
            wout = (w + 2 * pw - keff_w) // s.stride + 1
            if hout < 1 or wout < 1:
                raise DimensionError(f"layer {idx + 1}: kernel exceeds input")
            c, h, w = s.cout, hout, wout
        elif s.kind == "shuffle":
            if c % (s.ratio**2) != 0:
                raise DimensionError(
                    f"layer {idx + 1}: shuffle ratio {s.ratio} does not divide {c}"
                )
            c, h, w = c // s.ratio**2, h * s.ratio, w * s.ratio
        elif s.kind == "bn":
            if s.cin != c:
                raise DimensionError(f"layer {idx + 1}: bn channels mismatch")
        elif s.kind == "concat":
            if s.ratio > idx:
                raise DimensionError(f"layer {idx + 1}: concat source not yet built")
            sc, sh, sw = shapes[s.ratio - 1]
            if (sh, sw) != (h, w):
                raise DimensionError(f"layer {idx + 1}: concat spatial mismatch")
            c = c + sc
        # elu / dropout keep shapes
        shapes.append((c, h, w))
    return shapes


def param_count(specs):
    total = 0
    for s in specs:
        if s.kind in ("conv", "classifier"):
            total += s.cout * s.cin * s.kh * s.kw + s.cout
        elif s.kind == "bn":
            total += 2 * s.cin
    return total


@dataclass(frozen=True)
class FieldTrace:
    kind: str
    rf: tuple  # (rf_h, rf_w) in input pixels
    jump: tuple  # (jump_h, jump_w), exact fractions


def receptive_field(specs):
    """Per-layer receptive field and jump, plus the final field extent.

    Recurrence per spatial layer: ``rf += (k_eff - 1) * jump`` with
    ``k_eff = 1 + (k - 1) * dilation`` and ``jump *= stride``; a sub-pixel
    shuffle divides the jump by its ratio. Pointwise layers (elu, bn,
    dropout) pass through; a concat takes the larger field of its two
    branches, which must agree on jump.
    """
    rf = (Fraction(1), Fraction(1))
    jump = (Fraction(1), Fraction(1))
    records = []
    for idx, s in enumerate(specs):
        if s.kind in ("conv", "classifier"):
            keff_h = 1 + (s.kh - 1) * s.dilation
            keff_w = 1 + (s.kw - 1) * s.dilation
            rf = (rf[0] + (keff_h - 1) * jump[0], rf[1] + (keff_w - 1) * jump[1])
            jump = (jump[0] * s.stride, jump[1] * s.stride)
        elif s.kind == "shuffle":
            jump = (jump[0] / s.ratio, jump[1] / s.ratio)
        elif s.kind == "concat":
            if s.ratio > idx:
                raise DimensionError(f"layer {idx + 1}: concat source not yet built")
            src = records[s.ratio - 1]
            if src.jump != jump:
                raise DimensionError(
                    f"layer {idx + 1}: concat branches disagree on jump"
                )
            rf = (max(rf[0], src.rf[0]), max(rf[1], src.rf[1]))
        elif s.kind not in ("pad", "elu", "bn", "dropout"):
            raise DimensionError(f"unsupported layer kind {s.kind!r}")
        records.append(FieldTrace(kind=s.kind, rf=rf, jump=jump))
    final = tuple(int(v) if v.denominator == 1 else float(v) for v in rf)
    return records, final


# Receptive field claimed for the bundled reference architecture by its
# original description; the traced value is reported next to it, and any
# difference is surfaced as a finding rather than an error.
REFERENCE_CLAIMED_RF = 121


class LayerStack:
    """Ordered layers plus their weights; supports forward/backward/training.

    Only pad/conv/elu/shuffle/classifier/dropout layers are trainable;
    descriptor-only kinds (bn, concat) are rejected by ``forward``.
    """

    def __init__(self, specs):
        self.specs = list(specs)
        self.weights = {}
        self._caches = None
        for idx, s in enumerate(self.specs):
            if s.kind in ("conv", "classifier"):
                self.weights[f"layer{idx}.weight"] = np.zeros(
                    (s.cout, s.cin, s.kh, s.kw)
                )
                self.weights[f"layer{idx}.bias"] = np.zeros(s.cout)

    @property
    def descriptor_text(self):
        return format_descriptor(self.specs)

    def init_params(self, rng):
        """Fan-balanced uniform init: limit = sqrt(6 / (fan_in + fan_out))."""
        for idx, s in enumerate(self.specs):
            if s.kind in ("conv", "classifier"):
                fan_in = s.cin * s.kh * s.kw
                fan_out = s.cout * s.kh * s.kw
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                self.weights[f"layer{idx}.weight"] = rng.uniform(
                    -limit, limit, size=(s.cout, s.cin, s.kh, s.kw)
                )
                self.weights[f"layer{idx}.bias"] = np.zeros(s.cout)
        return self

    def parameters(self):
        return [(name, self.weights[name]) for name in sorted(self.weights)]

    def set_parameters(self, named):
        for name, value in named:
            if name not in self.weights:
                raise DimensionError(f"unknown parameter {name}")
            if self.weights[name].shape != value.shape:
                raise DimensionError(
                    f"parameter {name} shape {value.shape} != "
                    f"{self.weights[name].shape}"
                )
            self.weights[name] = np.asarray(value, dtype=np.float64)

    def forward(self, x, train=False, rng=None):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4:
            raise DimensionError(f"stack input must be N x C x H x W, got {x.shape}")
        caches = []
        for idx, s in enumerate(self.specs):
            if s.kind == "pad":
                x, cache = layers.reflect_pad_forward(x, s.kh, s.kw)
            elif s.kind == "conv":
                x, cache = layers.conv_forward(
                    x,
                    self.weights[f"layer{idx}.weight"],
                    self.weights[f"layer{idx}.bias"],
                    stride=s.stride,
                    dilation=s.dilation,
                )
            elif s.kind == "classifier":
                x, pad_cache = layers.zero_pad_forward(
                    x, (s.kh - 1) // 2, (s.kw - 1) // 2
                )
                x, conv_cache = layers.conv_forward(
                    x,
                    self.weights[f"layer{idx}.weight"],
                    self.weights[f"layer{idx}.bias"],
                    stride=1,
                    dilation=s.dilation,
                )
                cache = (pad_cache, conv_cache)
            elif s.kind == "elu":
                x, cache = layers.elu_forward(x)
            elif s.kind == "shuffle":
                x, cache = layers.shuffle_forward(x, s.ratio)
            elif s.kind == "dropout":
                if train:
                    if rng is None:
                        raise DimensionError("dropout in training mode needs an rng")
                    x, cache = layers.dropout_forward(x, s.dropout_rate, rng)
                else:
                    cache = None
            else:
                raise DimensionError(f"layer kind {s.kind!r} is not trainable")
            caches.append(cache)
        self._caches = caches
        return x

    def backward(self, dout, need_input_grad=True):
        """Parameter gradients plus dL/d input for the cached forward pass.

        With ``need_input_grad`` off, propagation stops once the deepest
        parameterized layer has its gradients (the returned input gradient
        is None), which skips useless work when training on fixed images.
        """
        if self._caches is None:
            raise DimensionError("backward called without a cached forward pass")
        first_param = min(
            (i for i, s in enumerate(self.specs) if s.kind in ("conv", "classifier")),
            default=0,
        )
        grads = {}
        dx = np.asarray(dout, dtype=np.float64)
        for idx in range(len(self.specs) - 1, -1, -1):
            s = self.specs[idx]
            cache = self._caches[idx]
            last_needed = not need_input_grad and idx == first_param
            if s.kind == "pad":
                dx = layers.reflect_pad_backward(dx, cache)
            elif s.kind == "conv":
                dx, dw, db = layers.conv_backward(dx, cache, need_dx=not last_needed)
                grads[f"layer{idx}.weight"] = dw
                grads[f"layer{idx}.bias"] = db
            elif s.kind == "classifier":
                pad_cache, conv_cache = cache
                dx, dw, db = layers.conv_backward(
                    dx, conv_cache, need_dx=not last_needed
                )
                grads[f"layer{idx}.weight"] = dw
                grads[f"layer{idx}.bias"] = db
                if dx is not None:
                    dx = layers.zero_pad_backward(dx, pad_cache)
            elif s.kind == "elu":
                dx = layers.elu_backward(dx, cache)
            elif s.kind == "shuffle":
                dx = layers.shuffle_backward(dx, cache)
            elif s.kind == "dropout":
                dx = layers.dropout_backward(dx, cache)
            if last_needed:
                self._caches = None
                return grads, None
        self._caches = None
        return grads, dx

    def save(self, path):
        write_checkpoint(self.descriptor_text, self.parameters(), path)

    @classmethod
    def load(cls, path):
        descriptor, entries = read_checkpoint(path)
        stack = cls(parse_descriptor(descriptor))
        stack.set_parameters(entries)
        return stack


def compact_architecture(num_classes=3, base_channels=16, dropout_rate=0.0):
    """The small trainable encoder-decoder (input N x 3 x H x W, H, W even).

    Downsamples once with stride 2, widens the view with a dilated block,
    classifies into num_classes * 4 channels and shuffles back to full
    resolution.
    """
    bc = base_channels
    specs = [
        LayerSpec("pad", 1, 1),
        LayerSpec("conv", 3, 3, 1, 1, 3, bc),
        LayerSpec("elu"),
        LayerSpec("pad", 1, 1),
        LayerSpec("conv", 3, 3, 2, 1, bc, 2 * bc),
        LayerSpec("elu"),
        LayerSpec("pad", 2, 2),
        LayerSpec("conv", 3, 3, 1, 2, 2 * bc, 2 * bc),
        LayerSpec("elu"),
    ]
    if dropout_rate > 0.0:
        specs.append(LayerSpec("dropout", ratio=int(round(dropout_rate * 100))))
    specs += [
        LayerSpec("classifier", 3, 3, 1, 1, 2 * bc, num_classes * 4),
        LayerSpec("shuffle", ratio=2),
    ]
    return specs


def reference_architecture(num_classes=3):
    """Descriptor of the full 128x128 encoder-decoder (weight-free audit)."""

    def conv(cin, cout, stride=1, dilation=1):
        return LayerSpec("conv", 3, 3, stride, dilation, cin, cout)

    def pad(p):
        return LayerSpec("pad", p, p)

    def bn(c):
        return LayerSpec("bn", cin=c, cout=c)

    elu = LayerSpec("elu")
    return [
        pad(1), conv(3, 64), elu,                          # 1-3
        pad(1), conv(64, 128, stride=2), elu, bn(128),     # 4-7
        pad(1), conv(128, 128), elu, bn(128),              # 8-11
        pad(1), conv(128, 128), elu, bn(128),              # 12-15
        pad(1), conv(128, 256, stride=2), elu, bn(256),    # 16-19
        pad(4), conv(256, 256, dilation=4), elu, bn(256),  # 20-23
        pad(3), conv(256, 256, dilation=3), elu, bn(256),  # 24-27
        LayerSpec("concat", ratio=19),                     # join both encoders
        pad(1), conv(512, 512), elu, bn(512),              # 28-31
        LayerSpec("shuffle", ratio=2),                     # 32
        pad(1), conv(128, 128), elu, bn(128),              # 33-36
        pad(1), conv(128, 128), elu, bn(128),              # 37-40
        LayerSpec("shuffle", ratio=2),                     # 41
        pad(1), conv(32, 32), elu,                         # 42-44
        pad(1), conv(32, 32), elu,                         # 45-47
        LayerSpec("classifier", 3, 3, 1, 1, 32, num_classes),  # 48
    ]
