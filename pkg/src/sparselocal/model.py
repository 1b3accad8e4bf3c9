"""The full model: feature extractor, weight generator, gate, linear head.

A sample carries two representations. The rich one (image pixels, token
sequence, raw feature vector) feeds the weight generator network, which
emits one dense weight vector per sample (one per class for multiclass
problems). The gate keeps exactly k of those weights; the prediction is
the inner product of the gated weights with the simplified
representation, so every prediction decomposes into k named, signed
contributions.

Two reference variants live here as well: the dense variant that skips
the gate entirely, and a plain classifier with the same extractor stack
whose last layer outputs class logits directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import gate as gt
from .errors import GateExhaustedError, ShapeError


@dataclass
class ModelConfig:
    """Architecture choices; extractor is a kind-tagged dict (see _build_extractor)."""

    d: int
    k: int
    extractor: dict
    fc_layers: int = 1  # hidden layers between extractor and weight head
    fc_width: int = 128
    num_classes: int = 2
    tau_coarse: float = 1.0
    tau_fine: float = 0.1

    def __post_init__(self):
        if not 1 <= self.k <= self.d:
            raise ValueError(f"k must satisfy 1 <= k <= d, got k={self.k}, d={self.d}")
        if self.fc_layers < 1:
            raise ValueError("at least one fully-connected layer is required")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if not self.tau_coarse > self.tau_fine > 0:
            raise ValueError("temperatures must satisfy tau_coarse > tau_fine > 0")

    @property
    def heads(self):
        return 1 if self.num_classes == 2 else self.num_classes

    def to_dict(self):
        return {
            "d": self.d,
            "k": self.k,
            "extractor": dict(self.extractor),
            "fc_layers": self.fc_layers,
            "fc_width": self.fc_width,
            "num_classes": self.num_classes,
            "tau_coarse": self.tau_coarse,
            "tau_fine": self.tau_fine,
        }

    @classmethod
    def from_dict(cls, payload):
        return cls(**payload)


@dataclass
class Explanation:
    """Ranked open-gate features with signed weights, plus the prediction."""

    prediction: float
    entries: list  # (feature_index, feature_name, weight), |weight| descending
    mode: str
    sample_id: object = None

    @property
    def indices(self):
        return [e[0] for e in self.entries]


class _Linear:
    def __init__(self, n_in, n_out, rng, std=None):
        if std is None:
            std = math.sqrt(2.0 / n_in)
        self.weight = ad.Tensor(rng.normal(0.0, std, size=(n_in, n_out)), requires_grad=True)
        self.bias = ad.Tensor(np.zeros((1, n_out)), requires_grad=True)

    def __call__(self, x):
        # bias broadcast over rows realized as ones @ bias, keeping add shape-strict
        ones = ad.Tensor(np.ones((x.data.shape[0], 1)))
        return ad.matmul(x, self.weight) + ad.matmul(ones, self.bias)

    def params(self, prefix):
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


class _ConvBlock:
    """convolution (3x3, stride 1, pad 1) -> relu -> 2x2 max pool."""

    def __init__(self, c_in, c_out, rng):
        std = math.sqrt(2.0 / (c_in * 9))
        self.kernels = ad.Tensor(rng.normal(0.0, std, size=(c_out, c_in, 3, 3)), requires_grad=True)

    def __call__(self, x):
        return ad.max_pool2d(ad.relu(ad.conv2d(x, self.kernels, stride=1, padding=1)), 2)

    def params(self, prefix):
        return {f"{prefix}.kernels": self.kernels}


class ImageExtractor:
    """Stacked convolution blocks over (channels, height, width) maps."""

    stackable = True

    def __init__(self, in_shape, channels, rng):
        self.in_shape = tuple(int(v) for v in in_shape)
        self.blocks = []
        c = self.in_shape[0]
        for c_out in channels:
            self.blocks.append(_ConvBlock(c, int(c_out), rng))
            c = int(c_out)
        probe = self(ad.Tensor(np.zeros((1, *self.in_shape))))
        self.out_dim = probe.data.shape[1]

    def __call__(self, x):
        h = x
        for block in self.blocks:
            h = block(h)
        return h.reshape((h.data.shape[0], -1))

    def params(self):
        out = {}
        for i, block in enumerate(self.blocks):
            out.update(block.params(f"extractor.block{i}"))
        return out


class VectorExtractor:
    """Pass-through for samples whose rich representation is already a flat vector."""

    stackable = True

    def __init__(self, dim):
        self.dim = int(dim)
        self.out_dim = self.dim

    def __call__(self, x):
        return x

    def params(self):
        return {}


class TextExtractor:
    """Embedding, parallel 1-d convolutions of several widths, global max pooling.

    Sequences shorter than the widest filter are padded with ``pad_index``
    (the out-of-vocabulary id). Samples are encoded one at a time because
    sequence lengths differ.
    """

    stackable = False

    def __init__(self, vocab_size, rng, embed_dim=64, filter_widths=(3, 4, 5), filters=32, pad_index=0):
        self.embed_dim = int(embed_dim)
        self.filter_widths = tuple(int(w) for w in filter_widths)
        self.filters = int(filters)
        self.pad_index = int(pad_index)
        self.embed = ad.Tensor(rng.normal(0.0, 0.1, size=(vocab_size, self.embed_dim)), requires_grad=True)
        self.kernels = [
            ad.Tensor(
                rng.normal(0.0, math.sqrt(2.0 / (w * self.embed_dim)), size=(self.filters, 1, w, self.embed_dim)),
                requires_grad=True,
            )
            for w in self.filter_widths
        ]
        self.out_dim = self.filters * len(self.filter_widths)

    def encode(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        min_len = max(self.filter_widths)
        if ids.size < min_len:
            ids = np.concatenate([ids, np.full(min_len - ids.size, self.pad_index, dtype=np.int64)])
        emb = ad.gather_rows(self.embed, ids)
        grid = emb.reshape((1, 1, ids.size, self.embed_dim))
        pooled = []
        for kernels in self.kernels:
            conv = ad.relu(ad.conv2d(grid, kernels))
            span = conv.data.shape[2]
            pooled.append(ad.max_pool2d(conv, (span, 1)).reshape((1, self.filters)))
        return ad.concat(pooled, axis=1)

    def params(self):
        out = {"extractor.embed": self.embed}
        for w, kernels in zip(self.filter_widths, self.kernels):
            out[f"extractor.conv{w}.kernels"] = kernels
        return out


def _build_extractor(spec, rng):
    kind = spec.get("kind")
    if kind == "image":
        return ImageExtractor(spec["in_shape"], spec.get("channels", (16, 32, 64)), rng)
    if kind == "vector":
        return VectorExtractor(spec["dim"])
    if kind == "text":
        return TextExtractor(
            spec["vocab_size"],
            rng,
            embed_dim=spec.get("embed_dim", 64),
            filter_widths=spec.get("filter_widths", (3, 4, 5)),
            filters=spec.get("filters", 32),
            pad_index=spec.get("pad_index", 0),
        )
    raise ValueError(f"unknown extractor kind {kind!r}")


class WeightGenerator:
    """Maps rich representations to one dense weight row per sample and head."""

    def __init__(self, config: ModelConfig, rng):
        self.config = config
        self.extractor = _build_extractor(config.extractor, rng)
        self.hidden = []
        width = self.extractor.out_dim
        for _ in range(config.fc_layers):
            self.hidden.append(_Linear(width, config.fc_width, rng))
            width = config.fc_width
        self.head = _Linear(width, config.d * config.heads, rng, std=math.sqrt(1.0 / width))

    def features(self, xs):
        if self.extractor.stackable:
            return self.extractor(ad.Tensor(np.stack([np.asarray(x, dtype=np.float64) for x in xs])))
        return ad.concat([self.extractor.encode(x) for x in xs], axis=0)

    def rows(self, xs):
        """Weight rows for a batch of rich representations, shape (n, d * heads)."""
        h = self.features(xs)
        for layer in self.hidden:
            h = ad.relu(layer(h))
        return self.head(h)

    def named_parameters(self):
        out = dict(self.extractor.params())
        for i, layer in enumerate(self.hidden):
            out.update(layer.params(f"hidden{i}"))
        out.update(self.head.params("head"))
        return out


def predict(z, w, g):
    """Inner product z . (g * w); graph-aware when any argument is a Tensor."""
    parts = [z, w, g]
    if any(isinstance(p, ad.Tensor) for p in parts):
        z, w, g = (ad.as_tensor(p) for p in parts)
        if not z.data.shape == w.data.shape == g.data.shape:
            raise ShapeError(f"predict: shapes differ: {z.data.shape}, {w.data.shape}, {g.data.shape}")
        return (z * g * w).sum()
    z, w, g = (np.asarray(p, dtype=np.float64) for p in parts)
    if not z.shape == w.shape == g.shape:
        raise ShapeError(f"predict: shapes differ: {z.shape}, {w.shape}, {g.shape}")
    return float(z @ (g * w))


def _binary_targets(samples):
    y = np.array([s.y for s in samples], dtype=np.float64)
    bad = [s.id for s in samples if s.y not in (-1, 1)]
    if bad:
        raise ValueError(f"binary labels must be +1 or -1; offending sample ids: {bad[:5]}")
    return y


def _class_targets(samples, num_classes):
    y = np.array([s.y for s in samples], dtype=np.int64)
    if ((y < 0) | (y >= num_classes)).any():
        bad = [s.id for s in samples if not 0 <= s.y < num_classes]
        raise ValueError(f"class labels must lie in [0, {num_classes}); offending sample ids: {bad[:5]}")
    return y


class GatedLocalLinear:
    """Per-sample linear classifier whose weights pass through a k-hot gate."""

    def __init__(self, config: ModelConfig, rng):
        self.config = config
        self.generator = WeightGenerator(config, rng)

    # -- parameters ----------------------------------------------------
    def named_parameters(self):
        return self.generator.named_parameters()

    def parameters(self):
        return list(self.named_parameters().values())

    # -- weight generation ----------------------------------------------
    def generate_weights(self, x):
        """Dense weight vector(s) for one rich representation.

        Returns shape (d,) for binary models and (num_classes, d) when
        the model has per-class heads.
        """
        row = self.generator.rows([x]).data[0]
        if self.config.heads == 1:
            return row
        return row.reshape(self.config.heads, self.config.d)

    # -- losses ----------------------------------------------------------
    def batch_loss(self, samples, k=None, tau=None, rng=None, noise=None, gated=True):
        """Mean soft-gated classification loss over a batch; the training objective.

        Gate noise comes from ``rng`` or from pre-drawn ``noise`` of shape
        (k, n, d). Per-sample gate counts are clamped to the number of
        unmasked features so short bag-of-words samples stay trainable;
        a sample with no unmasked features at all is an error.
        """
        if not samples:
            raise ValueError("batch_loss needs at least one sample")
        k = self.config.k if k is None else int(k)
        tau = self.config.tau_fine if tau is None else float(tau)
        w = self.generator.rows([s.x for s in samples])
        z = np.stack([np.asarray(s.z, dtype=np.float64) for s in samples])
        m = np.stack([np.asarray(s.m, dtype=np.int64) for s in samples])

        groups = None
        if gated:
            live = (m == 0).sum(axis=1)
            if (live < 1).any():
                bad = samples[int(np.argmin(live))].id
                raise GateExhaustedError(f"sample {bad!r} has no unmasked features")
            eff_k = np.minimum(k, live)
            order = np.argsort(eff_k, kind="stable")
            if not np.array_equal(order, np.arange(len(samples))):
                w = ad.gather_rows(w, order)
                z, m = z[order], m[order]
                samples = [samples[i] for i in order]
                noise = noise[:, order, :] if noise is not None else None
            eff_k = eff_k[order]
            bounds = np.flatnonzero(np.diff(eff_k)) + 1
            groups = [
                (int(lo), int(hi), int(eff_k[lo]))
                for lo, hi in zip(np.concatenate([[0], bounds]), np.concatenate([bounds, [len(samples)]]))
            ]

        if self.config.num_classes == 2:
            y = _binary_targets(samples)
            losses = self._binary_losses(w, z, m, y, groups, tau, rng, noise, gated)
        else:
            y = _class_targets(samples, self.config.num_classes)
            losses = self._multiclass_losses(w, z, m, y, groups, tau, rng, noise, gated)
        return losses.mean()

    def _grouped_gate(self, w, m, groups, tau, rng, noise):
        """Soft gates for rows pre-sorted into contiguous equal-k groups."""
        pieces = []
        for lo, hi, kb in groups:
            wb = w if (lo, hi) == (0, w.data.shape[0]) else ad.gather_rows(w, np.arange(lo, hi))
            nb = noise[:kb, lo:hi, :] if noise is not None else None
            pieces.append(gt.k_hot_gate_rows(wb, m[lo:hi], kb, tau, rng=rng, noise=nb))
        return pieces[0] if len(pieces) == 1 else ad.concat(pieces, axis=0)

    def _binary_losses(self, w, z, m, y, groups, tau, rng, noise, gated):
        if gated:
            gate = self._grouped_gate(w, m, groups, tau, rng, noise)
            margins = (ad.Tensor(z) * gate * w).sum(axis=1)
        else:
            margins = (ad.Tensor(z) * w).sum(axis=1)
        return ad.softplus(margins * ad.Tensor(-y))

    def _multiclass_losses(self, w, z, m, y, groups, tau, rng, noise, gated):
        d, heads = self.config.d, self.config.heads
        zt = ad.Tensor(z)
        n = z.shape[0]
        cols = []
        for c in range(heads):
            wc = ad.slice_cols(w, c * d, (c + 1) * d)
            if gated:
                gate = self._grouped_gate(wc, m, groups, tau, rng, noise)
                col = (zt * gate * wc).sum(axis=1)
            else:
                col = (zt * wc).sum(axis=1)
            cols.append(col.reshape((n, 1)))
        logits = ad.concat(cols, axis=1)
        picked = ad.take_along(ad.log_softmax(logits, axis=1), y)
        return picked * (-1.0)

    def forward_loss(self, sample, mode="soft", k=None, tau=None, rng=None, noise=None):
        """Loss and gate trace for a single sample.

        Returns (loss tensor, GateResult); multiclass models return the
        list of per-class gate results instead.
        """
        k = self.config.k if k is None else int(k)
        tau = self.config.tau_fine if tau is None else float(tau)
        m = np.asarray(sample.m, dtype=np.int64)
        k_eff = min(k, int((m == 0).sum()))
        if k_eff < 1:
            raise GateExhaustedError(f"sample {sample.id!r} has no unmasked features")
        w = self.generator.rows([sample.x])
        z = np.asarray(sample.z, dtype=np.float64)
        if self.config.num_classes == 2:
            if sample.y not in (-1, 1):
                raise ValueError(f"binary label must be +1 or -1, got {sample.y!r}")
            wv = w.reshape((self.config.d,))
            result = gt.k_hot_gate(wv, m, k_eff, tau=tau, mode=mode, rng=rng, noise=noise)
            gate = result.gate if mode == "soft" else ad.Tensor(result.values)
            margin = (ad.Tensor(z) * gate * wv).sum()
            loss = ad.softplus(margin * (-float(sample.y)))
            return loss, result
        y = _class_targets([sample], self.config.num_classes)
        results, cols = [], []
        for c in range(self.config.heads):
            wc = ad.slice_cols(w, c * self.config.d, (c + 1) * self.config.d).reshape((self.config.d,))
            res = gt.k_hot_gate(wc, m, k_eff, tau=tau, mode=mode, rng=rng, noise=noise)
            gate = res.gate if mode == "soft" else ad.Tensor(res.values)
            cols.append(((ad.Tensor(z) * gate * wc).sum()).reshape((1, 1)))
            results.append(res)
        logits = ad.concat(cols, axis=1)
        loss = ad.take_along(ad.log_softmax(logits, axis=1), y) * (-1.0)
        return loss.reshape(()), results

    def dense_forward(self, sample, rng=None):
        """Loss with every gate open; pairs with top-k truncation at evaluation."""
        loss = self.batch_loss([sample], gated=False)
        return loss, self.generate_weights(sample.x)

    def dense_batch_loss(self, samples):
        return self.batch_loss(samples, gated=False)

    # -- inference --------------------------------------------------------
    def _hard_margin(self, w_row, z, m, k):
        k_eff = min(k, int((m == 0).sum()))
        if k_eff < 1:
            raise GateExhaustedError("sample has no unmasked features")
        result = gt.k_hot_gate(w_row, m, k_eff, mode="hard")
        return float(z @ (result.values * w_row)), result

    def margin(self, sample, k=None):
        """Hard-gated prediction: a signed margin (binary) or class scores."""
        k = self.config.k if k is None else int(k)
        z = np.asarray(sample.z, dtype=np.float64)
        m = np.asarray(sample.m, dtype=np.int64)
        weights = self.generate_weights(sample.x)
        if self.config.num_classes == 2:
            return self._hard_margin(weights, z, m, k)[0]
        return [self._hard_margin(weights[c], z, m, k)[0] for c in range(self.config.heads)]

    def _sample_margin(self, w_row, z, m, k, mode, rng):
        k_eff = min(k, int((m == 0).sum()))
        if k_eff < 1:
            return 0.0  # every gate closed: the prediction is an empty sum
        if mode == "hard":
            return self._hard_margin(w_row, z, m, k)[0]
        result = gt.k_hot_gate(w_row, m, k_eff, tau=self.config.tau_fine, mode="soft", rng=rng)
        return float(z @ (result.values * w_row))

    def predict_labels(self, samples, k=None, mode="hard", rng=None, chunk=256):
        """Gated labels for a list of samples; +1/-1 or class indices.

        Hard mode is the deterministic deployment path; soft mode draws
        relaxed gates from ``rng`` and exists for inspecting the training
        objective. Gate counts clamp to each sample's unmasked features;
        a sample with none gets the empty-sum margin of zero.
        """
        k = self.config.k if k is None else int(k)
        if mode == "soft" and rng is None:
            rng = np.random.default_rng(0)
        out = np.empty(len(samples), dtype=np.int64)
        for lo in range(0, len(samples), chunk):
            batch = samples[lo : lo + chunk]
            rows = self.generator.rows([s.x for s in batch]).data
            for i, s in enumerate(batch):
                z = np.asarray(s.z, dtype=np.float64)
                m = np.asarray(s.m, dtype=np.int64)
                if self.config.num_classes == 2:
                    margin = self._sample_margin(rows[i], z, m, k, mode, rng)
                    out[lo + i] = 1 if margin >= 0 else -1
                else:
                    grid = rows[i].reshape(self.config.heads, self.config.d)
                    scores = [
                        self._sample_margin(grid[c], z, m, k, mode, rng)
                        for c in range(self.config.heads)
                    ]
                    out[lo + i] = int(np.argmax(scores))
        return out

    def explain(self, sample, k=None, feature_names=None):
        """Hard-gated explanation: the k open features with their signed weights."""
        k = self.config.k if k is None else int(k)
        z = np.asarray(sample.z, dtype=np.float64)
        m = np.asarray(sample.m, dtype=np.int64)
        if int((m == 0).sum()) < k:
            raise GateExhaustedError(
                f"sample {sample.id!r} has {int((m == 0).sum())} unmasked features, fewer than k={k}"
            )
        names = feature_names if feature_names is not None else [f"f{j}" for j in range(self.config.d)]
        weights = self.generate_weights(sample.x)
        if self.config.num_classes == 2:
            result = gt.k_hot_gate(weights, m, k, mode="hard")
            prediction = float(z @ (result.values * weights))
            chosen = weights
        else:
            per_class = [gt.k_hot_gate(weights[c], m, k, mode="hard") for c in range(self.config.heads)]
            scores = [float(z @ (r.values * weights[c])) for c, r in enumerate(per_class)]
            label = int(np.argmax(scores))
            prediction, result, chosen = label, per_class[label], weights[label]
        entries = [(j, names[j], float(chosen[j])) for j in result.selection_order()]
        return Explanation(prediction=prediction, entries=entries, mode="hard", sample_id=sample.id)


class DirectClassifier:
    """Same extractor and hidden stack, but the last layer emits class logits."""

    def __init__(self, config: ModelConfig, rng):
        self.config = config
        self.extractor = _build_extractor(config.extractor, rng)
        self.hidden = []
        width = self.extractor.out_dim
        for _ in range(config.fc_layers):
            self.hidden.append(_Linear(width, config.fc_width, rng))
            width = config.fc_width
        self.head = _Linear(width, config.num_classes, rng, std=math.sqrt(1.0 / width))

    def named_parameters(self):
        out = dict(self.extractor.params())
        for i, layer in enumerate(self.hidden):
            out.update(layer.params(f"hidden{i}"))
        out.update(self.head.params("head"))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def logits(self, xs):
        if self.extractor.stackable:
            h = self.extractor(ad.Tensor(np.stack([np.asarray(x, dtype=np.float64) for x in xs])))
        else:
            h = ad.concat([self.extractor.encode(x) for x in xs], axis=0)
        for layer in self.hidden:
            h = ad.relu(layer(h))
        return self.head(h)

    def dnn_forward(self, x):
        """Logits for one rich representation, length num_classes."""
        return self.logits([x]).data[0]

    def _class_indices(self, samples):
        if self.config.num_classes == 2:
            y = _binary_targets(samples)
            return ((y + 1) // 2).astype(np.int64)
        return _class_targets(samples, self.config.num_classes)

    def batch_loss(self, samples, rng=None, **_ignored):
        y = self._class_indices(samples)
        logp = ad.log_softmax(self.logits([s.x for s in samples]), axis=1)
        return (ad.take_along(logp, y) * (-1.0)).mean()

    def predict_labels(self, samples, k=None, mode=None, rng=None):
        picks = np.argmax(self.logits([s.x for s in samples]).data, axis=1)
        if self.config.num_classes == 2:
            return picks * 2 - 1
        return picks
