"""The character recognition network.

Composition, for a feature sequence ``x``:

* a temporal encoder built from a conv stem plus residual 1-D conv blocks
  ("normal" blocks keep the time axis, "reduce" blocks carry a 1x1
  projection branch and can halve it), producing clip features ``Z`` of
  shape ``[l, c]``;
* a spatial encoder: multi-head graph attention over the clip features,
  treated as nodes of a complete self-looped graph, producing ``Z_bar`` of
  the same shape;
* a decoder head that fuses the two and maps to class probabilities.

Four fusion strategies are supported.  "A" skips the graph encoder
entirely; "B" applies it to mid-depth temporal features and adds the result
back before the remaining conv stages; "C" classifies from the pooled graph
output alone; "D" (default) adds graph and temporal clip features row-wise
before pooling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import EmptyInputError, InvalidConfigError, ShapeError
from .tensor import BatchNormStats, ParameterSet, Value

FUSION_STRATEGIES = ("A", "B", "C", "D")
BLOCK_KINDS = ("normal", "reduce")
DEFAULT_STAGES = (("normal", 1), ("reduce", 2), ("normal", 1), ("reduce", 2),
                  ("normal", 1), ("reduce", 2))

# feature sequences shorter than this are padded by repeating the last row,
# which guarantees at least one clip survives three stride-2 reductions
MIN_ROWS = 8

LEAKY_SLOPE = 0.2  # attention-score nonlinearity
PRELU_INIT = 0.25
BN_EPS = 1e-5


@dataclass
class ModelConfig:
    num_classes: int
    channels: int = 64
    stages: tuple[tuple[str, int], ...] = DEFAULT_STAGES
    gat_layers: int = 1
    heads: int = 8
    fusion: str = "D"
    head_hidden: int = 128
    head_depth: int = 2
    dropout: float = 0.2
    decoder: str = "fc"  # "fc" or "ctc"
    input_dim: int = 8

    def __post_init__(self):
        if self.fusion not in FUSION_STRATEGIES:
            raise InvalidConfigError(f"fusion must be one of {FUSION_STRATEGIES}, got {self.fusion!r}")
        if self.fusion == "A":
            self.gat_layers = 0  # strategy A has no spatial encoder
        elif self.gat_layers < 1:
            raise InvalidConfigError(f"fusion {self.fusion!r} needs gat_layers >= 1")
        if self.channels % self.heads != 0:
            raise InvalidConfigError(
                f"channels ({self.channels}) must be divisible by heads ({self.heads})"
            )
        if self.head_depth not in (1, 2, 3):
            raise InvalidConfigError(f"head_depth must be 1, 2 or 3, got {self.head_depth}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.decoder not in ("fc", "ctc"):
            raise InvalidConfigError(f"decoder must be 'fc' or 'ctc', got {self.decoder!r}")
        if self.num_classes < 2:
            raise InvalidConfigError(f"need at least 2 classes, got {self.num_classes}")
        stages = []
        for spec in self.stages:
            kind, stride = spec
            if kind not in BLOCK_KINDS:
                raise InvalidConfigError(f"unknown block kind {kind!r}")
            if kind == "normal" and stride != 1:
                raise InvalidConfigError("normal blocks are stride-1")
            if stride not in (1, 2):
                raise InvalidConfigError(f"block stride must be 1 or 2, got {stride}")
            stages.append((kind, int(stride)))
        self.stages = tuple(stages)

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "channels": self.channels,
            "stages": [list(s) for s in self.stages],
            "gat_layers": self.gat_layers,
            "heads": self.heads,
            "fusion": self.fusion,
            "head_hidden": self.head_hidden,
            "head_depth": self.head_depth,
            "dropout": self.dropout,
            "decoder": self.decoder,
            "input_dim": self.input_dim,
        }

    @staticmethod
    def from_dict(data: dict) -> "ModelConfig":
        if not isinstance(data, dict):
            raise InvalidConfigError("model config must be a JSON object")
        known = {
            "num_classes", "channels", "stages", "gat_layers", "heads", "fusion",
            "head_hidden", "head_depth", "dropout", "decoder", "input_dim",
        }
        unknown = set(data) - known
        if unknown:
            raise InvalidConfigError(f"unknown model config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "stages" in kwargs:
            kwargs["stages"] = tuple((str(k), int(s)) for k, s in kwargs["stages"])
        return ModelConfig(**kwargs)


@dataclass
class Prediction:
    """Class probabilities plus their label vocabulary."""

    probs: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.probs) != len(self.labels):
            raise ShapeError("probability vector and label list disagree")

    def topk(self, k: int) -> list[tuple[str, float]]:
        order = np.argsort(-self.probs, kind="stable")[: max(0, k)]
        return [(self.labels[i], float(self.probs[i])) for i in order]

    @property
    def top1(self) -> str:
        return self.labels[int(np.argmax(self.probs))]


def pad_rows(features: np.ndarray, min_rows: int = MIN_ROWS) -> np.ndarray:
    """Repeat the final row until the sequence has at least ``min_rows``."""
    if features.ndim != 2:
        raise ShapeError(f"feature matrix must be 2-D, got shape {features.shape}")
    if features.shape[0] == 0:
        raise EmptyInputError("cannot encode an empty feature sequence")
    if features.shape[0] >= min_rows:
        return features
    fill = np.repeat(features[-1:], min_rows - features.shape[0], axis=0)
    return np.concatenate([features, fill], axis=0)


class CharacterModel:
    """Recognition model: parameters, batch-norm buffers, and forward passes.

    ``labels`` is the class vocabulary.  With the "fc" decoder there is one
    class per label; with the "ctc" decoder class 0 is the blank and class
    ``i + 1`` maps to ``labels[i]``.
    """

    def __init__(self, config: ModelConfig, labels: Sequence[str], seed: int = 0):
        labels = tuple(labels)
        expected = len(labels) + (1 if config.decoder == "ctc" else 0)
        if config.num_classes != expected:
            raise InvalidConfigError(
                f"num_classes={config.num_classes} does not match {len(labels)} labels "
                f"for decoder {config.decoder!r}"
            )
        self.config = config
        self.labels = labels
        self.seed = seed
        self.params = ParameterSet()
        self.bn_stats: dict[str, BatchNormStats] = {}
        self.rng = np.random.default_rng(seed)  # dropout masks
        self._build(np.random.default_rng(seed))

    # -- construction -------------------------------------------------------

    def _uniform(self, rng, shape, fan_in) -> np.ndarray:
        bound = np.sqrt(1.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape)

    def _add_conv(self, rng, path: str, c_out: int, c_in: int, k: int) -> None:
        self.params.add(f"{path}.w", self._uniform(rng, (c_out, c_in, k), c_in * k))

    def _add_bn(self, path: str, channels: int) -> None:
        self.params.add(f"{path}.gamma", np.ones(channels))
        self.params.add(f"{path}.beta", np.zeros(channels))
        self.bn_stats[path] = BatchNormStats(channels)

    def _add_prelu(self, path: str, channels: int) -> None:
        self.params.add(f"{path}.slope", np.full(channels, PRELU_INIT))

    def _add_linear(self, rng, path: str, d_in: int, d_out: int) -> None:
        self.params.add(f"{path}.w", self._uniform(rng, (d_in, d_out), d_in))
        self.params.add(f"{path}.b", np.zeros(d_out))

    def _build(self, rng) -> None:
        cfg = self.config
        c = cfg.channels
        self._add_conv(rng, "stem.conv", c, cfg.input_dim, 3)
        self._add_bn("stem.bn", c)
        self._add_prelu("stem.prelu", c)
        for i, (kind, _) in enumerate(cfg.stages):
            base = f"stage{i}"
            self._add_conv(rng, f"{base}.conv1", c, c, 3)
            self._add_bn(f"{base}.bn1", c)
            self._add_prelu(f"{base}.prelu1", c)
            self._add_conv(rng, f"{base}.conv2", c, c, 3)
            self._add_bn(f"{base}.bn2", c)
            self._add_prelu(f"{base}.prelu2", c)
            if kind == "reduce":
                self._add_conv(rng, f"{base}.proj", c, c, 1)
                self._add_bn(f"{base}.projbn", c)
        d = cfg.head_dim
        for layer in range(cfg.gat_layers):
            for h in range(cfg.heads):
                base = f"gat{layer}.head{h}"
                self.params.add(f"{base}.w", self._uniform(rng, (c, d), c))
                self.params.add(f"{base}.a_src", self._uniform(rng, (d,), 2 * d))
                self.params.add(f"{base}.a_dst", self._uniform(rng, (d,), 2 * d))
            self._add_prelu(f"gat{layer}.prelu", c)
        dims = self._head_dims()
        for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            self._add_linear(rng, f"head.fc{i}", d_in, d_out)
            if i < len(dims) - 2:
                self._add_prelu(f"head.prelu{i}", d_out)

    def _head_dims(self) -> list[int]:
        cfg = self.config
        hidden = [cfg.head_hidden] * (cfg.head_depth - 1)
        return [cfg.channels] + hidden + [cfg.num_classes]

    # -- forward pieces -----------------------------------------------------

    def _bn(self, path: str, x: Value, mode: str) -> Value:
        return T.batch_norm1d(
            x, self.params[f"{path}.gamma"], self.params[f"{path}.beta"],
            self.bn_stats[path], mode=mode, eps=BN_EPS,
        )

    def _prelu(self, path: str, x: Value) -> Value:
        return T.prelu(x, self.params[f"{path}.slope"])

    def _block(self, i: int, joint: Value, sizes: list[int], mode: str) -> tuple[Value, list[int]]:
        """One residual conv block over a batch stacked along the row axis.

        Convolutions run per sample (they must not cross sample boundaries);
        batch norm, activations and dropout act on the stacked rows, which
        pools normalization statistics across the whole batch.
        """
        kind, stride = self.config.stages[i]
        base = f"stage{i}"
        parts = T.split_rows(joint, sizes) if len(sizes) > 1 else [joint]
        hs = [T.conv1d(p, self.params[f"{base}.conv1.w"], stride=stride, padding=1) for p in parts]
        new_sizes = [h.data.shape[0] for h in hs]
        h = T.concat(hs, axis=0) if len(hs) > 1 else hs[0]
        h = self._bn(f"{base}.bn1", h, mode)
        h = self._prelu(f"{base}.prelu1", h)
        h = T.dropout(h, self.config.dropout, mode=mode, rng=self.rng)
        h2_parts = T.split_rows(h, new_sizes) if len(new_sizes) > 1 else [h]
        h2s = [T.conv1d(p, self.params[f"{base}.conv2.w"], stride=1, padding=1) for p in h2_parts]
        h2 = T.concat(h2s, axis=0) if len(h2s) > 1 else h2s[0]
        h2 = self._bn(f"{base}.bn2", h2, mode)
        if kind == "reduce":
            rs = [T.conv1d(p, self.params[f"{base}.proj.w"], stride=stride, padding=0) for p in parts]
            res = T.concat(rs, axis=0) if len(rs) > 1 else rs[0]
            res = self._bn(f"{base}.projbn", res, mode)
        else:
            res = joint
        return self._prelu(f"{base}.prelu2", T.add(h2, res)), new_sizes

    def _gat_layer(self, layer: int, z: Value) -> Value:
        head_outputs = []
        for h in range(self.config.heads):
            base = f"gat{layer}.head{h}"
            zw = T.matmul(z, self.params[f"{base}.w"])  # [l, d]
            score_src = T.matmul(zw, self.params[f"{base}.a_src"])  # [l]
            score_dst = T.matmul(zw, self.params[f"{base}.a_dst"])  # [l]
            e = T.leaky_relu(T.outer_sum(score_src, score_dst), LEAKY_SLOPE)
            attention = T.softmax(e, axis=1)  # rows sum to 1 over neighbors
            head_outputs.append(T.matmul(attention, zw))
        combined = T.concat(head_outputs, axis=1)  # [l, c]
        return self._prelu(f"gat{layer}.prelu", combined)

    def _spatial(self, z: Value) -> Value:
        for layer in range(self.config.gat_layers):
            z = self._gat_layer(layer, z)
        return z

    def _mid_insert_index(self) -> int:
        """Block index after which strategy B injects the graph encoder.

        The default stage plan has three downsampling stages; the injection
        point is the end of the second one.  Stage lists without two reduce
        blocks fall back to the midpoint.
        """
        reduce_positions = [i for i, (kind, _) in enumerate(self.config.stages) if kind == "reduce"]
        if len(reduce_positions) >= 2:
            return reduce_positions[1]
        return max(0, len(self.config.stages) // 2 - 1)

    def _head(self, x: Value, mode: str) -> Value:
        dims = self._head_dims()
        n_layers = len(dims) - 1
        for i in range(n_layers - 1):
            x = T.linear(x, self.params[f"head.fc{i}.w"], self.params[f"head.fc{i}.b"])
            x = self._prelu(f"head.prelu{i}", x)
        x = T.dropout(x, self.config.dropout, mode=mode, rng=self.rng)
        last = n_layers - 1
        return T.linear(x, self.params[f"head.fc{last}.w"], self.params[f"head.fc{last}.b"])

    def _encode_batch(self, features_list: Sequence[np.ndarray], mode: str) -> list[Value]:
        """Fused clip features ``[l_i, c]`` per sample, by fusion strategy."""
        cfg = self.config
        parts = [Value(pad_rows(np.asarray(f, dtype=np.float64))) for f in features_list]
        sizes = [p.data.shape[0] for p in parts]
        stems = [T.conv1d(p, self.params["stem.conv.w"], stride=1, padding=1) for p in parts]
        joint = T.concat(stems, axis=0) if len(stems) > 1 else stems[0]
        joint = self._bn("stem.bn", joint, mode)
        joint = self._prelu("stem.prelu", joint)
        mid = self._mid_insert_index()
        for i in range(len(cfg.stages)):
            joint, sizes = self._block(i, joint, sizes, mode)
            if cfg.fusion == "B" and i == mid:
                zs = T.split_rows(joint, sizes) if len(sizes) > 1 else [joint]
                zs = [T.add(z, self._spatial(z)) for z in zs]
                joint = T.concat(zs, axis=0) if len(zs) > 1 else zs[0]
        zs = T.split_rows(joint, sizes) if len(sizes) > 1 else [joint]
        if cfg.fusion in ("A", "B"):
            return zs
        fused = []
        for z in zs:
            z_bar = self._spatial(z)
            fused.append(z_bar if cfg.fusion == "C" else T.add(z_bar, z))
        return fused

    # -- public forward passes ----------------------------------------------

    def class_logits_batch(self, features_list: Sequence[np.ndarray], mode: str = T.EVAL) -> list[Value]:
        if self.config.decoder != "fc":
            raise InvalidConfigError("class_logits requires the 'fc' decoder")
        return [self._head(T.mean_rows(f), mode) for f in self._encode_batch(features_list, mode)]

    def class_logits(self, features: np.ndarray, mode: str = T.EVAL) -> Value:
        return self.class_logits_batch([features], mode)[0]

    def frame_logits_batch(self, features_list: Sequence[np.ndarray], mode: str = T.EVAL) -> list[Value]:
        """Per-clip logits ``[l_i, num_classes]`` for the CTC decoder."""
        if self.config.decoder != "ctc":
            raise InvalidConfigError("frame_logits requires the 'ctc' decoder")
        return [self._head(f, mode) for f in self._encode_batch(features_list, mode)]

    def frame_logits(self, features: np.ndarray, mode: str = T.EVAL) -> Value:
        return self.frame_logits_batch([features], mode)[0]

    def forward(self, features: np.ndarray, mode: str = T.EVAL) -> Prediction:
        logits = self.class_logits(features, mode)
        return Prediction(T.softmax(logits).data.copy(), self.labels)

    # -- state handling ------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        """All persistent arrays: parameters plus batch-norm buffers."""
        out = {path: v.data for path, v in self.params.items()}
        for path in sorted(self.bn_stats):
            out[f"{path}.running_mean"] = self.bn_stats[path].mean
            out[f"{path}.running_var"] = self.bn_stats[path].var
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        expected = self.state_arrays()
        missing = set(expected) - set(arrays)
        extra = set(arrays) - set(expected)
        if missing or extra:
            raise InvalidConfigError(
                f"state mismatch: missing {sorted(missing)[:3]}, unexpected {sorted(extra)[:3]}"
            )
        for path, target in expected.items():
            src = np.asarray(arrays[path], dtype=np.float64)
            if src.shape != target.shape:
                raise ShapeError(f"state {path}: shape {src.shape} != {target.shape}")
            target[...] = src

    def num_parameters(self) -> int:
        return self.params.num_elements()


def clip_feature_length(t_rows: int, config: ModelConfig) -> int:
    """Number of clip features produced for ``t_rows`` input rows."""
    t = max(t_rows, MIN_ROWS)
    for kind, stride in config.stages:
        if stride == 2:
            t = (t + 1) // 2
    return t
