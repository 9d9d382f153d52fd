"""Residual classifier and pyramid scene parser built on :mod:`settledamage.tensor`.

Both networks are compositions of small :class:`Module` objects. Every module
can ``forward`` a tensor and ``trace`` a shape, the latter returning the output
shape and the multiply-accumulate count without touching any data. Shape
tracing is what drives :func:`flops_estimate` and the architecture tables.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataIOError, DimensionError, UsageError
from .tensor import Tensor

DISASTER, NON_DISASTER = 0, 1
NON_BUILT, BUILT = 0, 1

CHECKPOINT_VERSION = 1

Shape = tuple[int, int, int, int]


class Module:
    """Base class; parameters are discovered by walking attributes in insertion order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def trace(self, shape: Shape) -> tuple[Shape, int]:
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)


def _he(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
    return Tensor(w.astype(np.float32), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator,
                 stride: int = 1, padding: int | None = None, zero_init: bool = False):
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        self.weight = _zeros((cout, cin, k, k)) if zero_init else _he(rng, (cout, cin, k, k), cin * k * k)
        self.bias = _zeros((cout,))

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def trace(self, shape):
        n, c, h, w = shape
        k, kc, kh, kw = self.weight.shape
        if c != kc:
            raise DimensionError(f"conv expects {kc} channels, got {c}")
        ho = T.conv_output_size(h, kh, self.stride, self.padding)
        wo = T.conv_output_size(w, kw, self.stride, self.padding)
        return (n, k, ho, wo), n * k * c * kh * kw * ho * wo


class ReLU(Module):
    def forward(self, x):
        return T.relu(x)

    def trace(self, shape):
        return shape, 0


class MaxPool(Module):
    def __init__(self, size: int, stride: int, padding: int = 0):
        self.size, self.stride, self.padding = size, stride, padding

    def forward(self, x):
        return T.max_pool2d(x, self.size, self.stride, self.padding)

    def trace(self, shape):
        n, c, h, w = shape
        return (n, c, T.conv_output_size(h, self.size, self.stride, self.padding),
                T.conv_output_size(w, self.size, self.stride, self.padding)), 0


class AvgPool(Module):
    """Adaptive average pool to a fixed factor reduction (2 -> halve H and W)."""

    def __init__(self, factor: int):
        self.factor = factor

    def forward(self, x):
        h, w = x.shape[2:]
        if h % self.factor or w % self.factor or h != w:
            raise DimensionError(f"cannot pool {h}x{w} by {self.factor}")
        return T.adaptive_avg_pool(x, h // self.factor)

    def trace(self, shape):
        n, c, h, w = shape
        return (n, c, h // self.factor, w // self.factor), 0


class Sequential(Module):
    def __init__(self, *layers: Module):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def trace(self, shape):
        total = 0
        for layer in self.layers:
            shape, macs = layer.trace(shape)
            total += macs
        return shape, total


class ResidualBlock(Module):
    """Two 3x3 convs plus a skip; the skip is a strided 1x1 projection when shapes change.

    The second conv starts at zero so every block begins as the identity on its
    (non-negative) input, which keeps the deep stack trainable without
    normalisation layers.
    """

    def __init__(self, cin: int, cout: int, stride: int, rng: np.random.Generator):
        self.conv1 = Conv2d(cin, cout, 3, rng, stride=stride)
        self.conv2 = Conv2d(cout, cout, 3, rng, zero_init=True)
        self.shortcut = Conv2d(cin, cout, 1, rng, stride=stride, padding=0) if (stride != 1 or cin != cout) else None

    def forward(self, x):
        y = self.conv2(T.relu(self.conv1(x)))
        skip = x if self.shortcut is None else self.shortcut(x)
        return T.relu(y + skip)

    def trace(self, shape):
        s1, m1 = self.conv1.trace(shape)
        s2, m2 = self.conv2.trace(s1)
        m3 = 0
        if self.shortcut is not None:
            _, m3 = self.shortcut.trace(shape)
        return s2, m1 + m2 + m3


class GlobalAvgPool(Module):
    def forward(self, x):
        return T.flatten(T.adaptive_avg_pool(x, 1))

    def trace(self, shape):
        return (shape[0], shape[1], 1, 1), 0


class Dense(Module):
    def __init__(self, din: int, dout: int, rng: np.random.Generator):
        w = rng.standard_normal((din, dout)) * np.sqrt(1.0 / din)
        self.weight = Tensor(w.astype(np.float32), requires_grad=True)
        self.bias = _zeros((dout,))

    def forward(self, x):
        return T.dense(x, self.weight, self.bias)

    def trace(self, shape):
        d, m = self.weight.shape
        return (shape[0], m, 1, 1), shape[0] * d * m


class DenseBlock(Module):
    """Densely connected 3x3 conv layers; each layer sees every earlier feature map."""

    def __init__(self, cin: int, num_layers: int, growth: int, rng: np.random.Generator):
        self.convs = [Conv2d(cin + i * growth, growth, 3, rng) for i in range(num_layers)]
        self.out_channels = cin + num_layers * growth

    def forward(self, x):
        for conv in self.convs:
            x = T.concat_channels([x, T.relu(conv(x))])
        return x

    def trace(self, shape):
        n, c, h, w = shape
        total = 0
        for conv in self.convs:
            (_, g, _, _), macs = conv.trace((n, c, h, w))
            c += g
            total += macs
        return (n, c, h, w), total


class PyramidPooling(Module):
    """Pool the feature map at several bin sizes, reduce each with a 1x1 conv,
    upsample back and concatenate with the input features."""

    def __init__(self, cin: int, bins: Sequence[int], reduced: int, rng: np.random.Generator):
        self.bins = tuple(bins)
        self.reduce = [Conv2d(cin, reduced, 1, rng, padding=0) for _ in self.bins]
        self.out_channels = cin + len(self.bins) * reduced

    def branches(self, x: Tensor) -> list[Tensor]:
        h, w = x.shape[2:]
        if max(self.bins) > min(h, w):
            raise ConfigError(f"pyramid bin {max(self.bins)} exceeds feature map {h}x{w}")
        return [T.upsample_bilinear(T.relu(conv(T.adaptive_avg_pool(x, b))), h, w)
                for b, conv in zip(self.bins, self.reduce)]

    def forward(self, x):
        return T.concat_channels([x] + self.branches(x))

    def trace(self, shape):
        n, c, h, w = shape
        if max(self.bins) > min(h, w):
            raise ConfigError(f"pyramid bin {max(self.bins)} exceeds feature map {h}x{w}")
        total = sum(conv.trace((n, c, b, b))[1] for b, conv in zip(self.bins, self.reduce))
        return (n, self.out_channels, h, w), total


# ---------------------------------------------------------------------------
# configs and models


@dataclass
class ResNetConfig:
    blocks: tuple[int, ...] = (3, 4, 6, 3)
    widths: tuple[int, ...] = (64, 128, 256, 512)
    in_channels: int = 3
    num_classes: int = 2
    width_scale: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if len(self.blocks) != len(self.widths) or not self.blocks:
            raise ConfigError("blocks and widths must be non-empty and of equal length")
        if not self.width_scale > 0:
            raise ConfigError(f"width_scale must be positive, got {self.width_scale}")
        if min(self.blocks) < 1 or min(self.widths) < 1 or self.in_channels < 1 or self.num_classes < 2:
            raise ConfigError("block counts, widths and channels must be positive; classes >= 2")

    def scaled_widths(self) -> list[int]:
        return [max(1, int(round(w * self.width_scale))) for w in self.widths]


@dataclass
class PSPNetConfig:
    block_layers: tuple[int, ...] = (3, 3)
    growth: int = 12
    stem_channels: int = 24
    bins: tuple[int, ...] = (1, 2, 3, 6)
    num_classes: int = 2
    output_stride: int = 4
    head_channels: int = 32
    in_channels: int = 3
    input_size: int = 64
    seed: int = 0

    def validate(self) -> None:
        if not self.bins or min(self.bins) < 1 or any(b >= c for b, c in zip(self.bins, self.bins[1:])):
            raise ConfigError(f"bins must be strictly increasing and >= 1, got {self.bins}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if not self.block_layers or min(self.block_layers) < 1 or self.growth < 1:
            raise ConfigError("dense blocks need at least one layer and positive growth")
        stride, pools = self.output_stride, 0
        while stride > 2 and stride % 2 == 0:
            stride //= 2
            pools += 1
        if stride != 2 or pools > len(self.block_layers) - 1:
            raise ConfigError(f"output_stride {self.output_stride} must be 2**k with k <= number of dense blocks")
        if self.input_size % self.output_stride:
            raise ConfigError("input_size must be a multiple of output_stride")
        feat = self.input_size // self.output_stride
        if max(self.bins) > feat:
            raise ConfigError(f"pyramid bin {max(self.bins)} exceeds feature map size {feat}")


class NetworkModel(Module):
    arch: str = ""

    def __init__(self, config):
        self.config = config

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if name == "config":
                continue
            if isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")

    def layer_shapes(self, input_hw: tuple[int, int]) -> list[tuple[str, Shape]]:
        raise NotImplementedError


class ResNet(NetworkModel):
    arch = "classifier"

    def __init__(self, config: ResNetConfig):
        super().__init__(config)
        rng = np.random.default_rng(config.seed)
        widths = config.scaled_widths()
        self.stem = Sequential(Conv2d(config.in_channels, widths[0], 7, rng, stride=2, padding=3), ReLU())
        self.pool = MaxPool(3, 2, 1)
        stages = []
        cin = widths[0]
        for i, (n, w) in enumerate(zip(config.blocks, widths)):
            blocks = [ResidualBlock(cin if j == 0 else w, w, 2 if (j == 0 and i > 0) else 1, rng) for j in range(n)]
            stages.append(Sequential(*blocks))
            cin = w
        self.stages = Sequential(*stages)
        self.head = Sequential(GlobalAvgPool(), Dense(cin, config.num_classes, rng))

    def forward(self, x):
        x = x - 0.5
        return self.head(self.stages(self.pool(self.stem(x))))

    def trace(self, shape):
        total = 0
        for part in (self.stem, self.pool, self.stages, self.head):
            shape, macs = part.trace(shape)
            total += macs
        return shape, total

    def layer_shapes(self, input_hw):
        """Output shape after the stem, the max pool, each stage, and the pooled head."""
        shape: Shape = (1, self.config.in_channels, *input_hw)
        out = []
        shape, _ = self.stem.trace(shape)
        out.append(("conv1", shape))
        shape, _ = self.pool.trace(shape)
        out.append(("pool", shape))
        for i, stage in enumerate(self.stages.layers):
            shape, _ = stage.trace(shape)
            out.append((f"conv{i + 2}", shape))
        shape, _ = self.head.layers[0].trace(shape)
        out.append(("avgpool", shape))
        return out


class PSPNet(NetworkModel):
    arch = "parser"

    def __init__(self, config: PSPNetConfig):
        super().__init__(config)
        rng = np.random.default_rng(config.seed)
        self.stem = Sequential(Conv2d(config.in_channels, config.stem_channels, 3, rng, stride=2), ReLU())
        pools_needed = int(np.log2(config.output_stride)) - 1
        layers: list[Module] = []
        c = config.stem_channels
        for i, n in enumerate(config.block_layers):
            block = DenseBlock(c, n, config.growth, rng)
            layers.append(block)
            c = block.out_channels
            if i < len(config.block_layers) - 1:
                half = max(1, c // 2)
                layers += [Conv2d(c, half, 1, rng, padding=0), ReLU()]
                c = half
                if pools_needed > 0:
                    layers.append(AvgPool(2))
                    pools_needed -= 1
        self.backbone = Sequential(*layers)
        self.feature_channels = c
        self.ppm = PyramidPooling(c, config.bins, max(1, c // len(config.bins)), rng)
        self.head = Sequential(
            Conv2d(self.ppm.out_channels, config.head_channels, 3, rng), ReLU(),
            Conv2d(config.head_channels, config.num_classes, 1, rng, padding=0),
        )

    def features(self, x: Tensor) -> Tensor:
        return self.backbone(self.stem(x))

    def forward(self, x):
        h, w = x.shape[2:]
        s = self.config.output_stride
        if h % s or w % s:
            raise DimensionError(f"input {h}x{w} is not a multiple of output stride {s}; pad the image")
        scores = self.head(self.ppm(self.features(x)))
        return T.upsample_bilinear(scores, h, w)

    def trace(self, shape):
        n, _, h, w = shape
        total = 0
        for part in (self.stem, self.backbone, self.ppm, self.head):
            shape, macs = part.trace(shape)
            total += macs
        return (n, shape[1], h, w), total

    def layer_shapes(self, input_hw):
        shape: Shape = (1, self.config.in_channels, *input_hw)
        out = []
        for name, part in (("stem", self.stem), ("backbone", self.backbone), ("ppm", self.ppm), ("head", self.head)):
            shape, _ = part.trace(shape)
            out.append((name, shape))
        out.append(("output", (1, shape[1], *input_hw)))
        return out


def build_resnet(config: ResNetConfig | None = None) -> ResNet:
    config = config or ResNetConfig()
    config.validate()
    return ResNet(config)


def build_pspnet(config: PSPNetConfig | None = None) -> PSPNet:
    config = config or PSPNetConfig()
    config.validate()
    return PSPNet(config)


def flops_estimate(model: NetworkModel, input_hw: tuple[int, int]) -> int:
    """Multiply-accumulate count of one forward pass on a single image.

    Convolutions contribute K*C*kh*kw*H'*W', dense layers D*M; pooling,
    activations and interpolation are not counted.
    """
    shape: Shape = (1, model.config.in_channels, *input_hw)
    _, macs = model.trace(shape)
    return int(macs)


# ---------------------------------------------------------------------------
# inference


class Classification(NamedTuple):
    disaster: float
    non_disaster: float
    label: int


def _check_arch(model: NetworkModel, arch: str) -> None:
    if getattr(model, "arch", None) != arch:
        raise UsageError(f"expected a {arch} model, got {getattr(model, 'arch', type(model).__name__)}")


def _batch(image) -> Tensor:
    arr = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    return Tensor(arr.astype(np.float32, copy=False))


def forward_classify(model: NetworkModel, image) -> Classification:
    """Disaster / non-disaster probabilities for one (1,3,H,W) image."""
    _check_arch(model, "classifier")
    with T.no_grad():
        logits = model(_batch(image)).data.astype(np.float64)
    p = T.softmax(logits, axis=1)[0]
    return Classification(float(p[DISASTER]), float(p[NON_DISASTER]), int(np.argmax(p)))


def segment_scores(model: NetworkModel, images) -> np.ndarray:
    _check_arch(model, "parser")
    with T.no_grad():
        return model(_batch(images)).data


def forward_segment(model: NetworkModel, image):
    """Per-pixel argmax labels of one image as a :class:`SegmentationMask`."""
    from .damage import SegmentationMask

    scores = segment_scores(model, image)[0]
    labels = np.argmax(scores, axis=0).astype(np.uint8)  # ties -> lowest class index
    return SegmentationMask(labels)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainingRecipe:
    batch_size: int
    epochs: int
    lr: float
    seed: int = 42
    augment: bool = False   # random flips / quarter turns per batch
    noise: float = 0.0      # max std of gaussian noise added per batch (0 = off)

    def validate(self) -> None:
        if self.batch_size < 1 or self.epochs < 1 or not self.lr > 0 or self.seed < 0 or not 0 <= self.noise <= 1:
            raise ConfigError(f"invalid training recipe {self}")


CLASSIFIER_RECIPE = TrainingRecipe(batch_size=16, epochs=30, lr=1e-5)
PARSER_RECIPE = TrainingRecipe(batch_size=4, epochs=100, lr=1e-4)


@dataclass
class Dataset:
    """Images (N,3,H,W) in [0,1] with class labels (N,) or label maps (N,H,W)."""

    images: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.targets = np.asarray(self.targets, dtype=np.int64)
        if self.images.ndim != 4 or len(self.images) != len(self.targets):
            raise DimensionError(f"dataset images {self.images.shape} and targets {self.targets.shape} disagree")

    def __len__(self) -> int:
        return len(self.images)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.targets[idx])


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


def _check_targets(model: NetworkModel, data: Dataset) -> None:
    if model.arch == "classifier" and data.targets.ndim != 1:
        raise UsageError("classifier needs one label per image")
    if model.arch == "parser" and data.targets.ndim != 3:
        raise UsageError("parser needs one label map per image")
    k = model.config.num_classes
    if data.targets.size and (data.targets.min() < 0 or data.targets.max() >= k):
        raise UsageError(f"labels must lie in [0, {k})")


def _correct(logits: np.ndarray, targets: np.ndarray) -> int:
    return int((np.argmax(logits, axis=1) == targets).sum())


def _augment(x: np.ndarray, y: np.ndarray, rng: np.random.Generator):
    """One random dihedral transform per batch, applied to label maps as well."""
    turns, flip = int(rng.integers(4)), bool(rng.integers(2))
    x = np.rot90(x, turns, axes=(2, 3))
    if y.ndim == 3:
        y = np.rot90(y, turns, axes=(1, 2))
    if flip:
        x = x[..., ::-1]
        if y.ndim == 3:
            y = y[..., ::-1]
    return np.ascontiguousarray(x), np.ascontiguousarray(y)


def train(model: NetworkModel, data: Dataset, recipe: TrainingRecipe,
          callback=None) -> tuple[NetworkModel, list[EpochStats]]:
    """Minibatch Adam on softmax cross-entropy.

    Per-epoch loss and accuracy are averaged over the training batches as they
    are seen (accuracy counts images for the classifier, pixels for the parser).
    Shuffling is seeded by ``recipe.seed``, so a fixed model seed + recipe gives
    a bit-identical history.
    """
    recipe.validate()
    if len(data) == 0:
        raise UsageError("cannot train on an empty dataset")
    _check_targets(model, data)
    rng = np.random.default_rng(recipe.seed)
    opt = T.Adam(model.parameters(), lr=recipe.lr)
    history: list[EpochStats] = []
    per_item = int(np.prod(data.targets.shape[1:], dtype=np.int64))
    for epoch in range(1, recipe.epochs + 1):
        order = rng.permutation(len(data))
        loss_sum, correct = 0.0, 0
        for start in range(0, len(order), recipe.batch_size):
            idx = order[start:start + recipe.batch_size]
            x, y = data.images[idx], data.targets[idx]
            if recipe.augment:
                x, y = _augment(x, y, rng)
            if recipe.noise > 0:
                level = rng.uniform(0.0, recipe.noise)
                x = np.clip(x + rng.normal(0.0, level, size=x.shape), 0, 1).astype(np.float32)
            logits = model(Tensor(x))
            loss = T.softmax_cross_entropy(logits, y)
            opt.zero_grad()
            loss.backward()
            opt.step()
            loss_sum += loss.item() * len(idx)
            correct += _correct(logits.data, y)
        stats = EpochStats(epoch, loss_sum / len(data), correct / (len(data) * per_item))
        history.append(stats)
        if callback is not None:
            callback(stats)
    return model, history


def predict_logits(model: NetworkModel, images: np.ndarray, batch_size: int = 16) -> np.ndarray:
    out = []
    with T.no_grad():
        for start in range(0, len(images), batch_size):
            out.append(model(Tensor(np.asarray(images[start:start + batch_size], dtype=np.float32))).data)
    return np.concatenate(out, axis=0)


def evaluate(model: NetworkModel, data: Dataset, batch_size: int = 16) -> tuple[float, float]:
    """(accuracy, mean cross-entropy); accuracy is image-level or pixel-level by architecture."""
    if len(data) == 0:
        raise UsageError("cannot evaluate on an empty dataset")
    _check_targets(model, data)
    logits = predict_logits(model, data.images, batch_size)
    loss = T.softmax_cross_entropy(Tensor(logits.astype(np.float64)), data.targets).item()
    accuracy = _correct(logits, data.targets) / data.targets.size
    return accuracy, loss


# ---------------------------------------------------------------------------
# checkpoints


def _config_dict(model: NetworkModel) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(model.config).items()}


def save_checkpoint(model: NetworkModel, path) -> None:
    """Zip container: ``meta.json`` (version, arch, config) + one ``.npy`` per parameter.

    Entries carry a fixed timestamp so identical models give identical bytes.
    """
    meta = {"format": "settledamage-checkpoint", "version": CHECKPOINT_VERSION,
            "arch": model.arch, "config": _config_dict(model),
            "parameters": [name for name, _ in model.named_parameters()]}
    try:
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
            zf.writestr(zipfile.ZipInfo("meta.json", (1980, 1, 1, 0, 0, 0)),
                        json.dumps(meta, indent=1, sort_keys=True), compress_type=zipfile.ZIP_DEFLATED)
            for name, p in model.named_parameters():
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.ascontiguousarray(p.data), allow_pickle=False)
                zf.writestr(zipfile.ZipInfo(f"{name}.npy", (1980, 1, 1, 0, 0, 0)), buf.getvalue(),
                            compress_type=zipfile.ZIP_DEFLATED)
    except OSError as exc:
        raise DataIOError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> NetworkModel:
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ConfigError(f"unsupported checkpoint version {meta.get('version')}")
            cfg = {k: tuple(v) if isinstance(v, list) else v for k, v in meta["config"].items()}
            if meta["arch"] == "classifier":
                model: NetworkModel = build_resnet(ResNetConfig(**cfg))
            elif meta["arch"] == "parser":
                model = build_pspnet(PSPNetConfig(**cfg))
            else:
                raise ConfigError(f"unknown architecture {meta['arch']!r}")
            params = dict(model.named_parameters())
            if sorted(params) != sorted(meta["parameters"]):
                raise ConfigError("checkpoint parameters do not match the architecture")
            for name, p in params.items():
                arr = np.lib.format.read_array(io.BytesIO(zf.read(f"{name}.npy")), allow_pickle=False)
                if arr.shape != p.shape:
                    raise ConfigError(f"parameter {name}: shape {arr.shape} != {p.shape}")
                p.data = arr
    except (OSError, zipfile.BadZipFile, KeyError) as exc:
        raise DataIOError(f"cannot read checkpoint {path}: {exc}") from exc
    return model


def models_equal(a: NetworkModel, b: NetworkModel) -> bool:
    if a.arch != b.arch or _config_dict(a) != _config_dict(b):
        return False
    pa, pb = dict(a.named_parameters()), dict(b.named_parameters())
    return pa.keys() == pb.keys() and all(
        pa[k].data.dtype == pb[k].data.dtype and np.array_equal(pa[k].data, pb[k].data) for k in pa)
