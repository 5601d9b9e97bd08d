"""Plot-level yield regression from sampled frames.

A frozen feature extractor turns each of a plot's 20 sampled frames into a
feature map. The ten maps of each side are summed and the two side sums are
stacked along channels. A small conv -> max-pool -> three fully connected
layer head maps the fused map to yield in t/ha.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from . import tensornet as tn
from .images import as_image, read_fimg, write_fimg

MAPS_PER_SIDE = 10


class FeatureExtractor(Protocol):
    channels: int
    downsample: int

    def __call__(self, img) -> np.ndarray: ...

    def extract_batch(self, images) -> np.ndarray: ...


class ReferenceExtractor:
    """Three stride-2 3x3 conv blocks (3 -> 16 -> 32 -> C) with ReLU.

    A desk-scale stand-in for a trained seed-counting backbone. Output is
    ``C x ceil(H/8) x ceil(W/8)``.
    """

    downsample = 8

    def __init__(self, channels=32, seed=0, widths=(16, 32), dtype=np.float64):
        self.channels = channels
        rng = np.random.default_rng(seed)
        dims = (3, *widths, channels)
        self.params = {}
        for i, (cin, cout) in enumerate(zip(dims, dims[1:]), start=1):
            self.params[f"conv{i}.w"] = tn.he_uniform(rng, (cout, cin, 3, 3), cin * 9, dtype)
            self.params[f"conv{i}.b"] = np.zeros(cout, dtype=dtype)

    @classmethod
    def from_params(cls, params):
        n = len([k for k in params if k.endswith(".w")])
        ws = [params[f"conv{i}.w"] for i in range(1, n + 1)]
        ext = cls.__new__(cls)
        ext.channels = ws[-1].shape[0]
        ext.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        return ext

    def extract_batch(self, images):
        """(N, H, W, 3) images to (N, C, H/8, W/8) feature maps."""
        x = np.ascontiguousarray(np.transpose(np.asarray(images, dtype=np.float64), (0, 3, 1, 2)))
        if x.shape[1] != 3:
            raise ValueError(f"extractor expects 3-channel images, got {x.shape[1]}")
        n = len([k for k in self.params if k.endswith(".w")])
        for i in range(1, n + 1):
            x = tn.conv2d(x, self.params[f"conv{i}.w"], self.params[f"conv{i}.b"], stride=2, padding=1)
            x = tn.relu(x).data
        return x

    def __call__(self, img):
        return self.extract_batch(as_image(img)[None])[0]


class FileExtractor:
    """Feature maps precomputed elsewhere and stored as FIMG files.

    Frame ``path/to/frame.png`` is looked up as ``path/to/frame.png.fimg``
    unless a mapping is given.
    """

    downsample = 0

    def __init__(self, mapping=None, suffix=".fimg"):
        self.mapping = dict(mapping or {})
        self.suffix = suffix
        self.channels = None

    def load(self, frame_path):
        path = self.mapping.get(str(frame_path), str(frame_path) + self.suffix)
        fmap = read_fimg(path)
        if self.channels is None:
            self.channels = fmap.shape[0]
        return fmap

    def __call__(self, frame_path):
        return self.load(frame_path)

    def extract_batch(self, frame_paths):
        return np.stack([self.load(p) for p in frame_paths])


def export_features(path, fmap):
    write_fimg(path, fmap)


def fuse(side_a, side_b, per_side=MAPS_PER_SIDE):
    """Sum each side's maps and stack the two sums along channels."""
    a = np.asarray(side_a, dtype=np.float64)
    b = np.asarray(side_b, dtype=np.float64)
    if len(a) != per_side or len(b) != per_side:
        raise ValueError(f"fuse needs {per_side} maps per side, got {len(a)} and {len(b)}")
    if a.ndim != 4 or a.shape != b.shape:
        raise ValueError(f"feature map shapes differ: {a.shape[1:]} vs {b.shape[1:]}")
    # summing sorted values makes the result independent of frame order, bit for bit
    return np.concatenate([np.sort(a, axis=0).sum(axis=0), np.sort(b, axis=0).sum(axis=0)], axis=0)


@dataclass
class RegressorConfig:
    conv_channels: int = 64
    kernel: int = 3
    pool: int = 2
    fc_widths: tuple = (256, 64)


class YieldRegressor:
    """conv(3x3, pad 1) -> ReLU -> maxpool(2) -> fc1 -> ReLU -> fc2 -> ReLU -> fc3."""

    def __init__(self, in_shape, config=None, seed=0, dtype=np.float64):
        self.in_shape = tuple(int(d) for d in in_shape)
        self.config = config or RegressorConfig()
        cfg = self.config
        c, h, w = self.in_shape
        rng = np.random.default_rng(seed)
        k = cfg.kernel
        ph, pw = h // cfg.pool, w // cfg.pool
        if ph < 1 or pw < 1:
            raise ValueError(f"input {self.in_shape} too small for {cfg.pool}x{cfg.pool} pooling")
        flat = cfg.conv_channels * ph * pw
        widths = (flat, *cfg.fc_widths, 1)
        p = {
            "conv.w": tn.he_uniform(rng, (cfg.conv_channels, c, k, k), c * k * k, dtype),
            "conv.b": np.zeros(cfg.conv_channels, dtype=dtype),
        }
        for i, (fin, fout) in enumerate(zip(widths, widths[1:]), start=1):
            p[f"fc{i}.w"] = tn.he_uniform(rng, (fout, fin), fin, dtype)
            p[f"fc{i}.b"] = np.zeros(fout, dtype=dtype)
        self.params = {name: tn.Tensor(arr, requires_grad=True, name=name) for name, arr in p.items()}

    @property
    def n_fc(self):
        return len(self.config.fc_widths) + 1

    def forward(self, x):
        """(N, 2C, H, W) fused maps to (N, 1) predictions."""
        p = self.params
        cfg = self.config
        h = tn.conv2d(x, p["conv.w"], p["conv.b"], stride=1, padding=cfg.kernel // 2)
        h = tn.maxpool2d(tn.relu(h), cfg.pool, cfg.pool)
        h = tn.flatten(h)
        for i in range(1, self.n_fc + 1):
            h = tn.linear(h, p[f"fc{i}.w"], p[f"fc{i}.b"])
            if i < self.n_fc:
                h = tn.relu(h)
        return h

    def predict(self, fused):
        x = np.asarray(fused, dtype=self.params["conv.w"].data.dtype)
        single = x.ndim == 3
        if single:
            x = x[None]
        if x.shape[1:] != self.in_shape:
            raise ValueError(f"fused map shape {x.shape[1:]} does not match regressor input {self.in_shape}")
        out = self.forward(tn.Tensor(x)).data[:, 0]
        return float(out[0]) if single else out

    def state_dict(self):
        return {name: t.data for name, t in self.params.items()}

    def load_state_dict(self, state):
        for name, t in self.params.items():
            if name not in state:
                raise KeyError(f"checkpoint lacks {name}")
            arr = np.asarray(state[name], dtype=t.data.dtype)
            if arr.shape != t.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} vs model {t.shape}")
            t.data = arr.copy()


def plot_features(images_a, images_b, extractor):
    """Fused map for one plot from its two sides' sampled frames."""
    return fuse(extractor.extract_batch(images_a), extractor.extract_batch(images_b))


def predict_yield(images_a, images_b, extractor, regressor):
    """Estimated plot yield in t/ha, clamped at zero."""
    return max(0.0, regressor.predict(plot_features(images_a, images_b, extractor)))


@dataclass
class TrainConfig:
    batch_size: int = 8
    epochs: int = 50
    lr: float = 1e-4
    seed: int = 0
    shuffle: bool = True


@dataclass
class TrainResult:
    regressor: YieldRegressor
    history: list = field(default_factory=list)


def fit_regressor(features, targets, regressor=None, config=None):
    """Minimise MSE between regressor output and targets with Adam.

    ``features`` is (N, 2C, H, W). Returns per-epoch mean training loss
    (sample-weighted over mini-batches).
    """
    cfg = config or TrainConfig()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if len(x) == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(x) != len(y):
        raise ValueError(f"{len(x)} feature maps but {len(y)} targets")
    if regressor is None:
        regressor = YieldRegressor(x.shape[1:], seed=cfg.seed)
    dtype = regressor.params["conv.w"].data.dtype
    x = x.astype(dtype, copy=False)
    y = y.astype(dtype, copy=False)
    opt = tn.Adam(regressor.params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    history = []
    n = len(x)
    for _ in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            opt.zero_grad()
            pred = regressor.forward(tn.Tensor(x[idx]))
            loss = tn.mse(pred, y[idx, None])
            loss.backward()
            opt.step()
            total += float(loss.data) * len(idx)
        history.append(total / n)
    return TrainResult(regressor, history)


def train_yield(dataset, extractor, regressor=None, config=None):
    """Train the regression head on ``{plot_id: (images_a, images_b, yield_t_ha)}``.

    The extractor is only run forward; its parameters are never touched.
    """
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    ids = sorted(dataset)
    feats = np.stack([plot_features(dataset[i][0], dataset[i][1], extractor) for i in ids])
    targets = [dataset[i][2] for i in ids]
    return fit_regressor(feats, targets, regressor, config)


def save_model(path, regressor, extractor=None):
    tensors = {f"regressor.{k}": v for k, v in regressor.state_dict().items()}
    tensors["regressor.in_shape"] = np.asarray(regressor.in_shape, dtype=np.float64)
    cfg = regressor.config
    tensors["regressor.config"] = np.asarray([cfg.conv_channels, cfg.kernel, cfg.pool, *cfg.fc_widths],
                                             dtype=np.float64)
    if isinstance(extractor, ReferenceExtractor):
        tensors.update({f"extractor.{k}": v for k, v in extractor.params.items()})
    tn.save_checkpoint(path, tensors)


def load_model(path):
    """Returns ``(regressor, extractor_or_None)`` from a checkpoint."""
    t = tn.load_checkpoint(path)
    in_shape = tuple(int(v) for v in t.pop("regressor.in_shape"))
    cfgv = [int(v) for v in t.pop("regressor.config")]
    cfg = RegressorConfig(cfgv[0], cfgv[1], cfgv[2], tuple(cfgv[3:]))
    reg = YieldRegressor(in_shape, cfg)
    reg.load_state_dict({k[len("regressor."):]: v for k, v in t.items() if k.startswith("regressor.")})
    ext_params = {k[len("extractor."):]: v for k, v in t.items() if k.startswith("extractor.")}
    ext = ReferenceExtractor.from_params(ext_params) if ext_params else None
    return reg, ext


def is_checkpoint(path):
    p = Path(path)
    return p.is_file() and p.read_bytes()[:4] == tn.CKPT_MAGIC
