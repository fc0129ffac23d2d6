"""Convolutional network compiled onto the dual CeNN grids.

Activations travel in offset form: a ReLU output r >= 0 is stored as the
cell output y = r - 1, so a saturating cell can hold it. The ReLU stage
computes y = f(s - 1) from a conv output s in [-1, 1]; max pooling is built
from shift, difference and sum stages (see :func:`pool_templates`). The
final fully connected layer is evaluated numerically on the last grid.
"""

from __future__ import annotations

import gzip
import io
import json
import logging
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cenn_engine import (
    CennGrid, DeviceModel, ScheduledStage, StageTiming, Template, quantize_weights, run_schedule,
)
from .errors import (
    ChecksumError, CompileError, FormatError, ParameterError, StructuralError, TrainingError,
    VersionError,
)
from .irmen_cell import soft_clamp

log = logging.getLogger(__name__)

IMAGE_SIZE = 28
N_CLASSES = 10
CONV_RELU_STAGES = 2
POOL_STAGES = 12
DEFAULT_SHARPNESS = 36.0

# ---------------------------------------------------------------- network spec


@dataclass(frozen=True)
class Layer:
    kind: str  # conv | relu | pool | fc
    channels: int = 0
    kernel: int = 3

    def __post_init__(self):
        if self.kind not in ("conv", "relu", "pool", "fc"):
            raise CompileError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("conv", "fc") and self.channels < 1:
            raise CompileError(f"{self.kind} layer needs a positive width")

    def describe(self) -> str:
        if self.kind == "conv":
            return f"conv({self.channels}, {self.kernel}x{self.kernel})"
        if self.kind == "fc":
            return f"fc({self.channels})"
        return self.kind


def conv(channels, kernel=3):
    return Layer("conv", channels, kernel)


def relu():
    return Layer("relu")


def pool():
    return Layer("pool")


def fc(out=N_CLASSES):
    return Layer("fc", out)


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    input_size: int = IMAGE_SIZE

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    @classmethod
    def default(cls, channels=(4, 8)):
        layers = []
        for c in channels:
            layers += [conv(c), relu(), pool()]
        return cls(tuple(layers) + (fc(N_CLASSES),))

    @classmethod
    def from_strings(cls, items, input_size=IMAGE_SIZE):
        """Parse ["conv:8", "relu", "pool", "fc:10"]."""
        layers = []
        for s in items:
            kind, _, arg = str(s).partition(":")
            if kind in ("conv", "fc"):
                if not arg:
                    raise CompileError(f"layer {s!r} needs a width, e.g. {kind}:8")
                width, _, k = arg.partition("x")
                layers.append(Layer(kind, int(width), int(k) if k else 3))
            else:
                layers.append(Layer(kind))
        return cls(tuple(layers), input_size)

    def to_strings(self):
        out = []
        for ly in self.layers:
            if ly.kind == "conv":
                out.append(f"conv:{ly.channels}" + (f"x{ly.kernel}" if ly.kernel != 3 else ""))
            elif ly.kind == "fc":
                out.append(f"fc:{ly.channels}")
            else:
                out.append(ly.kind)
        return out

    def conv_layers(self):
        return [ly for ly in self.layers if ly.kind == "conv"]

    def shapes(self):
        """(channels, size) of the plane feeding each layer, plus the FC input size."""
        c, n = 1, self.input_size
        stride = 1
        out = []
        for ly in self.layers:
            out.append((c, n // stride))
            if ly.kind == "conv":
                n //= stride
                stride = 1
                c = ly.channels
            elif ly.kind == "pool":
                stride = 2
        return out, (c, n // stride)

    def fc_inputs(self) -> int:
        _, (c, n) = self.shapes()
        return c * n * n


# ---------------------------------------------------------------- weights


@dataclass
class WeightBundle:
    conv_B: list  # per conv layer (out, in, 3, 3)
    conv_z: list  # per conv layer (out,)
    fc_W: np.ndarray  # (classes, features)
    fc_b: np.ndarray
    metadata: dict = field(default_factory=dict)

    def check(self, spec: NetworkSpec):
        convs = spec.conv_layers()
        if len(convs) != len(self.conv_B) or len(self.conv_B) != len(self.conv_z):
            raise StructuralError(f"{len(self.conv_B)} conv weight sets for {len(convs)} conv layers")
        c_in = 1
        for i, (ly, B, z) in enumerate(zip(convs, self.conv_B, self.conv_z)):
            want = (ly.channels, c_in, ly.kernel, ly.kernel)
            if B.shape != want or z.shape != (ly.channels,):
                raise StructuralError(f"conv {i}: weights {B.shape}/{z.shape}, expected {want}")
            c_in = ly.channels
        fcs = [ly for ly in spec.layers if ly.kind == "fc"]
        if fcs:
            want = (fcs[0].channels, spec.fc_inputs())
            if self.fc_W.shape != want or self.fc_b.shape != (want[0],):
                raise StructuralError(f"fc weights {self.fc_W.shape}, expected {want}")

    @property
    def sharpness(self) -> float:
        return float(self.metadata.get("transfer_sharpness", DEFAULT_SHARPNESS))

    def arrays(self):
        out = []
        for i, (B, z) in enumerate(zip(self.conv_B, self.conv_z)):
            out += [(f"conv{i}.B", B), (f"conv{i}.z", z)]
        return out + [("fc.W", self.fc_W), ("fc.b", self.fc_b)]

    @classmethod
    def from_arrays(cls, named, metadata):
        d = dict(named)
        n = sum(1 for k in d if k.endswith(".B"))
        try:
            return cls(
                [d[f"conv{i}.B"] for i in range(n)],
                [d[f"conv{i}.z"] for i in range(n)],
                d["fc.W"], d["fc.b"], metadata,
            )
        except KeyError as e:
            raise FormatError(f"weight file lacks array {e}") from None

    def equals(self, other: "WeightBundle") -> bool:
        a, b = self.arrays(), other.arrays()
        return (
            [k for k, _ in a] == [k for k, _ in b]
            and all(np.array_equal(x, y) for (_, x), (_, y) in zip(a, b))
            and self.metadata == other.metadata
        )


WEIGHT_MAGIC = b"IRMW"
WEIGHT_VERSION = 1


def _encode_weights(bundle: WeightBundle) -> bytes:
    meta = json.dumps(bundle.metadata, sort_keys=True, separators=(",", ":")).encode()
    arrays = bundle.arrays()
    out = io.BytesIO()
    out.write(WEIGHT_MAGIC)
    out.write(struct.pack("<III", WEIGHT_VERSION, len(arrays), len(meta)))
    out.write(meta)
    for name, a in arrays:
        a = np.asarray(a)
        nb = name.encode()
        out.write(struct.pack("<HB", len(nb), a.ndim))
        out.write(nb)
        out.write(struct.pack(f"<{a.ndim}I", *a.shape))
        out.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    body = out.getvalue()
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def _decode_weights(data: bytes) -> WeightBundle:
    if len(data) < 20 or data[:4] != WEIGHT_MAGIC:
        raise FormatError("not a weight bundle (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ChecksumError("weight bundle checksum mismatch")
    version, n, meta_len = struct.unpack_from("<III", body, 4)
    if version != WEIGHT_VERSION:
        raise VersionError(f"weight bundle version {version}, this build reads {WEIGHT_VERSION}")
    pos = 16
    try:
        meta = json.loads(body[pos:pos + meta_len])
        pos += meta_len
        named = []
        for _ in range(n):
            ln, ndim = struct.unpack_from("<HB", body, pos)
            pos += 3
            name = body[pos:pos + ln].decode()
            pos += ln
            shape = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            if pos + 8 * count > len(body):
                raise FormatError("weight bundle truncated")
            a = np.frombuffer(body, dtype="<f8", count=count, offset=pos).reshape(shape)
            pos += 8 * count
            named.append((name, a.astype(np.float64)))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"weight bundle malformed: {e}") from None
    if pos != len(body):
        raise FormatError("trailing bytes in weight bundle")
    return WeightBundle.from_arrays(named, meta)


def export_weights(bundle: WeightBundle, path):
    from .io_utils import atomic_write_bytes

    atomic_write_bytes(path, _encode_weights(bundle))


def import_weights(path) -> WeightBundle:
    return _decode_weights(Path(path).read_bytes())


# ---------------------------------------------------------------- compile


def shift_template(di, dj, name=""):
    B = np.zeros((3, 3))
    B[1 + di, 1 + dj] = 1.0
    return Template(np.zeros((3, 3)), B, 0.0, boundary=-1.0, name=name)


def _center(w):
    t = np.zeros((3, 3))
    t[1, 1] = w
    return t


def relu_template(name="relu"):
    return Template(np.zeros((3, 3)), _center(1.0), -1.0, boundary=-1.0, name=name)


POOL_DIRECTIONS = (("east", 0, 1), ("west", 0, -1), ("south", 1, 0), ("north", -1, 0))


def pool_templates():
    """Twelve stages computing a 3x3 running max of offset activations.

    Per direction: copy the neighbour's value onto the other grid, form
    relu(a - a') - 1 on the original grid (its own value enters through A),
    then add it back onto the copy to get max(a, a') - 1.
    """
    out = []
    for d, di, dj in POOL_DIRECTIONS:
        out.append(shift_template(di, dj, f"pool-{d}-shift"))
        out.append(Template(_center(1.0), _center(-1.0), -1.0, boundary=-1.0,
                            name=f"pool-{d}-diff"))
        out.append(Template(_center(1.0), _center(1.0), 1.0, boundary=-1.0,
                            name=f"pool-{d}-max"))
    return out


@dataclass
class StageSchedule:
    stages: list
    layer_stages: list  # (layer description, stage count)
    has_fc: bool
    fc_stride: int = 1

    def __len__(self):
        return len(self.stages)

    @property
    def n_stages(self) -> int:
        return len(self.stages)


def compile_network(spec: NetworkSpec, weights: WeightBundle | None = None,
                    bits: int | None = None) -> StageSchedule:
    """Map every layer but the final FC onto CeNN stages."""
    templates = []
    layer_stages = []
    convs = iter(range(len(spec.conv_layers())))
    stride = 1
    first = True
    layers = list(spec.layers)
    if weights is not None:
        weights.check(spec)
    for i, ly in enumerate(layers):
        if ly.kind == "conv":
            if ly.kernel > 3:
                raise CompileError(f"layer {i} {ly.describe()}: kernel exceeds the 3x3 neighbourhood")
            if i + 1 >= len(layers) or layers[i + 1].kind != "relu":
                raise CompileError(f"layer {i} {ly.describe()}: conv must be followed by relu")
            c = next(convs)
            if weights is None:
                raise CompileError("conv layers need weights")
            B = weights.conv_B[c]
            if ly.kernel < 3:
                pad = (3 - ly.kernel) // 2
                B = np.pad(B, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
            t = Template(np.zeros((3, 3)), B, weights.conv_z[c], boundary=0.0 if first else -1.0,
                         input_stride=stride, name=f"conv{c}")
            templates += [(t, f"L{i}:{ly.describe()}"), (relu_template(), f"L{i}:{ly.describe()}")]
            layer_stages.append((f"{ly.describe()}+relu", CONV_RELU_STAGES))
            stride = 1
            first = False
        elif ly.kind == "relu":
            if i == 0 or layers[i - 1].kind != "conv":
                raise CompileError(f"layer {i}: relu is only mapped directly after a conv layer")
        elif ly.kind == "pool":
            if first:
                raise CompileError(f"layer {i}: pooling needs offset activations from a conv+relu")
            if stride != 1:
                raise CompileError(f"layer {i}: consecutive pooling layers are not mapped")
            templates += [(t, f"L{i}:pool") for t in pool_templates()]
            layer_stages.append(("pool", POOL_STAGES))
            stride = 2
        elif ly.kind == "fc":
            if i != len(layers) - 1:
                raise CompileError(f"layer {i}: fully connected layer must be last")
    stages = []
    for k, (t, tag) in enumerate(templates):
        stages.append(ScheduledStage(quantize_weights(t, bits), "A" if k % 2 == 0 else "B",
                                     tag.split(":")[0], t.name or tag))
    has_fc = bool(layers) and layers[-1].kind == "fc"
    return StageSchedule(stages, layer_stages, has_fc, stride)


# ---------------------------------------------------------------- inference


def features(grid_out: np.ndarray, stride: int) -> np.ndarray:
    return grid_out[:, ::stride, ::stride].ravel()


def _check_image(image):
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (IMAGE_SIZE, IMAGE_SIZE):
        raise StructuralError(f"image must be {IMAGE_SIZE}x{IMAGE_SIZE}, got {image.shape}")
    return image


def infer(image, schedule: StageSchedule, weights: WeightBundle, mode="ideal", *,
          device: DeviceModel | None = None, timing: StageTiming | None = None,
          noise_keys=None, taps=None) -> np.ndarray:
    """Class scores for one image in [-1, 1].

    ``mode`` is "ideal" (analytic transfer with the bundle's sharpness) or
    "device" (every magnet simulated; needs ``device``).
    """
    image = _check_image(image)
    if mode not in ("ideal", "device"):
        raise ParameterError(f"unknown inference mode {mode!r}")
    if not schedule.stages:
        out = image[None]
    else:
        grids = {"A": CennGrid.loaded(image, "A"), "B": CennGrid.at_rest((1, 1, 1), "B")}
        if mode == "ideal":
            p = weights.sharpness
            res = run_schedule(grids, schedule.stages, timing, transfer=lambda u: soft_clamp(u, p),
                               taps=taps)
        else:
            if device is None:
                raise ParameterError("device mode needs a device model")
            res = run_schedule(grids, schedule.stages, timing, device=device,
                               noise_keys=noise_keys, taps=taps)
        out = res.output
    if not schedule.has_fc:
        return out.ravel()
    return weights.fc_W @ features(out, schedule.fc_stride) + weights.fc_b


def image_noise_keys(seed: int, index: int):
    """Noise keys indexed by (seed, image, stage, purpose); independent of run order."""
    codes = {"read": 0, "drive": 1, "tap": 2}

    def keys(stage, what):
        ss = np.random.SeedSequence(int(seed), spawn_key=(int(index), int(stage), codes[what]))
        return int(ss.generate_state(1, dtype=np.uint64)[0])

    return keys


@dataclass
class Dataset:
    images: np.ndarray  # (n, 28, 28) in [-1, 1]
    labels: np.ndarray  # (n,) int

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise StructuralError("image and label counts differ")

    def __len__(self):
        return len(self.labels)

    def subset(self, n=None, start=0):
        stop = len(self) if n is None else min(len(self), start + n)
        return Dataset(self.images[start:stop], self.labels[start:stop])


def _infer_one(args):
    i, image, schedule, weights, mode, device, timing, seed = args
    keys = image_noise_keys(seed, i) if mode == "device" else None
    return infer(image, schedule, weights, mode, device=device, timing=timing, noise_keys=keys)


def predict(dataset: Dataset, schedule, weights, mode="ideal", *, device=None, timing=None,
            seed=0, jobs=1, offset=0) -> np.ndarray:
    """Scores (n, classes) for every image; parallel over images when jobs > 1."""
    work = [(offset + i, img, schedule, weights, mode, device, timing, seed)
            for i, img in enumerate(dataset.images)]
    if jobs > 1 and len(work) > 1:
        from multiprocessing import get_context

        with get_context("fork").Pool(jobs) as pool:
            scores = pool.map(_infer_one, work, chunksize=max(1, len(work) // (4 * jobs)))
    else:
        scores = [_infer_one(w) for w in work]
    return np.array(scores)


def evaluate(dataset: Dataset, schedule, weights, mode="ideal", **kw) -> float:
    """Fraction of images whose argmax score matches the label."""
    if len(dataset) == 0:
        raise ParameterError("empty dataset")
    scores = predict(dataset, schedule, weights, mode, **kw)
    return float(np.mean(np.argmax(scores, axis=1) == dataset.labels))


# ---------------------------------------------------------------- MNIST IDX

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
DATA_ENV = "IRMEN_DATA_DIR"
SUBSET_PREFIX = "mnist5k"
TRAIN_COUNT = 4500


def _open(path):
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as e:
            raise FormatError(f"{path}: corrupt gzip stream ({e})") from None
    return raw


def read_idx(path) -> np.ndarray:
    raw = _open(path)
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic == IDX_IMAGES:
        if len(raw) < 16:
            raise FormatError(f"{path}: truncated IDX header")
        n, rows, cols = struct.unpack(">III", raw[4:16])
        shape, off = (n, rows, cols), 16
    elif magic == IDX_LABELS:
        n = struct.unpack(">I", raw[4:8])[0]
        shape, off = (n,), 8
    else:
        raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}")
    need = int(np.prod(shape))
    if len(raw) - off < need:
        raise FormatError(f"{path}: truncated, {len(raw) - off} of {need} bytes present")
    if len(raw) - off > need:
        raise FormatError(f"{path}: {len(raw) - off - need} trailing bytes")
    return np.frombuffer(raw, dtype=np.uint8, offset=off, count=need).reshape(shape)


def write_idx(path, array):
    a = np.asarray(array, dtype=np.uint8)
    if a.ndim == 3:
        head = struct.pack(">IIII", IDX_IMAGES, *a.shape)
    elif a.ndim == 1:
        head = struct.pack(">II", IDX_LABELS, a.shape[0])
    else:
        raise StructuralError("IDX writer handles image stacks and label vectors only")
    data = head + a.tobytes()
    if str(path).endswith(".gz"):
        data = gzip.compress(data, mtime=0)
    from .io_utils import atomic_write_bytes

    atomic_write_bytes(path, data)


def scale_pixels(raw):
    """0..255 to [-1, 1]."""
    return np.asarray(raw, dtype=np.float64) / 127.5 - 1.0


def data_dir(override=None) -> Path:
    if override:
        return Path(override)
    env = os.environ.get(DATA_ENV)
    if env:
        return Path(env)
    return Path(__file__).resolve().parent / "data"


def _find(directory: Path, prefix: str, kind: str) -> Path:
    for name in (f"{prefix}-{kind}-idx{'3' if kind == 'images' else '1'}-ubyte", ):
        for cand in (directory / name, directory / (name + ".gz")):
            if cand.exists():
                return cand
    raise FileNotFoundError(
        f"no {prefix} {kind} IDX file in {directory}; point {DATA_ENV} or the io.data_dir "
        f"setting at a directory holding {prefix}-{kind}-idx*-ubyte[.gz]"
    )


def load_mnist(path=None, prefix=SUBSET_PREFIX) -> Dataset:
    """Load an images/labels IDX pair from a directory and scale pixels to [-1, 1].

    ``prefix`` selects the file pair, e.g. "t10k" for the official test set.
    """
    directory = data_dir(path)
    if not directory.is_dir():
        raise FileNotFoundError(f"data directory {directory} does not exist; set {DATA_ENV}")
    images = read_idx(_find(directory, prefix, "images"))
    labels = read_idx(_find(directory, prefix, "labels"))
    if images.ndim != 3 or labels.ndim != 1:
        raise FormatError("images file must hold a 3-d stack and labels file a vector")
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} images but {len(labels)} labels")
    if images.shape[1:] != (IMAGE_SIZE, IMAGE_SIZE):
        raise FormatError(f"images are {images.shape[1:]}, expected 28x28")
    if labels.size and labels.max() >= N_CLASSES:
        raise FormatError("label outside 0..9")
    return Dataset(scale_pixels(images), labels.astype(np.int64))


def default_split(path=None):
    """Training and held-out evaluation sets from the bundled subset."""
    ds = load_mnist(path)
    return ds.subset(TRAIN_COUNT), ds.subset(None, TRAIN_COUNT)


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 12
    batch_size: int = 50
    lr: float = 0.01
    weight_decay: float = 0.0
    seed: int = 0
    sharpness: float = DEFAULT_SHARPNESS
    limit: int | None = None  # use only the first n training images


def _torch_forward(spec, params, x, sharpness):
    """Template algebra of the compiled schedule, vectorized over a batch."""
    import torch

    def f(u):
        a = u.abs()
        lg = torch.log(a.clamp_min(1e-300))
        return torch.where(a == 0, u, u * torch.exp(-torch.nn.functional.softplus(sharpness * lg)
                                                   / sharpness))

    def shifted(y, di, dj, stride, boundary):
        n, c, h, w = y.shape
        oh, ow = h // stride, w // stride
        yp = torch.nn.functional.pad(y, (stride, stride, stride, stride), value=boundary)
        r0, c0 = stride + di * stride, stride + dj * stride
        return yp[:, :, r0:r0 + stride * oh:stride, c0:c0 + stride * ow:stride]

    y = x[:, None]
    stride, first, ci = 1, True, 0
    for ly in spec.layers:
        if ly.kind == "conv":
            B, z = params[2 * ci], params[2 * ci + 1]
            boundary = 0.0 if first else -1.0
            u = 0
            for k in range(9):
                di, dj = k // 3 - 1, k % 3 - 1
                nb = shifted(y, di, dj, stride, boundary)
                u = u + torch.clamp(B[None, :, :, k // 3, k % 3, None, None] * nb[:, None],
                                    -1, 1).sum(2)
            s = f(u + torch.clamp(z, -1, 1)[None, :, None, None])
            y = f(s - 1.0)
            stride, first, ci = 1, False, ci + 1
        elif ly.kind == "pool":
            for _, di, dj in POOL_DIRECTIONS:
                cp = f(shifted(y, di, dj, 1, -1.0))
                r = f(y - cp - 1.0)
                y = f(r + cp + 1.0)
            stride = 2
    feats = y[:, :, ::stride, ::stride].reshape(y.shape[0], -1)
    return feats @ params[-2].T + params[-1]


def _init_params(spec, gen):
    import torch

    params = []
    c_in = 1
    for ly in spec.conv_layers():
        fan = 9 * c_in
        params.append(torch.randn(ly.channels, c_in, 3, 3, generator=gen, dtype=torch.float64)
                      * (1.0 / np.sqrt(fan)))
        params.append(torch.zeros(ly.channels, dtype=torch.float64))
        c_in = ly.channels
    nf = spec.fc_inputs()
    params.append(torch.randn(N_CLASSES, nf, generator=gen, dtype=torch.float64) / np.sqrt(nf))
    params.append(torch.zeros(N_CLASSES, dtype=torch.float64))
    for p in params:
        p.requires_grad_(True)
    return params


def forward_batch(spec: NetworkSpec, weights: WeightBundle, images) -> np.ndarray:
    """Ideal-mode scores for a batch via the vectorized algebra (float64)."""
    import torch

    params = [torch.from_numpy(np.asarray(a, dtype=np.float64)) for _, a in weights.arrays()]
    x = torch.from_numpy(np.asarray(images, dtype=np.float64))
    with torch.no_grad():
        return _torch_forward(spec, params, x, weights.sharpness).numpy()


def train_surrogate(spec: NetworkSpec, train: Dataset, cfg: TrainConfig | None = None,
                    on_epoch=None) -> WeightBundle:
    """Mini-batch Adam on the ideal-mode network; returns the trained bundle.

    Deterministic for a fixed seed: single-threaded float64 with a seeded
    generator for both initialization and shuffling.
    """
    import torch

    cfg = cfg or TrainConfig()
    if spec.layers[-1].kind != "fc" or spec.layers[-1].channels != N_CLASSES:
        raise CompileError("the surrogate trainer expects a final fc(10) layer")
    compile_network(spec, _placeholder_weights(spec))  # raises on unmappable specs
    data = train if cfg.limit is None else train.subset(cfg.limit)
    if len(data) == 0:
        raise ParameterError("empty training set")
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    gen = torch.Generator().manual_seed(cfg.seed)
    params = _init_params(spec, gen)
    opt = torch.optim.Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    x_all = torch.from_numpy(np.ascontiguousarray(data.images, dtype=np.float64))
    y_all = torch.from_numpy(np.asarray(data.labels, dtype=np.int64))
    history = []
    for epoch in range(cfg.epochs):
        order = torch.randperm(len(data), generator=gen)
        total, count = 0.0, 0
        for start in range(0, len(data), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            scores = _torch_forward(spec, params, x_all[idx], cfg.sharpness)
            loss = torch.nn.functional.cross_entropy(scores, y_all[idx])
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"loss became {loss.item()} in epoch {epoch}",
                    {"epoch": epoch, "batch_start": start, "history": history},
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        history.append(total / count)
        log.info("epoch %d loss %.4f", epoch, history[-1])
        if on_epoch:
            on_epoch(epoch, history[-1])
    arrays = [p.detach().numpy().copy() for p in params]
    n_conv = len(spec.conv_layers())
    meta = {
        "spec": spec.to_strings(),
        "transfer": "soft-clamp",
        "transfer_sharpness": float(cfg.sharpness),
        "precision": "unlimited",
        "train": {"epochs": cfg.epochs, "batch_size": cfg.batch_size, "lr": cfg.lr,
                  "seed": cfg.seed, "images": len(data), "loss_history": history},
    }
    return WeightBundle(arrays[0:2 * n_conv:2], arrays[1:2 * n_conv:2], arrays[-2], arrays[-1], meta)


def _placeholder_weights(spec: NetworkSpec, fill=0.0) -> WeightBundle:
    c_in = 1
    Bs, zs = [], []
    for ly in spec.conv_layers():
        Bs.append(np.full((ly.channels, c_in, ly.kernel, ly.kernel), float(fill)))
        zs.append(np.full(ly.channels, float(fill)))
        c_in = ly.channels
    n_out = spec.layers[-1].channels if spec.layers and spec.layers[-1].kind == "fc" else N_CLASSES
    return WeightBundle(Bs, zs, np.zeros((n_out, spec.fc_inputs())), np.zeros(n_out), {})


def bundled_weights_path() -> Path:
    return Path(__file__).resolve().parent / "data" / "default.irmw"
