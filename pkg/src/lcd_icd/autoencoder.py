"""Dense sigmoid autoencoder.

Serves two purposes: its 16-unit bottleneck is the BoLF feature extractor, and
its per-pixel reconstruction error is the change-detection baseline.
"""

import struct
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import numpy.typing as npt
import torch
from torch import nn
from tqdm import tqdm

from .bolf import FeatureVector, as_feature_vector, resize_patch
from .errors import DataError, DimensionMismatchError, DivergedTrainingError

HIDDEN_DIMS = (128, 64, 32, 16, 16, 32, 64, 128)
FEATURE_SIDE = 32
BASELINE_SIDE = 128
DEFAULT_EPOCHS = 200
DEFAULT_LEARNING_RATE = 0.1
DEFAULT_BATCH_SIZE = 16

MODEL_MAGIC = b"LCDAE\0"
MODEL_VERSION = 1


class DenseAutoencoder(nn.Module):
    """Stack of Linear + sigmoid layers; every layer, output included, is sigmoid."""

    def __init__(self, layer_dims: Sequence[int]):
        super().__init__()
        self.layer_dims = tuple(int(d) for d in layer_dims)
        if len(self.layer_dims) < 3:
            raise DataError(f"autoencoder needs a hidden layer, got dims {self.layer_dims}")
        self.layers = nn.ModuleList(
            nn.Linear(d_in, d_out, dtype=torch.float64)
            for d_in, d_out in zip(self.layer_dims[:-1], self.layer_dims[1:])
        )
        # first narrowest hidden layer is the code layer
        hidden = self.layer_dims[1:-1]
        self.code_layer = 1 + hidden.index(min(hidden))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for layer in self.layers:
            x = torch.sigmoid(layer(x))
        return x

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        for layer in self.layers[: self.code_layer]:
            x = torch.sigmoid(layer(x))
        return x


@dataclass
class AeModel:
    """A trained (or freshly initialized) autoencoder plus its metadata.

    Treat instances as immutable once training has returned them; encode and
    reconstruct never modify the network.
    """

    layer_dims: tuple[int, ...]
    input_side: int
    rng_seed: int
    network: DenseAutoencoder = field(repr=False)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def feature_dim(self) -> int:
        return min(self.layer_dims[1:-1])

    @property
    def weights(self) -> list[npt.NDArray[np.float64]]:
        return [layer.weight.detach().numpy().copy() for layer in self.network.layers]

    @property
    def biases(self) -> list[npt.NDArray[np.float64]]:
        return [layer.bias.detach().numpy().copy() for layer in self.network.layers]

    def _as_input(self, pixels: npt.ArrayLike) -> torch.Tensor:
        x = np.array(pixels, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.input_dim:
            raise DimensionMismatchError(
                f"input length {x.shape[0]} != model input {self.input_dim}"
            )
        return torch.from_numpy(x)

    def encode(self, pixels: npt.ArrayLike) -> FeatureVector:
        """Bottleneck activations for one flattened side x side patch."""
        with torch.no_grad():
            code = self.network.encode(self._as_input(pixels))
        return as_feature_vector(code.numpy())

    def reconstruct(self, pixels: npt.ArrayLike) -> npt.NDArray[np.float64]:
        with torch.no_grad():
            return self.network(self._as_input(pixels)).numpy().copy()


def layer_dims_for(input_side: int, hidden: Sequence[int] = HIDDEN_DIMS) -> tuple[int, ...]:
    d_in = input_side * input_side
    return (d_in, *hidden, d_in)


def init_model(
    input_side: int,
    rng_seed: int,
    layer_dims: Sequence[int] | None = None,
) -> AeModel:
    """Xavier-uniform weights drawn from a seeded generator, zero biases."""
    dims = tuple(layer_dims) if layer_dims is not None else layer_dims_for(input_side)
    if dims[0] != input_side * input_side or dims[-1] != dims[0]:
        raise DataError(f"layer dims {dims} do not match input side {input_side}")
    network = DenseAutoencoder(dims)
    generator = torch.Generator().manual_seed(rng_seed)
    with torch.no_grad():
        for layer in network.layers:
            fan_out, fan_in = layer.weight.shape
            bound = (6.0 / (fan_in + fan_out)) ** 0.5
            u = torch.rand(layer.weight.shape, generator=generator, dtype=torch.float64)
            layer.weight.copy_((2.0 * u - 1.0) * bound)
            layer.bias.zero_()
    return AeModel(dims, input_side, rng_seed, network)


def reconstruction_mse(model: AeModel, images: npt.ArrayLike) -> float:
    data = torch.from_numpy(np.array(images, dtype=np.float64))
    with torch.no_grad():
        return float(nn.functional.mse_loss(model.network(data), data))


def train_ae(
    images: Sequence[npt.ArrayLike] | npt.ArrayLike,
    epochs: int = DEFAULT_EPOCHS,
    learning_rate: float = DEFAULT_LEARNING_RATE,
    rng_seed: int = 0,
    *,
    input_side: int | None = None,
    layer_dims: Sequence[int] | None = None,
    batch_size: int = DEFAULT_BATCH_SIZE,
    verbose: bool = False,
) -> AeModel:
    """Train an autoencoder by mini-batch SGD on mean squared error.

    Args:
        images: Flattened pixel vectors in [0, 1], all the same length.
        epochs: Passes over the training set.
        learning_rate: Fixed SGD step size.
        rng_seed: Seeds weight init and batch shuffling; training is
            deterministic given the seed.
        input_side: Side of the square input. Inferred from the vector length
            when omitted.
        layer_dims: Full layer structure; defaults to the 128-64-32-16-16-32-64-128
            hidden stack around the input.
        batch_size: Mini-batch size.
        verbose: Show a tqdm progress bar.

    Returns:
        The trained model.

    Raises:
        DataError: Empty training set or ragged inputs.
        DivergedTrainingError: Loss became non-finite.
    """
    data = np.array(images, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise DataError("training set is empty or not a list of equal-length vectors")
    if input_side is None:
        input_side = int(round(data.shape[1] ** 0.5))
    model = init_model(input_side, rng_seed, layer_dims)
    if data.shape[1] != model.input_dim:
        raise DimensionMismatchError(
            f"training vectors have length {data.shape[1]}, model expects {model.input_dim}"
        )

    tensor = torch.from_numpy(data)
    generator = torch.Generator().manual_seed(rng_seed + 1)
    optimizer = torch.optim.SGD(model.network.parameters(), lr=learning_rate)
    n = tensor.shape[0]

    progress = tqdm(range(1, epochs + 1), desc="train-ae", disable=not verbose)
    for epoch in progress:
        order = torch.randperm(n, generator=generator)
        total = 0.0
        for start in range(0, n, batch_size):
            batch = tensor[order[start:start + batch_size]]
            optimizer.zero_grad()
            loss = nn.functional.mse_loss(model.network(batch), batch)
            loss.backward()
            optimizer.step()
            total += loss.item() * batch.shape[0]
        epoch_loss = total / n
        if not np.isfinite(epoch_loss):
            raise DivergedTrainingError(epoch, epoch_loss)
        progress.set_postfix(mse=f"{epoch_loss:.5f}")
    return model


def loss_gradients(model: AeModel, images: npt.ArrayLike) -> list[npt.NDArray[np.float64]]:
    """Backpropagated MSE gradients, one array per parameter tensor."""
    data = torch.from_numpy(np.array(images, dtype=np.float64))
    model.network.zero_grad()
    nn.functional.mse_loss(model.network(data), data).backward()
    grads = [p.grad.detach().numpy().copy() for p in model.network.parameters()]
    model.network.zero_grad()
    return grads


def check_gradients(model: AeModel, images: npt.ArrayLike, epsilon: float = 1e-6) -> float:
    """Largest relative error between backprop and central finite differences.

    The relative error of each parameter is |a - n| / max(|a|, |n|, 1e-6), the
    floor keeping near-zero gradients from dominating.
    """
    data = torch.from_numpy(np.array(images, dtype=np.float64))
    analytic = loss_gradients(model, images)
    worst = 0.0
    with torch.no_grad():
        for param, grad in zip(model.network.parameters(), analytic):
            flat = param.view(-1)
            for i, a in enumerate(grad.reshape(-1)):
                original = float(flat[i])
                flat[i] = original + epsilon
                plus = float(nn.functional.mse_loss(model.network(data), data))
                flat[i] = original - epsilon
                minus = float(nn.functional.mse_loss(model.network(data), data))
                flat[i] = original
                numeric = (plus - minus) / (2.0 * epsilon)
                denom = max(abs(a), abs(numeric), 1e-6)
                worst = max(worst, abs(a - numeric) / denom)
    return worst


def torch_gradcheck(model: AeModel, images: npt.ArrayLike, epsilon: float = 1e-6, atol: float = 1e-5) -> bool:
    """Run torch.autograd.gradcheck on the training loss as a function of every parameter.

    Raises:
        RuntimeError: Backprop and finite differences disagree beyond
            ``atol`` (torch raises its GradcheckError subclass).
    """
    data = torch.from_numpy(np.array(images, dtype=np.float64))
    names = [name for name, _ in model.network.named_parameters()]
    params = tuple(p.detach().clone().requires_grad_(True) for p in model.network.parameters())

    def loss(*values: torch.Tensor) -> torch.Tensor:
        out = torch.func.functional_call(model.network, dict(zip(names, values)), (data,))
        return nn.functional.mse_loss(out, data)

    return torch.autograd.gradcheck(loss, params, eps=epsilon, atol=atol)


def upscale_nearest(raster: npt.NDArray, width: int, height: int) -> npt.NDArray:
    """Nearest-neighbour resample of a 2-D raster to height x width."""
    rows = (np.arange(height) * raster.shape[0]) // height
    cols = (np.arange(width) * raster.shape[1]) // width
    return raster[np.ix_(rows, cols)]


def reconstruction_error_map(
    model: AeModel,
    pixels: npt.ArrayLike,
    width: int,
    height: int,
) -> npt.NDArray[np.float64]:
    """Per-pixel squared reconstruction error at the original resolution.

    Args:
        model: Autoencoder whose input side matches ``pixels``.
        pixels: The image already resized to model.input_side squared.
        width: Original image width.
        height: Original image height.

    Returns:
        (height, width) array of (input - reconstruction)**2, upscaled by
        nearest neighbour.
    """
    x = np.asarray(pixels, dtype=np.float64).reshape(-1)
    if x.shape[0] != model.input_dim:
        raise DimensionMismatchError(
            f"image has {x.shape[0]} pixels, model expects {model.input_dim}"
        )
    side = model.input_side
    error = ((x - model.reconstruct(x)) ** 2).reshape(side, side)
    return upscale_nearest(error, width, height)


def prepare_input(pixels: npt.ArrayLike, side: int) -> npt.NDArray[np.float64]:
    """Resize a full (H, W) image to the model input and flatten it."""
    return resize_patch(pixels, side).reshape(-1)


def save_model(model: AeModel, path: Path) -> None:
    """Write the versioned little-endian binary model container."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dims = model.layer_dims
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<III", MODEL_VERSION, model.input_side, len(dims)))
        f.write(struct.pack(f"<{len(dims)}I", *dims))
        f.write(struct.pack("<q", model.rng_seed))
        for weight, bias in zip(model.weights, model.biases):
            f.write(weight.astype("<f8").tobytes(order="C"))
            f.write(bias.astype("<f8").tobytes())


def load_model(path: Path) -> AeModel:
    """Read a model written by save_model.

    Raises:
        DataError: Bad magic, unsupported version or truncated file.
    """
    path = Path(path)
    raw = path.read_bytes()
    if not raw.startswith(MODEL_MAGIC):
        raise DataError(f"{path}: not an lcd-icd model file")
    offset = len(MODEL_MAGIC)
    try:
        version, input_side, n_dims = struct.unpack_from("<III", raw, offset)
        offset += 12
        if version != MODEL_VERSION:
            raise DataError(f"{path}: unsupported model version {version}")
        dims = struct.unpack_from(f"<{n_dims}I", raw, offset)
        offset += 4 * n_dims
        (seed,) = struct.unpack_from("<q", raw, offset)
        offset += 8
    except struct.error as e:
        raise DataError(f"{path}: truncated header ({e})") from e

    model = init_model(input_side, seed, dims)
    with torch.no_grad():
        for layer in model.network.layers:
            for param in (layer.weight, layer.bias):
                count = param.numel()
                end = offset + 8 * count
                if end > len(raw):
                    raise DataError(f"{path}: truncated weights")
                values = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
                param.copy_(torch.from_numpy(values.reshape(param.shape).astype(np.float64)))
                offset = end
    if offset != len(raw):
        raise DataError(f"{path}: {len(raw) - offset} trailing bytes")
    return model
