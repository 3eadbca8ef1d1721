"""Colour-swatch toy data and binary PPM (P6) image I/O.

Images are uint8 arrays in channel-first layout ``(3, H, W)``; batches are
``(N, 3, H, W)``.
"""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np

PALETTE = np.array([
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [128, 128, 128],
], dtype=np.uint8)


class PPMError(ValueError):
    pass


def gen_swatches(n: int, side: int = 8, rng: np.random.Generator | int | None = 0,
                 return_labels: bool = False):
    """``n`` uniformly coloured images, colours drawn uniformly from :data:`PALETTE`."""
    if n < 1 or side < 1:
        raise ValueError(f"need n >= 1 and side >= 1, got n={n}, side={side}")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    labels = rng.integers(0, len(PALETTE), size=n)
    images = np.broadcast_to(PALETTE[labels][:, :, None, None], (n, 3, side, side)).copy()
    return (images, labels) if return_labels else images


def train_eval_split(n_train: int, n_eval: int, side: int = 8, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Independent swatch sets for training and evaluation from one seed."""
    train_rng, eval_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    return gen_swatches(n_train, side, train_rng), gen_swatches(n_eval, side, eval_rng)


_HEADER = re.compile(rb"P6(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)\s")


def decode_ppm(data: bytes) -> np.ndarray:
    m = _HEADER.match(data)
    if m is None:
        raise PPMError("malformed PPM header (expected binary P6)")
    width, height, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise PPMError(f"unsupported maxval {maxval}; only 8-bit (255) images are supported")
    if width < 1 or height < 1:
        raise PPMError(f"bad image size {width}x{height}")
    body = data[m.end():]
    need = width * height * 3
    if len(body) < need:
        raise PPMError(f"truncated PPM: expected {need} bytes of pixels, found {len(body)}")
    if len(body) > need:
        raise PPMError(f"{len(body) - need} trailing bytes after the pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3).transpose(2, 0, 1).copy()


def encode_ppm(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) image, got shape {image.shape}")
    if image.dtype != np.uint8:
        if np.any((image < 0) | (image > 255)) or np.any(image != np.round(image)):
            raise ValueError("pixel values must be integers in [0, 255]")
        image = image.astype(np.uint8)
    _, h, w = image.shape
    return f"P6\n{w} {h}\n255\n".encode() + image.transpose(1, 2, 0).tobytes()


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        try:
            return decode_ppm(fh.read())
        except PPMError as exc:
            raise PPMError(f"{path}: {exc}") from None


def write_ppm(path, image: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_ppm(image))


def image_grid(images: np.ndarray, cols: int | None = None, pad: int = 1, fill: int = 255) -> np.ndarray:
    """Tile a batch ``(N, 3, H, W)`` into one image with ``pad`` pixels between tiles.

    Float input is treated as values in [0, 1].
    """
    images = np.asarray(images)
    if images.dtype != np.uint8:
        images = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)
    n, c, h, w = images.shape
    cols = cols or int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    out = np.full((c, rows * (h + pad) + pad, cols * (w + pad) + pad), fill, dtype=np.uint8)
    for i, img in enumerate(images):
        r, k = divmod(i, cols)
        y, x = pad + r * (h + pad), pad + k * (w + pad)
        out[:, y:y + h, x:x + w] = img
    return out


def load_ppm_dir(directory, side: int | None = None) -> np.ndarray:
    """Stack every ``*.ppm`` in ``directory`` (sorted by name); sizes must agree."""
    paths = sorted(Path(directory).glob("*.ppm"))
    if not paths:
        raise FileNotFoundError(f"no .ppm files in {directory}")
    images = [read_ppm(p) for p in paths]
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise PPMError(f"images in {directory} have differing shapes {sorted(shapes)}")
    if side is not None and images[0].shape[1:] != (side, side):
        raise PPMError(f"expected {side}x{side} images, found {images[0].shape[2]}x{images[0].shape[1]}")
    return np.stack(images)


def intra_image_std(images: np.ndarray) -> np.ndarray:
    """Per-image spatial standard deviation, averaged over channels; zero for a uniform swatch."""
    images = np.asarray(images, dtype=np.float64)
    n, c = images.shape[:2]
    return images.reshape(n, c, -1).std(axis=2).mean(axis=1)
