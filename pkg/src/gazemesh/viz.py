"""Deterministic raster rendering of gaze overlays, heatmaps and view grids.

Images are plain RGB byte buffers written as binary PPM (P6), chosen so test
suites can compare outputs byte-for-byte. Schematic egoview renders stand in
for camera video: frames carry feature points, not pixels.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .analysis import HeatmapGrid, rolling_mean, write_series_csv

# 256-entry viridis RGB table, embedded so renders never depend on a plotting
# library at runtime; the dashboard embeds the identical bytes.
VIRIDIS_HEX = (
    "44015444025645045745055946075a46085c460a5d460b5e470d60470e6147106347116447136548146748166848"
    "176948186a481a6c481b6d481c6e481d6f481f70482071482173482374482475482576482677482878482979472a"
    "7a472c7a472d7b472e7c472f7d46307e46327e46337f463480453581453781453882443983443a83443b84433d84"
    "433e85423f854240864241864142874144874045884046883f47883f48893e49893e4a893e4c8a3d4d8a3d4e8a3c"
    "4f8a3c508b3b518b3b528b3a538b3a548c39558c39568c38588c38598c375a8c375b8d365c8d365d8d355e8d355f"
    "8d34608d34618d33628d33638d32648e32658e31668e31678e31688e30698e306a8e2f6b8e2f6c8e2e6d8e2e6e8e"
    "2e6f8e2d708e2d718e2c718e2c728e2c738e2b748e2b758e2a768e2a778e2a788e29798e297a8e297b8e287c8e28"
    "7d8e277e8e277f8e27808e26818e26828e26828e25838e25848e25858e24868e24878e23888e23898e238a8d228b"
    "8d228c8d228d8d218e8d218f8d21908d21918c20928c20928c20938c1f948c1f958b1f968b1f978b1f988b1f998a"
    "1f9a8a1e9b8a1e9c891e9d891f9e891f9f881fa0881fa1881fa1871fa28720a38620a48621a58521a68522a78522"
    "a88423a98324aa8325ab8225ac8226ad8127ad8128ae8029af7f2ab07f2cb17e2db27d2eb37c2fb47c31b57b32b6"
    "7a34b67935b77937b87838b9773aba763bbb753dbc743fbc7340bd7242be7144bf7046c06f48c16e4ac16d4cc26c"
    "4ec36b50c46a52c56954c56856c66758c7655ac8645cc8635ec96260ca6063cb5f65cb5e67cc5c69cd5b6ccd5a6e"
    "ce5870cf5773d05675d05477d1537ad1517cd2507fd34e81d34d84d44b86d54989d5488bd6468ed64590d74393d7"
    "4195d84098d83e9bd93c9dd93ba0da39a2da37a5db36a8db34aadc32addc30b0dd2fb2dd2db5de2bb8de29bade28"
    "bddf26c0df25c2df23c5e021c8e020cae11fcde11dd0e11cd2e21bd5e21ad8e219dae319dde318dfe318e2e418e5"
    "e419e7e419eae51aece51befe51cf1e51df4e61ef6e620f8e621fbe723fde725"
)
VIRIDIS = np.frombuffer(bytes.fromhex(VIRIDIS_HEX), dtype=np.uint8).reshape(256, 3)
VIRIDIS_SHA256 = "18545f7c72a02f02a54f2e3f6ff9dcf357e0190ab9117a1f8fae44c6eaf179e0"

DEFAULT_BACKGROUND = (24, 24, 24)


@dataclass
class Image:
    pixels: np.ndarray  # (h, w, 3) uint8

    def __post_init__(self) -> None:
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3 or self.pixels.dtype != np.uint8:
            raise ValueError("image buffer must be (h, w, 3) uint8")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def new_image(width: int, height: int, color: tuple[int, int, int] = DEFAULT_BACKGROUND) -> Image:
    px = np.empty((height, width, 3), dtype=np.uint8)
    px[:] = color
    return Image(pixels=px)


def write_ppm(image: Image, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(f"P6\n{image.width} {image.height}\n255\n".encode())
        f.write(image.pixels.tobytes())


def read_ppm(path: Path | str) -> Image:
    data = Path(path).read_bytes()
    if not data.startswith(b"P6"):
        raise ValueError("not a binary PPM file")
    parts = data.split(b"\n", 3)
    w, h = map(int, parts[1].split())
    pixels = np.frombuffer(parts[3], dtype=np.uint8)[: w * h * 3].reshape(h, w, 3)
    return Image(pixels=pixels.copy())


def save_image(image: Image, path: Path | str, encoder=None) -> None:
    """Write PPM (the bit-exact baseline) or hand off to a pluggable encoder.

    A .png target uses the supplied encoder, or Pillow when installed.
    """
    path = Path(path)
    if path.suffix == ".ppm":
        write_ppm(image, path)
        return
    if encoder is not None:
        encoder(image, path)
        return
    if path.suffix == ".png":
        try:
            from PIL import Image as PilImage
        except ImportError as e:
            raise ValueError("PNG output needs an encoder (Pillow not installed)") from e
        path.parent.mkdir(parents=True, exist_ok=True)
        PilImage.fromarray(image.pixels).save(path)
        return
    raise ValueError(f"no encoder for {path.suffix} files")


def device_color(index: int) -> tuple[int, int, int]:
    """Distinct ring color per device via golden-ratio hue stepping."""
    hue = (index * 0.6180339887498949) % 1.0
    r, g, b = colorsys.hsv_to_rgb(hue, 0.75, 1.0)
    return int(round(r * 255)), int(round(g * 255)), int(round(b * 255))


@dataclass
class OverlayStyle:
    circle_radius: int = 8
    ring_width: int = 2
    fill_color: tuple[int, int, int] = (255, 255, 255)
    background: tuple[int, int, int] = DEFAULT_BACKGROUND


def _disc_mask(shape: tuple[int, int], cx: float, cy: float, r: float) -> np.ndarray:
    h, w = shape
    y0 = max(int(cy - r) - 1, 0)
    y1 = min(int(cy + r) + 2, h)
    x0 = max(int(cx - r) - 1, 0)
    x1 = min(int(cx + r) + 2, w)
    mask = np.zeros(shape, dtype=bool)
    if y0 >= y1 or x0 >= x1:
        return mask
    yy, xx = np.mgrid[y0:y1, x0:x1]
    mask[y0:y1, x0:x1] = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    return mask


def render_gaze_on_view(
    frame_dims: tuple[int, int],
    points: Sequence[tuple[str, float, float]],
    style: OverlayStyle | None = None,
    device_order: Sequence[str] | None = None,
    base: Image | None = None,
) -> tuple[Image, int]:
    """Draw one ringed circle per device gaze point; returns (image, clipped).

    Points outside the frame are not drawn but counted. Ring colors are
    unique per device (indexed by device_order when given).
    """
    style = style or OverlayStyle()
    w, h = frame_dims
    img = Image(pixels=base.pixels.copy()) if base is not None else new_image(w, h, style.background)
    order = list(device_order) if device_order is not None else sorted({p[0] for p in points})
    color_of = {dev: device_color(i) for i, dev in enumerate(order)}
    clipped = 0
    for dev, x, y in points:
        if not (0 <= x < w and 0 <= y < h):
            clipped += 1
            continue
        outer = _disc_mask(img.pixels.shape[:2], x, y, style.circle_radius + style.ring_width)
        inner = _disc_mask(img.pixels.shape[:2], x, y, style.circle_radius)
        img.pixels[outer & ~inner] = color_of.get(dev, (255, 0, 255))
        img.pixels[inner] = style.fill_color
    return img, clipped


def render_feature_view(
    frame_dims: tuple[int, int],
    feature_xy: np.ndarray,
    dot_color: tuple[int, int, int] = (90, 90, 90),
    background: tuple[int, int, int] = DEFAULT_BACKGROUND,
) -> Image:
    """Schematic egoview: background plus one dot per visible feature point."""
    w, h = frame_dims
    img = new_image(w, h, background)
    for x, y in np.asarray(feature_xy):
        if 0 <= x < w and 0 <= y < h:
            img.pixels[_disc_mask(img.pixels.shape[:2], float(x), float(y), 2.0)] = dot_color
    return img


def render_heatmap_overlay(
    grid: HeatmapGrid,
    base: Image | tuple[int, int],
    alpha: float = 0.6,
) -> Image:
    """Viridis-mapped heatmap alpha-blended over a base image.

    Cell values are max-normalized before the colormap lookup; an all-zero
    grid leaves the base unchanged. Grids coarser than the base are upscaled
    nearest-neighbor.
    """
    img = base if isinstance(base, Image) else new_image(*base)
    out = img.pixels.copy()
    vmax = grid.values.max()
    if vmax <= 0:
        return Image(pixels=out)
    idx = np.rint(grid.values / vmax * 255).astype(np.uint8)
    h, w = out.shape[:2]
    ys = np.minimum((np.arange(h) / (h / idx.shape[0])).astype(int), idx.shape[0] - 1)
    xs = np.minimum((np.arange(w) / (w / idx.shape[1])).astype(int), idx.shape[1] - 1)
    colors = VIRIDIS[idx[np.ix_(ys, xs)]]
    blended = np.rint(alpha * colors.astype(np.float64) + (1 - alpha) * out.astype(np.float64))
    return Image(pixels=blended.astype(np.uint8))


def _scale_nearest(src: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    h, w = src.shape[:2]
    ys = np.minimum((np.arange(out_h) * h / out_h).astype(int), h - 1)
    xs = np.minimum((np.arange(out_w) * w / out_w).astype(int), w - 1)
    return src[np.ix_(ys, xs)]


def render_grid(
    images: Sequence[Image],
    central: Image,
    rows: int,
    cols: int,
    cell: tuple[int, int] = (320, 240),
    background: tuple[int, int, int] = (0, 0, 0),
) -> Image:
    """Tile egoviews around the central view.

    The central image occupies cell (rows//2, cols//2); every tile is scaled
    to fit the uniform cell size preserving its aspect ratio.
    """
    if len(images) + 1 > rows * cols:
        raise ValueError(f"{len(images)} images + central exceed the {rows}x{cols} grid")
    cw, ch = cell
    out = new_image(cols * cw, rows * ch, background)
    center = (rows // 2, cols // 2)

    def paste(img: Image, r: int, c: int) -> None:
        s = min(cw / img.width, ch / img.height)
        tw = max(1, int(img.width * s))
        th = max(1, int(img.height * s))
        tile = _scale_nearest(img.pixels, tw, th)
        y = r * ch + (ch - th) // 2
        x = c * cw + (cw - tw) // 2
        out.pixels[y:y + th, x:x + tw] = tile

    cells = [(r, c) for r in range(rows) for c in range(cols) if (r, c) != center]
    for img, (r, c) in zip(images, cells):
        paste(img, r, c)
    paste(central, *center)
    return out


def export_series_csv(
    out_dir: Path | str,
    name: str,
    t_ns: Sequence[int],
    values: Sequence[float],
    smooth_window: int = 150,
) -> tuple[Path, Path]:
    """Write a raw `t_ns,value` CSV plus a rolling-mean smoothed companion."""
    out_dir = Path(out_dir)
    raw = out_dir / f"{name}.csv"
    smooth = out_dir / f"{name}_smoothed.csv"
    write_series_csv(raw, t_ns, values)
    vals = np.asarray(values, dtype=np.float64)
    smoothed = rolling_mean(vals, smooth_window) if len(vals) else vals
    write_series_csv(smooth, t_ns, smoothed)
    return raw, smooth
