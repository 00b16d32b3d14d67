"""PNG rendering of assembled structures and design fields (headless matplotlib)."""

import io
from collections.abc import Sequence
from typing import Any

import numpy as np
from matplotlib import colormaps
from matplotlib.figure import Figure
from matplotlib.image import imsave
from matplotlib.patches import Patch
from numpy.typing import NDArray

from lvto.output.basic import Meta, metadata_lines

VOID_COLOR = (1.0, 1.0, 1.0, 1.0)


def png_metadata(meta: Meta | None) -> dict[str, str]:
    if not meta:
        return {"Software": "lvto"}
    version, *rest = metadata_lines(meta)
    return {"Software": version, "Description": ", ".join(rest)}


def structure_png(image: NDArray[np.bool_], meta: Meta | None = None) -> bytes:
    """One output pixel per cell pixel, black = solid."""

    buf = io.BytesIO()
    imsave(
        buf,
        image.astype(np.uint8),
        cmap="gray_r",
        vmin=0,
        vmax=1,
        origin="lower",
        format="png",
        metadata=png_metadata(meta),
    )
    return buf.getvalue()


def class_colors(levels: Sequence[int]) -> dict[int, tuple[float, float, float, float]]:
    palette = colormaps["tab10"]
    return {c: tuple(palette(i % 10)) for i, c in enumerate(levels)}  # type: ignore


def class_image(
    nx: int,
    ny: int,
    active: NDArray[np.bool_],
    classes: NDArray[np.int64],
    levels: Sequence[int],
) -> NDArray[np.float64]:
    """RGBA image (ny, nx, 4), one pixel per element, row 0 at the bottom."""

    colors = class_colors(levels)
    rgba = np.tile(np.array(VOID_COLOR), (nx * ny, 1))
    for e in np.flatnonzero(active):
        rgba[e] = colors[int(classes[e])]
    return rgba.reshape(ny, nx, 4)


def _figure_png(fig: Figure, meta: Meta | None) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=100, metadata=png_metadata(meta))
    return buf.getvalue()


def class_map_png(
    nx: int,
    ny: int,
    active: NDArray[np.bool_],
    classes: NDArray[np.int64],
    levels: Sequence[int],
    labels: dict[int, str],
    meta: Meta | None = None,
) -> bytes:
    fig = Figure(figsize=(6, 6 * ny / nx + 1))
    ax = fig.add_subplot()
    ax.imshow(class_image(nx, ny, active, classes, levels), origin="lower", interpolation="nearest")
    ax.set_axis_off()

    colors = class_colors(levels)
    handles: list[Any] = [Patch(color=colors[c], label=labels[c]) for c in levels]
    ax.legend(handles=handles, loc="upper center", bbox_to_anchor=(0.5, 0.0), ncol=3, frameon=False)
    fig.tight_layout()
    return _figure_png(fig, meta)


def density_png(
    nx: int,
    ny: int,
    active: NDArray[np.bool_],
    rho: NDArray[np.float64],
    meta: Meta | None = None,
) -> bytes:
    values = np.ma.masked_array(rho.reshape(ny, nx), mask=~active.reshape(ny, nx))

    fig = Figure(figsize=(6, 6 * ny / nx + 0.5))
    ax = fig.add_subplot()
    im = ax.imshow(
        values, origin="lower", interpolation="nearest", cmap="viridis", vmin=0.0, vmax=1.0
    )
    ax.set_axis_off()
    fig.colorbar(im, ax=ax, label="volume fraction", shrink=0.8)
    fig.tight_layout()
    return _figure_png(fig, meta)
