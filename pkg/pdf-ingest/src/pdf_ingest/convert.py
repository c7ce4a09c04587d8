"""Turn a PDF into a bundle directory: manifest, screenshots, element crops.

Output follows the bundle contract consumed downstream:
``bundle.json`` listing pages 1..n, each with text, a screenshot image,
and extracted elements carrying pixel bounding boxes within that
screenshot.  Element extraction failures degrade to screenshot-only pages;
they never abort the conversion.
"""

from __future__ import annotations

import io
import json
import logging
import re
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from PIL import Image, ImageDraw

from .pdfread import PdfError, PdfPage, PlacedImage, read_pdf

logger = logging.getLogger(__name__)

_LABEL_RE = re.compile(r"^(Table|Figure)\s+\d+")


class IngestError(Exception):
    """Conversion cannot proceed (unreadable input, unwritable output)."""


@dataclass(frozen=True)
class IngestConfig:
    pdf_path: Path
    out_dir: Path
    dpi: int = 144
    extract_elements: bool = True

    def __post_init__(self):
        if not 72 <= self.dpi <= 300:
            raise ValueError(f"dpi must be in [72, 300], got {self.dpi}")


def decode_image(img: PlacedImage) -> Image.Image:
    """Materialize an embedded image's pixels."""
    if img.filter == "DCTDecode":
        return Image.open(io.BytesIO(img.data)).convert("RGB")
    raw = img.data
    if img.filter in ("FlateDecode", "Fl"):
        raw = zlib.decompress(raw)
    elif img.filter is not None:
        raise IngestError(f"unsupported image filter {img.filter!r}")
    if img.bits != 8:
        raise IngestError(f"unsupported bit depth {img.bits}")
    mode = {"DeviceRGB": "RGB", "DeviceGray": "L", "DeviceCMYK": "CMYK"}.get(
        img.color_space
    )
    if mode is None:
        raise IngestError(f"unsupported color space {img.color_space!r}")
    expected = img.width * img.height * len(mode)
    if len(raw) < expected:
        raise IngestError("image data shorter than declared dimensions")
    return Image.frombytes(
        mode, (img.width, img.height), raw[:expected]
    ).convert("RGB")


def _pixel_bbox(img: PlacedImage, page: PdfPage, scale: float,
                raster: tuple[int, int]) -> Optional[tuple[int, int, int, int]]:
    """Page points (origin bottom-left) to raster pixels (origin top-left)."""
    x0, y0, x1, y1 = img.bbox
    w, h = raster
    px0 = max(0, int(round(x0 * scale)))
    px1 = min(w, int(round(x1 * scale)))
    py0 = max(0, int(round((page.height - y1) * scale)))
    py1 = min(h, int(round((page.height - y0) * scale)))
    if px0 >= px1 or py0 >= py1:
        return None
    return px0, py0, px1, py1


def _harvest_caption(page: PdfPage, img: PlacedImage):
    """Nearest text line below the image that reads like a caption."""
    below = [ln for ln in page.lines if ln.y < img.bbox[1]]
    for line in sorted(below, key=lambda ln: -ln.y):
        m = _LABEL_RE.match(line.text)
        if m:
            kind = "table" if m.group(1) == "Table" else "figure"
            return m.group(0), line.text, kind
    return None, None, "figure"


def _convert_page(page: PdfPage, cfg: IngestConfig) -> dict:
    scale = cfg.dpi / 72.0
    raster = (max(1, round(page.width * scale)),
              max(1, round(page.height * scale)))
    screenshot = Image.new("RGB", raster, "white")
    draw = ImageDraw.Draw(screenshot)
    for line in page.lines:
        draw.text((line.x * scale, (page.height - line.y) * scale),
                  line.text, fill="black")

    extracted = []
    if cfg.extract_elements:
        for i, img in enumerate(page.images, start=1):
            try:
                pixels = decode_image(img)
                bbox = _pixel_bbox(img, page, scale, raster)
                if bbox is None:
                    raise IngestError("image placed outside the page")
                crop_name = f"el{page.number}_{i}.png"
                pixels.save(cfg.out_dir / crop_name)
                screenshot.paste(
                    pixels.resize((bbox[2] - bbox[0], bbox[3] - bbox[1])),
                    (bbox[0], bbox[1]),
                )
                label, caption, kind = _harvest_caption(page, img)
                entry = {"kind": kind, "image": crop_name,
                         "bbox": [float(v) for v in bbox]}
                if label:
                    entry["label"] = label
                if caption:
                    entry["caption"] = caption
                extracted.append(entry)
            except (IngestError, OSError, zlib.error, ValueError) as exc:
                logger.warning("page %d: skipping element %d: %s",
                               page.number, i, exc)

    shot_name = f"page{page.number}.png"
    screenshot.save(cfg.out_dir / shot_name)
    return {
        "number": page.number,
        "text": page.text,
        "screenshot": shot_name,
        "extracted": extracted,
    }


def convert(cfg: IngestConfig) -> Path:
    """Convert ``cfg.pdf_path`` and return the bundle directory."""
    try:
        doc = read_pdf(cfg.pdf_path)
    except PdfError as exc:
        raise IngestError(str(exc)) from exc
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=4) as pool:
        pages = list(pool.map(lambda p: _convert_page(p, cfg), doc.pages))
    manifest = {
        "doc_id": Path(cfg.pdf_path).stem,
        "generator": "pdf-ingest/0.1.0",
        "pages": pages,
    }
    (cfg.out_dir / "bundle.json").write_text(
        json.dumps(manifest, indent=2, ensure_ascii=False) + "\n", "utf-8"
    )
    return cfg.out_dir
