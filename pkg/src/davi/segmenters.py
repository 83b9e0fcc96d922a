"""Promptable-segmentation backends producing per-pixel confidence maps.

Backends receive an (image, text prompt) request and return a confidence
grid in [0, 1] with the image's spatial shape: high where the prompted
object class is present, zero where nothing was detected. Dense maps are
built from instance masks by taking, per pixel, the maximum of
score * membership over instances.

Three implementations:

* :class:`OracleSegmenter`: deterministic lookup from a scene index,
  used for tests and synthetic runs.
* :class:`ExternalSegmenter`: adapter for an HTTP segmentation service.
* :class:`CachedSegmenter`: content-addressed disk cache around any
  backend, so each (image, prompt) is computed at most once.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import requests
from PIL import Image

from .data import arrayio
from .errors import SegmenterBackendError, ValidationError
from .validation import check_image_tile, check_pair, check_probability_map

DEFAULT_PROMPT = "Building"


@dataclass(frozen=True)
class SegmenterRequest:
    """One segmentation call: a normalized RGB tile plus a text prompt."""

    image: np.ndarray
    prompt: str = DEFAULT_PROMPT

    def __post_init__(self):
        object.__setattr__(self, "image", check_image_tile(self.image))
        if not self.prompt:
            raise ValidationError("prompt must be non-empty")


def image_content_hash(image: np.ndarray) -> str:
    """Stable content hash of a normalized tile (shape + raw float32 bytes)."""
    arr = check_image_tile(image)
    h = hashlib.sha256()
    h.update(np.asarray(arr.shape, dtype=np.int64).tobytes())
    h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def cache_key(request: SegmenterRequest, backend_id: str) -> str:
    """Content hash identifying one (image, prompt, backend) computation."""
    h = hashlib.sha256()
    h.update(image_content_hash(request.image).encode())
    h.update(b"\x00")
    h.update(request.prompt.encode("utf-8"))
    h.update(b"\x00")
    h.update(backend_id.encode("utf-8"))
    return h.hexdigest()


class Segmenter:
    """Base class: subclasses implement ``segment``; pairs share one config."""

    backend_id = "base"

    def segment(self, request: SegmenterRequest) -> np.ndarray:
        raise NotImplementedError

    def segment_pair(self, pre, post, prompt: str = DEFAULT_PROMPT):
        """Segment both halves of a co-registered pair with the same prompt."""
        pre, post = check_pair(pre, post)
        w_pre = self.segment(SegmenterRequest(image=pre, prompt=prompt))
        w_post = self.segment(SegmenterRequest(image=post, prompt=prompt))
        return w_pre, w_post


@dataclass
class OracleIndex:
    """Maps image content hashes to the confidence regions a scene planted."""

    prompt: str = DEFAULT_PROMPT
    entries: dict[str, list[dict]] = field(default_factory=dict)

    def add(self, image_hash: str, regions: list[dict]) -> None:
        self.entries[image_hash] = regions

    def save(self, path) -> None:
        doc = {"format": "davi-oracle/1", "prompt": self.prompt, "entries": self.entries}
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "OracleIndex":
        path = Path(path)
        if not path.is_file():
            raise ValidationError(f"oracle index not found: {path}")
        doc = json.loads(path.read_text())
        if doc.get("format") != "davi-oracle/1":
            raise ValidationError(f"{path}: expected format 'davi-oracle/1'")
        return cls(prompt=doc["prompt"], entries=doc["entries"])


class OracleSegmenter(Segmenter):
    """Replays planted confidences for known images; zeros for anything else.

    Pure and reproducible: responses depend only on the index contents, the
    image bytes and the prompt.
    """

    backend_id = "oracle"

    def __init__(self, index: OracleIndex):
        self.index = index

    def segment(self, request: SegmenterRequest) -> np.ndarray:
        conf = np.zeros(request.image.shape[:2], dtype=np.float32)
        if request.prompt != self.index.prompt:
            return conf
        regions = self.index.entries.get(image_content_hash(request.image), [])
        for region in regions:
            r0, c0, r1, c1 = region["rect"]
            value = np.float32(region["confidence"])
            conf[r0:r1, c0:c1] = np.maximum(conf[r0:r1, c0:c1], value)
        return conf


def _png_bytes(image_u8: np.ndarray, mode: str) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(image_u8, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


class ExternalSegmenter(Segmenter):
    """Adapter for an HTTP segmentation service.

    Request: ``POST {endpoint}`` with JSON
    ``{"prompt": str, "height": int, "width": int, "image_png": base64}``.
    Response: ``{"instances": [{"score": float, "mask_png": base64}, ...]}``
    where each mask is a single-channel PNG; nonzero pixels are members.
    The dense map is the per-pixel max of score * membership, clipped to
    [0, 1]. How the service turns the text prompt into its native prompting
    is the service's concern.
    """

    def __init__(self, endpoint: str, backend_id: str = "external", timeout: float = 30.0, max_retries: int = 2):
        self.endpoint = endpoint
        self.backend_id = backend_id
        self.timeout = timeout
        self.max_retries = max_retries
        self.calls = 0

    def segment(self, request: SegmenterRequest) -> np.ndarray:
        height, width = request.image.shape[:2]
        image_u8 = np.clip(np.rint(request.image * 255.0), 0, 255).astype(np.uint8)
        payload = {
            "prompt": request.prompt,
            "height": height,
            "width": width,
            "image_png": base64.b64encode(_png_bytes(image_u8, "RGB")).decode("ascii"),
        }
        body = self._post(payload)
        return self._to_confidence(body, (height, width))

    def _post(self, payload: dict) -> dict:
        last_exc: Optional[Exception] = None
        for _attempt in range(self.max_retries + 1):
            self.calls += 1
            try:
                resp = requests.post(self.endpoint, json=payload, timeout=self.timeout)
            except requests.RequestException as exc:
                last_exc = exc
                continue
            if resp.status_code >= 500:
                last_exc = SegmenterBackendError(
                    f"segmentation service error {resp.status_code}", retriable=True
                )
                continue
            if resp.status_code != 200:
                raise SegmenterBackendError(
                    f"segmentation service rejected request: {resp.status_code} {resp.text[:200]}",
                    retriable=False,
                )
            try:
                return resp.json()
            except ValueError as exc:
                raise SegmenterBackendError(
                    f"segmentation service returned non-JSON body: {exc}", retriable=False
                ) from exc
        raise SegmenterBackendError(
            f"segmentation service unreachable after {self.max_retries + 1} attempts: {last_exc}",
            retriable=True,
        )

    def _to_confidence(self, body: dict, shape: tuple[int, int]) -> np.ndarray:
        conf = np.zeros(shape, dtype=np.float32)
        instances = body.get("instances")
        if instances is None:
            raise SegmenterBackendError("response missing 'instances'", retriable=False)
        for inst in instances:
            try:
                score = float(np.clip(inst["score"], 0.0, 1.0))
                mask_bytes = base64.b64decode(inst["mask_png"])
                with Image.open(io.BytesIO(mask_bytes)) as img:
                    mask = np.asarray(img.convert("L")) > 0
            except (KeyError, TypeError, ValueError, OSError) as exc:
                raise SegmenterBackendError(f"malformed instance in response: {exc}", retriable=False) from exc
            if mask.shape != shape:
                raise SegmenterBackendError(
                    f"instance mask shape {mask.shape} does not match image shape {shape}",
                    retriable=False,
                )
            conf = np.maximum(conf, mask.astype(np.float32) * score)
        return conf


class CachedSegmenter(Segmenter):
    """Content-addressed disk cache around a backend.

    One confidence grid per key (portable array container) plus a JSON
    sidecar recording prompt, backend id and image hash. Writers go through
    a temp file + atomic rename, so concurrent readers never see a torn
    file and repeated requests are byte-identical replays.
    """

    def __init__(self, backend: Segmenter, cache_dir):
        self.backend = backend
        self.backend_id = backend.backend_id
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.backend_calls = 0
        self.cache_hits = 0

    def _paths(self, key: str) -> tuple[Path, Path]:
        return self.cache_dir / f"{key}.davg", self.cache_dir / f"{key}.json"

    def segment(self, request: SegmenterRequest) -> np.ndarray:
        key = cache_key(request, self.backend_id)
        grid_path, meta_path = self._paths(key)
        if grid_path.is_file():
            self.cache_hits += 1
            return check_probability_map(arrayio.load_array(grid_path))

        self.backend_calls += 1
        conf = check_probability_map(self.backend.segment(request))
        fd, tmp = tempfile.mkstemp(dir=self.cache_dir, suffix=".tmp")
        os.close(fd)
        try:
            arrayio.save_array(tmp, conf)
            os.replace(tmp, grid_path)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)
        meta = {
            "backend_id": self.backend_id,
            "image_hash": image_content_hash(request.image),
            "prompt": request.prompt,
        }
        meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return conf
