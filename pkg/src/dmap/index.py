"""Token-matrix embedding indexes with late-interaction (MaxSim) scoring.

Each element gets a textual and/or visual record holding a matrix of
unit-normalized token vectors.  Scoring sums, over query tokens, the best
dot product against the record's tokens; top-k is an exhaustive scan with
deterministic tie-breaking by document order.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import requests

from .model import DMap, ElementKind

logger = logging.getLogger(__name__)

TEXT = "text"
VISUAL = "visual"


class IndexError_(RuntimeError):
    pass


def check_token_matrix(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < 1 or matrix.shape[1] < 1:
        raise ValueError(f"token matrix must be 2-D and non-empty, got {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise ValueError("token matrix contains non-finite values")
    norms = np.linalg.norm(matrix, axis=1)
    if not np.allclose(norms, 1.0, atol=1e-6):
        raise ValueError("token matrix rows must be unit-normalized")
    return matrix


def maxsim(q: np.ndarray, d: np.ndarray) -> float:
    """Late-interaction score: sum over query rows of the max dot product."""
    q = np.asarray(q, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if q.shape[1] != d.shape[1]:
        raise ValueError(f"dimension mismatch: {q.shape[1]} vs {d.shape[1]}")
    return float((q @ d.T).max(axis=1).sum())


@dataclass(frozen=True)
class IndexRecord:
    element_id: str
    modality: str  # TEXT | VISUAL
    matrix: np.ndarray
    page_no: int = 0


class Index:
    """Immutable flat store of records, scored by exhaustive scan."""

    def __init__(self, records: list[IndexRecord]):
        self.records = list(records)
        # dims may differ across modalities, never within one
        by_mod: dict[str, set[int]] = {}
        for r in self.records:
            by_mod.setdefault(r.modality, set()).add(r.matrix.shape[1])
        for mod, ds in by_mod.items():
            if len(ds) != 1:
                raise IndexError_(f"inconsistent dims {sorted(ds)} in {mod} index")

    def topk(self, q: np.ndarray, modality: str, k: int) -> list[tuple[str, float]]:
        if modality not in (TEXT, VISUAL):
            raise ValueError(f"unknown modality {modality!r}")
        if k < 1:
            raise ValueError("k must be >= 1")
        scored = [
            (r.element_id, maxsim(q, r.matrix), r.page_no)
            for r in self.records
            if r.modality == modality
        ]
        scored.sort(key=lambda t: (-t[1], t[2], t[0]))
        return [(eid, score) for eid, score, _ in scored[:k]]

    # Persistence ----------------------------------------------------------

    def save(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for modality, filename in ((TEXT, "index.text.jsonl"),
                                   (VISUAL, "index.visual.jsonl")):
            with open(out_dir / filename, "w", encoding="utf-8") as f:
                for r in self.records:
                    if r.modality != modality:
                        continue
                    f.write(json.dumps({
                        "element_id": r.element_id,
                        "dim": int(r.matrix.shape[1]),
                        "rows": [[float(x) for x in row] for row in r.matrix],
                    }, sort_keys=True) + "\n")

    @classmethod
    def load(cls, in_dir, m: Optional[DMap] = None) -> "Index":
        in_dir = Path(in_dir)
        page_of = (
            {e.id: e.page_no for e in m.elements.values()} if m is not None else {}
        )
        records = []
        for modality, filename in ((TEXT, "index.text.jsonl"),
                                   (VISUAL, "index.visual.jsonl")):
            path = in_dir / filename
            if not path.is_file():
                continue
            with open(path, encoding="utf-8") as f:
                for line in f:
                    if not line.strip():
                        continue
                    d = json.loads(line)
                    records.append(IndexRecord(
                        element_id=d["element_id"],
                        modality=modality,
                        matrix=np.asarray(d["rows"], dtype=np.float64),
                        page_no=page_of.get(d["element_id"], 0),
                    ))
        return cls(records)


# Embedding backends -------------------------------------------------------

class MockEmbedder:
    """Deterministic hash-based embedder, reproducible across platforms.

    Text is split on whitespace; each token seeds a PRNG from a sha256
    digest of (seed, token) and expands to ``dim`` values, L2-normalized.
    Images embed as a single token derived from the file bytes.
    """

    def __init__(self, dim: int = 16, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def _token_vector(self, token: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}:{token}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def embed_text(self, text: str) -> np.ndarray:
        tokens = text.split() or [""]
        return np.stack([self._token_vector(t) for t in tokens])

    def embed_texts(self, texts: list[str]) -> list[np.ndarray]:
        return [self.embed_text(t) for t in texts]

    def embed_images(self, paths: list) -> list[np.ndarray]:
        out = []
        for p in paths:
            data = Path(p).read_bytes()
            out.append(self._token_vector("img:" + hashlib.sha256(data).hexdigest())
                       .reshape(1, -1))
        return out

    # visual backends embed text queries too (query-side encoder)
    def embed_query(self, text: str) -> np.ndarray:
        return self.embed_text(text)


class HttpEmbedder:
    """Remote embedding backend speaking a small JSON contract."""

    def __init__(self, endpoint: str, timeout: float = 120.0, session=None):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.session = session or requests.Session()

    def _call(self, payload: dict) -> list[np.ndarray]:
        resp = self.session.post(self.endpoint, json=payload, timeout=self.timeout)
        resp.raise_for_status()
        return [np.asarray(mat, dtype=np.float64)
                for mat in resp.json()["matrices"]]

    def embed_texts(self, texts: list[str]) -> list[np.ndarray]:
        return self._call({"texts": texts})

    def embed_images(self, paths: list) -> list[np.ndarray]:
        return self._call({"image_paths": [str(p) for p in paths]})

    def embed_query(self, text: str) -> np.ndarray:
        return self.embed_texts([text])[0]


def _element_text(m: DMap, element) -> str:
    if element.kind == ElementKind.PAGE_CONTENT:
        page = m.page(element.page_no)
        return page.text if page is not None else element.text_desc
    return element.text_desc


def build_index(m: DMap, text_backend, vis_backend, root_dir=None) -> Index:
    """Embed every element's text and image into a fresh index.

    A failing element is retried once, then skipped with a warning; the
    build fails outright when more than 10% of elements are missing.
    """
    records: list[IndexRecord] = []
    failures = 0
    total = 0
    ordered = [m.elements[eid] for p in m.pages for eid in p.element_ids]
    for element in ordered:
        text = _element_text(m, element)
        if text.strip():
            total += 1
            mat = _try_embed(lambda: text_backend.embed_texts([text])[0], element.id)
            if mat is None:
                failures += 1
            else:
                records.append(IndexRecord(element.id, TEXT, check_token_matrix(mat),
                                           element.page_no))
        if element.image_ref:
            total += 1
            path = (Path(root_dir) / element.image_ref
                    if root_dir is not None else element.image_ref)
            mat = _try_embed(lambda: vis_backend.embed_images([path])[0], element.id)
            if mat is None:
                failures += 1
            else:
                records.append(IndexRecord(element.id, VISUAL, check_token_matrix(mat),
                                           element.page_no))
    if total and failures > 0.1 * total:
        raise IndexError_(
            f"index build failed: {failures}/{total} embeddings missing"
        )
    return Index(records)


def _try_embed(fn, element_id: str):
    for attempt in range(2):
        try:
            return fn()
        except Exception as exc:  # backend errors are implementation-specific
            if attempt:
                logger.warning("embedding failed for %s, skipped: %s", element_id, exc)
                return None
    return None
