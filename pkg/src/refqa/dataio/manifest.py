"""JSON-lines manifest plus three feature stores living next to it.

Each manifest line describes one sample::

    {"id": "c03_0017", "prompt": "...", "mos": 61.2, "row": 17, "split": "train"}

``row`` indexes into ``prompt_emb.rfq``, ``visual.rfq`` and ``align.rfq`` in
the manifest's directory. ``mos`` may be null; ``split`` may be omitted.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from ..errors import ManifestError
from .dataset import Dataset, Sample
from .store import read_feature_store, write_feature_store

log = logging.getLogger(__name__)

PROMPT_STORE = "prompt_emb.rfq"
VISUAL_STORE = "visual.rfq"
ALIGN_STORE = "align.rfq"
MANIFEST = "manifest.jsonl"
RENORM_BAND = (0.99, 1.01)


def save_dataset(ds: Dataset, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_feature_store(ds.prompt_matrix, ds.dims[0], out / PROMPT_STORE)
    write_feature_store(ds.visual_matrix, ds.dims[1], out / VISUAL_STORE)
    write_feature_store(ds.align_matrix, ds.dims[2], out / ALIGN_STORE)
    path = out / MANIFEST
    with open(path, "w", encoding="utf-8") as fh:
        for row, s in enumerate(ds.samples):
            rec = {"id": s.id, "prompt": s.prompt, "mos": s.mos, "row": row, "split": ds.split_labels[s.id]}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    return path


def _check_prompt_emb(sid, emb):
    norm = float(np.linalg.norm(emb))
    if abs(norm - 1.0) <= 1e-6:
        return emb
    if RENORM_BAND[0] <= norm <= RENORM_BAND[1]:
        log.warning("sample %s: prompt embedding norm %.6f renormalized", sid, norm)
        return emb / norm
    raise ManifestError(f"sample {sid!r}: prompt embedding norm {norm:.6f} outside [0.99, 1.01]")


def load_dataset(manifest_path) -> Dataset:
    path = Path(manifest_path)
    if path.is_dir():
        path = path / MANIFEST
    root = path.parent
    try:
        d_p, prompts = read_feature_store(root / PROMPT_STORE)
        d_v, visual = read_feature_store(root / VISUAL_STORE)
        d_s, align = read_feature_store(root / ALIGN_STORE)
        lines = path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError as exc:
        raise ManifestError(f"missing dataset file: {exc.filename}") from exc

    samples, labels = [], {}
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
        missing = [k for k in ("id", "prompt", "row") if k not in rec]
        if missing:
            raise ManifestError(f"{path}:{lineno}: missing fields {missing}")
        sid, row = str(rec["id"]), rec["row"]
        if not isinstance(row, int) or row < 0:
            raise ManifestError(f"sample {sid!r}: invalid row {row!r}")
        for name, store in (("prompt_emb", prompts), ("visual", visual), ("align", align)):
            if row >= store.shape[0]:
                raise ManifestError(f"sample {sid!r}: row {row} missing from {name} store ({store.shape[0]} rows)")
        mos = rec.get("mos")
        samples.append(Sample(
            id=sid,
            prompt=rec["prompt"],
            prompt_emb=_check_prompt_emb(sid, prompts[row].copy()),
            visual_feat=visual[row].copy(),
            align_feat=align[row].copy(),
            mos=None if mos is None else float(mos),
        ))
        if rec.get("split") is not None:
            labels[sid] = rec["split"]
    return Dataset(dims=(d_p, d_v, d_s), samples=samples, split_labels=labels)
