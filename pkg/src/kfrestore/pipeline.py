"""Stream runtime: manifest ingestion, per-frame orchestration, reports."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from . import geometry as geo
from .errors import EmptyStore, KFRError, MissingFile, ParseError
from .fusion import ConvExtractor, WeightStore, init_weights, restore_forward, test_extractor
from .keyframe_store import KeyframeStore, Policy, PolicyTrace, TraceEvent
from .metrics import EXTERNAL_METRICS, MetricReport, psnr, ssim

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg", ".npy")


# ----------------------------------------------------------------------------
# image files

def read_image(path) -> np.ndarray:
    """Read an image as ``(H, W, 3)`` floats in [0, 1]. ``.npy`` files hold float arrays."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    if path.suffix == ".npy":
        arr = np.load(path).astype(np.float64)
    else:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    return geo.as_image(arr)


def to_uint8(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path, img) -> None:
    path = Path(path)
    if path.suffix == ".npy":
        np.save(path, np.asarray(img, dtype=np.float64))
    else:
        Image.fromarray(to_uint8(img)).save(path, format="PNG", optimize=False)


# ----------------------------------------------------------------------------
# manifests and configuration

@dataclass
class FrameRecord:
    frame_index: int
    image_path: Path | None
    landmarks_path: Path | None
    is_keyframe: bool
    gt_path: Path | None = None
    landmarks: np.ndarray | None = field(default=None, repr=False)

    def load_landmarks(self) -> np.ndarray:
        if self.landmarks is not None:
            return geo.as_landmarks(self.landmarks)
        if self.landmarks_path is None or not Path(self.landmarks_path).exists():
            raise MissingFile(str(self.landmarks_path))
        return geo.read_landmarks(self.landmarks_path)

    def to_dict(self, base: Path | None = None) -> dict:
        def rel(p):
            if p is None:
                return None
            p = Path(p).resolve()
            if base is not None:
                try:
                    return str(p.relative_to(base))
                except ValueError:
                    pass
            return str(p)
        d = {"frame_index": self.frame_index, "image_path": rel(self.image_path),
             "landmarks_path": rel(self.landmarks_path), "is_keyframe": self.is_keyframe}
        if self.gt_path is not None:
            d["gt_path"] = rel(self.gt_path)
        return d


def load_manifest(path, check_files: bool = True, require_images: bool = True) -> list[FrameRecord]:
    """Parse a JSON-lines manifest; relative paths resolve against the manifest's directory.

    Blank lines and lines starting with ``#`` are ignored.
    """
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    base = path.parent
    records: list[FrameRecord] = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from None
        if not isinstance(obj, dict):
            raise ParseError("each line must be a JSON object", line=lineno)
        missing = [k for k in ("frame_index", "landmarks_path", "is_keyframe") if k not in obj]
        if require_images and "image_path" not in obj:
            missing.append("image_path")
        if missing:
            raise ParseError(f"missing field(s) {', '.join(missing)}", line=lineno)
        idx = obj["frame_index"]
        if not isinstance(idx, int) or isinstance(idx, bool):
            raise ParseError("frame_index must be an integer", line=lineno)
        if not isinstance(obj["is_keyframe"], bool):
            raise ParseError("is_keyframe must be true or false", line=lineno)
        if records and idx <= records[-1].frame_index:
            raise ParseError(f"frame_index {idx} does not increase (previous "
                             f"{records[-1].frame_index})", line=lineno)

        def resolve(key):
            v = obj.get(key)
            if v is None:
                return None
            p = Path(v)
            return p if p.is_absolute() else base / p

        rec = FrameRecord(idx, resolve("image_path"), resolve("landmarks_path"),
                          obj["is_keyframe"], resolve("gt_path"))
        if check_files:
            wanted = [rec.landmarks_path]
            if require_images:
                wanted += [rec.image_path, rec.gt_path]
            for p in wanted:
                if p is not None and not p.exists():
                    raise MissingFile(f"line {lineno}: {p}")
        records.append(rec)
    return records


def write_manifest(path, records: Iterable[FrameRecord]) -> None:
    path = Path(path)
    base = path.parent.resolve()
    path.write_text("".join(json.dumps(r.to_dict(base)) + "\n" for r in records))


@dataclass
class PipelineConfig:
    max_cardinality: int = 10
    policy: str = "lfu"
    crop_size: int = 512
    weightfile: str | None = None
    extractor: str = "test"          # "test" (seeded) or "file" (extractor.* tensors in weightfile)
    extractor_seed: int = 0
    weight_seed: int = 0             # used only when no weightfile is given
    grid_step: int = 4
    landmark_radius: float = 1.0
    reference_offset: int = 5
    paste_back: bool = False
    feather: int = 16

    def __post_init__(self):
        Policy.parse(self.policy)
        if self.max_cardinality < 1:
            raise ValueError("max_cardinality must be >= 1")
        if self.extractor not in ("test", "file"):
            raise ValueError(f"extractor must be 'test' or 'file', got {self.extractor!r}")
        if self.crop_size % 16:
            raise ValueError("crop_size must be a multiple of 16")

    @classmethod
    def from_file(cls, path, **overrides) -> "PipelineConfig":
        data = json.loads(Path(path).read_text()) if path else {}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ParseError(f"{path}: unknown config keys {sorted(unknown)}")
        # a weightfile named in the config file is relative to that file
        if data.get("weightfile") and not Path(data["weightfile"]).is_absolute():
            data["weightfile"] = str(Path(path).parent / data["weightfile"])
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ----------------------------------------------------------------------------
# reports

def _num(x):
    """JSON-safe float: infinities become strings, ``None`` stays null."""
    if x is None:
        return None
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


@dataclass
class FrameResult:
    frame_index: int
    status: str                       # restored | no_reference | invalid_landmarks
    selected_keyframe: int | None = None
    reference_frame: int | None = None
    landmark_distance: float | None = None
    psnr: float | None = None
    ssim: float | None = None
    psnr_input: float | None = None
    ssim_input: float | None = None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k in ("landmark_distance", "psnr", "ssim", "psnr_input", "ssim_input"):
            d[k] = _num(d[k])
        d.update({name: None for name in EXTERNAL_METRICS})
        return d


@dataclass
class RunReport:
    frames: list = field(default_factory=list)
    keyframes: list = field(default_factory=list)
    max_store_size: int = 0
    timings: dict = field(default_factory=dict)   # frame_index -> seconds; not serialized

    @property
    def metrics(self) -> MetricReport:
        m = MetricReport()
        for f in self.frames:
            m.add(f.psnr, f.ssim)
        return m

    def to_dict(self) -> dict:
        m = self.metrics
        inputs = MetricReport()
        for f in self.frames:
            inputs.add(f.psnr_input, f.ssim_input)
        return {
            "frames": [f.to_dict() for f in self.frames],
            "keyframes": self.keyframes,
            "aggregate": {
                "restored_frames": sum(f.status == "restored" for f in self.frames),
                "passthrough_frames": sum(f.status != "restored" for f in self.frames),
                "max_store_size": self.max_store_size,
                "mean_psnr": _num(m.mean_psnr),
                "mean_ssim": _num(m.mean_ssim),
                "mean_psnr_input": _num(inputs.mean_psnr),
                "mean_ssim_input": _num(inputs.mean_ssim),
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"


# ----------------------------------------------------------------------------
# orchestration

def build_model(config: PipelineConfig):
    """``(extractor, weights)`` per the configuration."""
    if config.weightfile:
        weights = WeightStore.load(config.weightfile)
    else:
        log.warning("no weightfile configured; using seeded weights (seed %d)", config.weight_seed)
        weights = init_weights(config.weight_seed)
    extractor = ConvExtractor(weights) if config.extractor == "file" else test_extractor(config.extractor_seed)
    return extractor, weights


def _feather_mask(size: int, width: int) -> np.ndarray:
    idx = np.arange(size, dtype=np.float64)
    edge = np.minimum(idx, size - 1 - idx)
    ramp = np.clip((edge + 1) / max(width, 1), 0.0, 1.0)
    return np.minimum(ramp[:, None], ramp[None, :])[:, :, None]


def paste_back(frame, crop, tform: geo.SimilarityTransform, feather: int) -> np.ndarray:
    """Composite an aligned crop back into the full frame with a feathered border."""
    h, w = frame.shape[:2]
    size = crop.shape[0]
    ident = geo.DeformationField.identity(w, h)
    crop_coords = tform.apply(ident.offsets)
    inside = ((crop_coords[..., 0] >= 0) & (crop_coords[..., 0] <= size - 1)
              & (crop_coords[..., 1] >= 0) & (crop_coords[..., 1] <= size - 1))
    field_ = geo.DeformationField(w, h, crop_coords)
    back = geo.warp_image(crop, field_)
    mask = geo.warp_image(_feather_mask(size, feather), field_) * inside[..., None]
    return mask * back + (1.0 - mask) * frame


def run_stream(records: Sequence[FrameRecord], config: PipelineConfig = PipelineConfig(),
               out_dir=None, model=None) -> RunReport:
    """Process a frame stream in order; keyframes update the store, other frames are restored.

    When ``out_dir`` is given, restored crops are written as ``{frame_index:06d}.png``
    (plus ``{frame_index:06d}_full.png`` with ``paste_back``).
    """
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    extractor, weights = model if model is not None else build_model(config)
    store = KeyframeStore(config.max_cardinality, config.policy)
    template = geo.load_template(config.crop_size)
    size = config.crop_size
    report = RunReport()

    for rec in records:
        t0 = time.perf_counter()
        try:
            lms = rec.load_landmarks()
            tform = geo.fit_similarity(lms, template)
        except (KFRError, ValueError) as exc:
            log.warning("frame %d: invalid landmarks (%s); passing through", rec.frame_index, exc)
            if rec.is_keyframe:
                report.keyframes.append({"frame_index": rec.frame_index, "status": "invalid_landmarks"})
            else:
                report.frames.append(FrameResult(rec.frame_index, "invalid_landmarks"))
                if out_dir is not None:
                    write_image(out_dir / f"{rec.frame_index:06d}.png", read_image(rec.image_path))
            report.timings[rec.frame_index] = time.perf_counter() - t0
            continue

        frame = read_image(rec.image_path)
        aligned = geo.similarity_crop(frame, tform, size)
        aligned_lms = tform.apply(lms)

        if rec.is_keyframe:
            ins = store.insert_keyframe(aligned, aligned_lms, frame_index=rec.frame_index)
            report.keyframes.append({"frame_index": rec.frame_index, "status": "inserted" if ins.added else "rejected",
                                     "evicted_arrival": ins.evicted_index,
                                     "store": [e.arrival_index for e in store.entries]})
            report.max_store_size = max(report.max_store_size, len(store))
            report.timings[rec.frame_index] = time.perf_counter() - t0
            continue

        result = FrameResult(rec.frame_index, "restored")
        try:
            ref, _ = store.select_reference(aligned_lms, frame_index=rec.frame_index)
        except EmptyStore:
            log.warning("frame %d: no keyframe yet; passing through", rec.frame_index)
            result.status = "no_reference"
            restored = aligned
        else:
            result.selected_keyframe = ref.arrival_index
            result.reference_frame = ref.frame_index
            result.landmark_distance = geo.landmark_distance(ref.landmarks, aligned_lms)
            field_ = geo.mls_build_field(ref.landmarks, aligned_lms, size, size, config.grid_step)
            warped = geo.warp_image(ref.image, field_)
            mask = geo.render_landmark_mask(aligned_lms, size, size, config.landmark_radius)
            restored = restore_forward(aligned, warped, mask, extractor, weights)

        if rec.gt_path is not None:
            gt = geo.similarity_crop(read_image(rec.gt_path), tform, size)
            result.psnr, result.ssim = psnr(restored, gt), ssim(restored, gt)
            result.psnr_input, result.ssim_input = psnr(aligned, gt), ssim(aligned, gt)
        if out_dir is not None:
            write_image(out_dir / f"{rec.frame_index:06d}.png", restored)
            if config.paste_back:
                write_image(out_dir / f"{rec.frame_index:06d}_full.png",
                            paste_back(frame, restored, tform, config.feather))
        report.frames.append(result)
        report.timings[rec.frame_index] = time.perf_counter() - t0

    if out_dir is not None:
        (out_dir / "report.json").write_text(report.to_json())
        (out_dir / "trace.jsonl").write_text(store.export_trace().to_jsonl())
        (out_dir / "timing.json").write_text(json.dumps(
            {str(k): v for k, v in report.timings.items()}, indent=2) + "\n")
    return report


def simulate_policy(records: Sequence[FrameRecord], config: PipelineConfig = PipelineConfig()) -> PolicyTrace:
    """Run only the keyframe-store logic over a stream's landmarks (after alignment)."""
    store = KeyframeStore(config.max_cardinality, config.policy)
    template = geo.load_template(config.crop_size)
    skipped = []
    for rec in records:
        try:
            lms = rec.load_landmarks()
            aligned = geo.fit_similarity(lms, template).apply(lms)
        except KFRError as exc:
            if isinstance(exc, MissingFile):
                raise
            skipped.append(TraceEvent("invalid_landmarks", rec.frame_index, None))
            continue
        if rec.is_keyframe:
            store.insert_keyframe(None, aligned, frame_index=rec.frame_index)
        else:
            try:
                store.select_reference(aligned, frame_index=rec.frame_index)
            except EmptyStore:
                skipped.append(TraceEvent("no_reference", rec.frame_index, None))
    trace = store.export_trace()
    if skipped:
        trace = PolicyTrace(sorted(trace + skipped, key=lambda ev: ev.frame_index))
    return trace


def pair_training_frames(raw_records: Sequence, degraded_records: Sequence,
                         offset: int = 5, stride: int = 5) -> list[tuple]:
    """``(raw[i], degraded[i + offset])`` for ``i = 0, stride, 2*stride, ...`` while in range."""
    if offset < 0 or stride < 1:
        raise ValueError("offset must be >= 0 and stride >= 1")
    n = min(len(raw_records), len(degraded_records) - offset)
    return [(raw_records[i], degraded_records[i + offset]) for i in range(0, max(n, 0), stride)]


def list_images(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise MissingFile(str(d))
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
