"""Portable on-disk formats: signal containers, schedules, weights and
dataset directories.

A signal container is one JSON header line (newline terminated) followed by
the raw payload as little-endian complex128 samples (interleaved float64
re/im pairs, row-major). Schedules are plain text with '#' comments.
Weights are a JSON document; floats survive the roundtrip exactly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .network import LsWeights, ModernWeights, NetMeta, PARAM_FIELDS
from .sampling import POISSON_ALGORITHM, Schedule
from .errors import ValidationError

FORMAT_VERSION = 1


class ContainerError(ValueError):
    pass


class MalformedHeaderError(ContainerError):
    pass


class TruncatedPayloadError(ContainerError):
    pass


class VersionMismatchError(ContainerError):
    pass


class ScheduleFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class WeightsFormatError(ValueError):
    pass


@dataclass
class SignalContainer:
    """Header plus complex payload. ``kind`` is ``fid`` or ``spectrum``."""

    kind: str
    values: np.ndarray
    ve: bool = False
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("fid", "spectrum"):
            raise ValidationError("kind", f"expected 'fid' or 'spectrum', got {self.kind!r}")
        arr = np.asarray(self.values, dtype=np.complex128)
        if arr.ndim not in (1, 2) or arr.size == 0:
            raise ValidationError("values", "payload must be a nonempty 1-D or 2-D array")
        self.values = arr
        self.meta = {str(k): str(v) for k, v in self.meta.items()}

    @property
    def dims(self) -> int:
        return self.values.ndim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape


def container_bytes(c: SignalContainer) -> bytes:
    header = {
        "format_version": FORMAT_VERSION,
        "kind": c.kind,
        "dims": c.dims,
        "shape": list(c.shape),
        "ve": bool(c.ve),
        "meta": c.meta,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n"
    payload = np.ascontiguousarray(c.values).astype("<c16").tobytes()
    return head + payload


def write_container(c: SignalContainer, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(container_bytes(c))


def container_from_bytes(blob: bytes) -> SignalContainer:
    nl = blob.find(b"\n")
    if nl < 0:
        raise MalformedHeaderError("no newline-terminated header line found")
    try:
        header = json.loads(blob[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeaderError(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise MalformedHeaderError("header must be a JSON object")
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"format_version {version!r}, expected {FORMAT_VERSION}")
    try:
        kind = header["kind"]
        dims = int(header["dims"])
        shape = tuple(int(s) for s in header["shape"])
        ve = bool(header.get("ve", False))
        meta = dict(header.get("meta", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedHeaderError(f"bad header field: {exc}") from exc
    if kind not in ("fid", "spectrum") or dims not in (1, 2) or len(shape) != dims:
        raise MalformedHeaderError(f"inconsistent kind/dims/shape: {kind!r}/{dims}/{shape}")
    expected = 16 * int(np.prod(shape))
    payload = blob[nl + 1 :]
    if len(payload) != expected:
        raise TruncatedPayloadError(f"payload holds {len(payload)} bytes, expected {expected}")
    values = np.frombuffer(payload, dtype="<c16").reshape(shape).astype(np.complex128)
    return SignalContainer(kind=kind, values=values, ve=ve, meta=meta)


def read_container(path: str | os.PathLike) -> SignalContainer:
    with open(path, "rb") as fh:
        return container_from_bytes(fh.read())


def reconstruction_container(spectrum_values: np.ndarray, method: str, ve: bool) -> SignalContainer:
    """Canonical result container; identical inputs give identical bytes
    regardless of where the reconstruction ran."""
    return SignalContainer(kind="spectrum", values=spectrum_values, ve=ve, meta={"method": method})


# ---------------------------------------------------------------------------
# schedule files


def schedule_text(s: Schedule, generator: str | None = None) -> str:
    if generator is None:
        generator = f"poisson-gap({POISSON_ALGORITHM})" if not s.is_plane else "external"
    grid = f"{s.grid_n[0]} {s.grid_n[1]}" if s.is_plane else str(s.grid_n)
    lines = [
        "# nusrecon schedule v1",
        f"# grid: {grid}",
        f"# density: {s.density:.10g}",
        f"# generator: {generator}",
        f"# seed: {s.seed}",
    ]
    if s.is_plane:
        lines += [f"{i} {j}" for i, j in s.indices]
    else:
        lines += [str(i) for i in s.indices]
    return "\n".join(lines) + "\n"


def write_schedule(s: Schedule, path: str | os.PathLike, generator: str | None = None) -> None:
    with open(path, "w") as fh:
        fh.write(schedule_text(s, generator))


def schedule_from_text(text: str) -> Schedule:
    grid = None
    seed = 0
    rows: list[tuple[int, ...]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("grid:"):
                parts = body[len("grid:") :].split()
                try:
                    grid = tuple(int(p) for p in parts)
                except ValueError:
                    raise ScheduleFormatError(f"bad grid spec {body!r}", lineno)
            elif body.startswith("seed:"):
                try:
                    seed = int(body[len("seed:") :].strip())
                except ValueError:
                    raise ScheduleFormatError(f"bad seed {body!r}", lineno)
            continue
        parts = line.split()
        if len(parts) not in (1, 2):
            raise ScheduleFormatError(f"expected 1 or 2 integers, got {line!r}", lineno)
        try:
            rows.append(tuple(int(p) for p in parts))
        except ValueError:
            raise ScheduleFormatError(f"non-integer index {line!r}", lineno)
    if grid is None:
        raise ScheduleFormatError("missing '# grid:' header")
    if not rows:
        raise ScheduleFormatError("schedule holds no indices")
    widths = {len(r) for r in rows}
    if len(widths) != 1 or len(grid) != widths.pop():
        raise ScheduleFormatError("index width does not match the grid dimensionality")
    try:
        if len(grid) == 2:
            return Schedule((grid[0], grid[1]), np.asarray(rows, dtype=np.int64), seed=seed)
        return Schedule(int(grid[0]), np.asarray([r[0] for r in rows], dtype=np.int64), seed=seed)
    except ValidationError as exc:
        raise ScheduleFormatError(str(exc)) from exc


def read_schedule(path: str | os.PathLike) -> Schedule:
    with open(path, "r") as fh:
        return schedule_from_text(fh.read())


# ---------------------------------------------------------------------------
# weights files


def weights_to_document(w: ModernWeights) -> dict:
    meta = w.meta
    return {
        "format_version": FORMAT_VERSION,
        "meta": {
            "k_iters": meta.k_iters,
            "dims": meta.dims,
            "kernel_width": meta.kernel_width,
            "trained_density": meta.trained_density,
            "ve_trained": meta.ve_trained,
            "non_adaptive": meta.non_adaptive,
            "fixed_thetas": None if meta.fixed_thetas is None else meta.fixed_thetas.tolist(),
            "extra": meta.extra,
        },
        "blocks": [
            {name: getattr(blk, name).tolist() for name in PARAM_FIELDS}
            | {
                "bn_running_mean": blk.bn_running_mean.tolist(),
                "bn_running_var": blk.bn_running_var.tolist(),
            }
            for blk in w.blocks
        ],
    }


def write_weights(w: ModernWeights, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        json.dump(weights_to_document(w), fh)
        fh.write("\n")


def weights_from_document(doc: dict) -> ModernWeights:
    try:
        if doc.get("format_version") != FORMAT_VERSION:
            raise WeightsFormatError(f"format_version {doc.get('format_version')!r}")
        m = doc["meta"]
        meta = NetMeta(
            k_iters=int(m["k_iters"]),
            dims=int(m["dims"]),
            kernel_width=int(m.get("kernel_width", 3)),
            trained_density=m.get("trained_density"),
            ve_trained=bool(m.get("ve_trained", True)),
            non_adaptive=bool(m.get("non_adaptive", False)),
            fixed_thetas=None
            if m.get("fixed_thetas") is None
            else np.asarray(m["fixed_thetas"], dtype=np.float64),
            extra=dict(m.get("extra", {})),
        )
        blocks = []
        for raw in doc["blocks"]:
            fields = {
                name: np.asarray(raw[name], dtype=np.float64)
                for name in PARAM_FIELDS + ("bn_running_mean", "bn_running_var")
            }
            blocks.append(LsWeights(**fields))
    except (KeyError, TypeError, ValueError) as exc:
        raise WeightsFormatError(f"malformed weights document: {exc}") from exc
    w = ModernWeights(blocks, meta)
    try:
        w.validate()
    except ValidationError as exc:
        raise WeightsFormatError(f"weights fail validation: {exc}") from exc
    return w


def read_weights(path: str | os.PathLike) -> ModernWeights:
    with open(path, "r") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise WeightsFormatError(f"not valid JSON: {exc}") from exc
    return weights_from_document(doc)


# ---------------------------------------------------------------------------
# dataset directories


def write_dataset(split, out_dir: str | os.PathLike) -> None:
    from dataclasses import asdict

    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "spec": asdict(split.spec),
        "counts": {"train": len(split.train), "valid": len(split.valid)},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    for name, ds in (("train", split.train), ("valid", split.valid)):
        np.savez(
            os.path.join(out_dir, f"{name}.npz"),
            y_full=ds.y_full,
            mask=ds.mask,
            labels=ds.labels,
            ve=np.asarray(ds.ve),
            original_n=np.asarray(ds.original_n),
        )


def read_dataset(in_dir: str | os.PathLike):
    from .training import Dataset, DatasetSpec, DatasetSplit

    with open(os.path.join(in_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    spec_fields = dict(manifest["spec"])
    for key in ("peaks_range", "amplitude_range", "frequency_range", "decay_range", "phase_range"):
        if key in spec_fields:
            spec_fields[key] = tuple(spec_fields[key])
    spec = DatasetSpec(**spec_fields)
    parts = {}
    for name in ("train", "valid"):
        with np.load(os.path.join(in_dir, f"{name}.npz")) as z:
            parts[name] = Dataset(
                y_full=z["y_full"],
                mask=z["mask"],
                labels=z["labels"],
                ve=bool(z["ve"]),
                original_n=int(z["original_n"]),
            )
    return DatasetSplit(train=parts["train"], valid=parts["valid"], spec=spec)
