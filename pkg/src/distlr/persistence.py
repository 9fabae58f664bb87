"""Model JSON files, run manifests and atomic file output."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .direct import DirectModel, Gmm2
from .errors import ModelParseError, ModelVersionError
from .indirect import LogisticModel

SCHEMA_VERSION = 1


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def model_to_dict(model) -> dict:
    if isinstance(model, DirectModel):
        return {
            "schema": SCHEMA_VERSION, "kind": "direct",
            "distance_kind": model.distance_kind,
            "feature_subset": None if model.feature_subset is None else list(model.feature_subset),
            "data_mode": model.data_mode,
            "model_ss": model.model_ss.to_dict(), "model_ds": model.model_ds.to_dict(),
        }
    if isinstance(model, LogisticModel):
        return {"schema": SCHEMA_VERSION, "kind": "indirect", **model.to_dict()}
    raise TypeError(f"cannot serialize {type(model).__name__}")


def model_from_dict(d: dict):
    if not isinstance(d, dict):
        raise ModelParseError("model file must contain a JSON object")
    version = d.get("schema")
    if version != SCHEMA_VERSION or isinstance(version, bool):
        raise ModelVersionError(
            f"model schema version {version!r} is not supported (this tool reads version "
            f"{SCHEMA_VERSION})")
    try:
        if d["kind"] == "direct":
            fs = d.get("feature_subset")
            return DirectModel(Gmm2.from_dict(d["model_ss"]), Gmm2.from_dict(d["model_ds"]),
                               d.get("distance_kind", "spearman"),
                               None if fs is None else tuple(fs), d.get("data_mode"))
        if d["kind"] == "indirect":
            return LogisticModel.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelParseError(f"malformed model: {exc}") from exc
    raise ModelParseError(f"unknown model kind {d.get('kind')!r}")


def save_model(model, path, manifest: "RunManifest | None" = None) -> None:
    d = model_to_dict(model)
    if manifest is not None:
        d["manifest"] = manifest.reference(path)
    atomic_write_text(path, dump_json(d))


def load_model(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelParseError(f"cannot read model file: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelParseError(f"model file is not valid JSON: {exc}") from exc
    return model_from_dict(d)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Everything needed to reproduce one CLI run."""

    command: str
    config: dict
    inputs: dict[str, str] = field(default_factory=dict)
    seed: int | None = None
    tool_version: str = __version__
    wall_time: float | None = None
    outputs: list[str] = field(default_factory=list)
    _started: float = field(default_factory=time.perf_counter, repr=False)

    @property
    def run_id(self) -> str:
        core = {"command": self.command, "config": self.config, "inputs": self.inputs,
                "seed": self.seed, "tool_version": self.tool_version}
        return hashlib.blake2b(json.dumps(core, sort_keys=True).encode(),
                               digest_size=8).hexdigest()

    def manifest_path(self, primary) -> Path:
        return Path(str(primary) + ".manifest.json")

    def reference(self, output) -> dict:
        self.outputs.append(str(output))
        return {"id": self.run_id, "path": self.manifest_path(self.outputs[0]).name}

    def comment(self, output) -> str:
        ref = self.reference(output)
        return f"manifest: {ref['id']} {ref['path']}"

    def to_dict(self) -> dict:
        return {"schema": SCHEMA_VERSION, "id": self.run_id, "command": self.command,
                "config": self.config, "inputs": self.inputs, "seed": self.seed,
                "tool_version": self.tool_version, "wall_time_s": self.wall_time,
                "outputs": self.outputs}

    def finish(self) -> Path | None:
        if not self.outputs:
            return None
        self.wall_time = time.perf_counter() - self._started
        path = self.manifest_path(self.outputs[0])
        atomic_write_text(path, dump_json(self.to_dict()))
        return path
