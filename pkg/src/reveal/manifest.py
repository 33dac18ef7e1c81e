"""Run manifests: what was run, with which inputs, producing which files."""

from __future__ import annotations

import hashlib
import json
import os
import platform
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def versions() -> dict:
    import matplotlib
    import numpy
    import scipy

    from . import __version__

    return {
        "reveal": __version__,
        "python": platform.python_version(),
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "matplotlib": matplotlib.__version__,
    }


def atomic_write(path, data) -> None:
    """Write bytes or text via a temp file in the same directory, then rename."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict = field(default_factory=dict)
    config_hash: str = ""
    seeds: list = field(default_factory=list)
    versions: dict = field(default_factory=versions)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    _clock: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.config and not self.config_hash:
            blob = json.dumps(self.config, sort_keys=True).encode()
            self.config_hash = hashlib.sha256(blob).hexdigest()
        self._clock["start"] = time.perf_counter()

    def add_input(self, path) -> None:
        self.inputs[str(path)] = file_digest(path)

    def add_output(self, path) -> None:
        self.outputs[Path(path).name] = file_digest(path)

    def tic(self, name: str) -> None:
        self._clock[name] = time.perf_counter()

    def toc(self, name: str) -> None:
        self.timings[name] = round(time.perf_counter() - self._clock.pop(name), 4)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("_clock")
        return d

    def write(self, path) -> None:
        self.timings["total"] = round(time.perf_counter() - self._clock["start"], 4)
        atomic_write(path, json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @staticmethod
    def load(path) -> dict:
        return json.loads(Path(path).read_text(encoding="utf-8"))
