"""Analysis report envelope shared by all CLI subcommands."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

from . import __version__
from .model import FORMAT

GSN_TAGS = {
    "coverage compute": "Sn1",
    "coverage propose": "Sn2",
    "occlusion": "Sn6",
    "perturb": "Sn8",
    "verify": "Sn9",
    "monitor build": "Sn10",
    "monitor check": "Sn10",
}


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def make_report(subcommand: str, arguments: dict, inputs: dict, payload: dict) -> dict:
    """Build a report; everything except ``meta`` is reproducible."""
    return {
        "format": FORMAT,
        "tool": {"name": "depkit", "version": __version__},
        "subcommand": subcommand,
        "arguments": arguments,
        "inputs": {name: file_sha256(p) for name, p in sorted(inputs.items())},
        "gsn_tag": GSN_TAGS[subcommand],
        "payload": payload,
        "payload_sha256": hashlib.sha256(canonical(payload).encode()).hexdigest(),
        "meta": {"generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds")},
    }


def write_atomic(path: str | Path, text: str | bytes) -> None:
    path = Path(path)
    data = text.encode() if isinstance(text, str) else text
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_schema() -> dict:
    text = resources.files("depkit").joinpath("schemas/report.schema.json").read_text()
    return json.loads(text)
