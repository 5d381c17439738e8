"""Deterministic in-process stub adapter for tests and demos.

Speaks protocol version 1 on stdin/stdout.  Rules are intentionally
simple and fully documented so expected pipeline outputs can be computed
by hand:

* predict: label 0 if the image's mean intensity (float scale) is below
  0.5, else label 1.
* cam "stubcam": a fixed 7x7 row-major ramp (0/48 .. 48/48) for every
  image, written as a SALM file.
* adversarial "fgsm": adds a +/-eps checkerboard in float scale (+eps
  where (row+col) is even), clips, re-quantizes, writes a PNG.

Identical requests produce byte-identical responses.  Exchange files are
written under CAMROBUST_SCRATCH (or the system temp dir).
"""

from __future__ import annotations

import json
import os
import sys
import tempfile

import numpy as np

from .model import Image, load_image, write_saliency, SaliencyMap, save_image

ADAPTER_ID = "stub-v1"
CAM_METHODS = ("stubcam",)
ATTACKS = ("fgsm",)
DEFAULT_EPS = 0.01


def _scratch_dir() -> str:
    path = os.environ.get("CAMROBUST_SCRATCH") or tempfile.gettempdir()
    os.makedirs(path, exist_ok=True)
    return path


def _ramp_cam() -> SaliencyMap:
    ramp = (np.arange(49, dtype=np.float32) / 48.0).reshape(7, 7)
    return SaliencyMap(values=ramp)


def _checkerboard(image: Image, eps: float) -> Image:
    h, w = image.height, image.width
    yy, xx = np.mgrid[0:h, 0:w]
    sign = np.where((yy + xx) % 2 == 0, 1.0, -1.0)[:, :, None]
    return Image.from_float(image.to_float() + eps * sign)


def _handle(msg: dict, scratch: str) -> dict:
    request_id = msg.get("id")
    base = {"v": 1, "id": request_id}
    op = msg.get("op")
    if msg.get("v") != 1:
        return dict(base, status="error", error=f"unsupported protocol version {msg.get('v')!r}")
    try:
        if op == "handshake":
            return dict(
                base,
                status="ok",
                adapter_id=ADAPTER_ID,
                cams=list(CAM_METHODS),
                attacks=list(ATTACKS),
            )
        if op == "predict":
            image = load_image(msg["image_path"])
            label = 0 if float(image.to_float().mean()) < 0.5 else 1
            return dict(base, status="ok", label=label)
        if op == "cam":
            method = msg.get("cam_method")
            if method not in CAM_METHODS:
                return dict(base, status="error", error=f"unsupported cam method {method!r}")
            load_image(msg["image_path"])  # fail loudly on bad input, like a real backend
            out_path = os.path.join(scratch, f"stub_{request_id}.salm")
            write_saliency(_ramp_cam(), out_path)
            return dict(base, status="ok", saliency_path=out_path)
        if op == "adversarial":
            attack = msg.get("attack") or {}
            name = attack.get("name")
            if name not in ATTACKS:
                return dict(base, status="error", error=f"unsupported attack {name!r}")
            image = load_image(msg["image_path"])
            eps = float(attack.get("eps", DEFAULT_EPS))
            out_path = os.path.join(scratch, f"stub_{request_id}.png")
            save_image(_checkerboard(image, eps), out_path)
            return dict(base, status="ok", image_path=out_path)
        return dict(base, status="error", error=f"unknown op {op!r}")
    except Exception as exc:  # a single bad request must not kill the loop
        return dict(base, status="error", error=f"{type(exc).__name__}: {exc}")


def serve(fin, fout) -> None:
    scratch = _scratch_dir()
    for line in fin:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            fout.write(json.dumps({"v": 1, "id": None, "status": "error", "error": "request is not JSON"}) + "\n")
            fout.flush()
            continue
        if not isinstance(msg, dict):
            msg = {}
        if msg.get("op") == "shutdown":
            fout.write(json.dumps({"v": 1, "id": msg.get("id"), "status": "ok"}) + "\n")
            fout.flush()
            return
        fout.write(json.dumps(_handle(msg, scratch)) + "\n")
        fout.flush()


def command() -> str:
    """Shell command that launches this stub, for configs and tests."""
    return f'"{sys.executable}" -m camrobust.stub_backend'


def main() -> int:
    serve(sys.stdin, sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
