"""Client for model-backend adapter subprocesses.

The adapter is any executable speaking newline-delimited JSON on
stdin/stdout (protocol version 1).  The client owns the process: it
spawns, handshakes, sends one request at a time, and enforces a
per-request timeout with a single kill-and-respawn retry before giving
up.  Saliency maps travel out of band as SALM files whose paths appear
in responses.
"""

from __future__ import annotations

import json
import os
import queue
import shlex
import subprocess
import threading
from dataclasses import dataclass

from .errors import (
    BackendError,
    BadSaliencyFile,
    CamRobustError,
    ProtocolError,
    ProtocolVersionMismatch,
    SpawnFailure,
    Timeout,
    UnsupportedAttack,
    UnsupportedCamMethod,
)
from .model import Image, SaliencyMap, load_image, normalize_saliency, read_saliency, upsample_bilinear

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT = 60.0


@dataclass(frozen=True)
class AdapterCapabilities:
    adapter_id: str
    cam_methods: tuple
    attacks: tuple


class _Child:
    """One spawned adapter process plus a line-reader thread."""

    def __init__(self, argv, scratch_dir):
        env = dict(os.environ)
        if scratch_dir is not None:
            env["CAMROBUST_SCRATCH"] = str(scratch_dir)
        try:
            self.proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                env=env,
            )
        except OSError as exc:
            raise SpawnFailure(f"could not start adapter {argv!r}: {exc}") from exc
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self):
        try:
            for line in self.proc.stdout:
                self._lines.put(line)
        except ValueError:
            pass  # stdout closed under us during shutdown
        self._lines.put(None)

    def send(self, payload: dict) -> None:
        try:
            self.proc.stdin.write(json.dumps(payload) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError) as exc:
            raise BackendError(f"adapter stdin closed: {exc}") from exc

    def read_line(self, timeout: float) -> str:
        try:
            line = self._lines.get(timeout=timeout)
        except queue.Empty:
            raise Timeout(f"no adapter response within {timeout:.0f}s") from None
        if line is None:
            raise BackendError("adapter process closed its output stream")
        return line

    def kill(self):
        try:
            if self.proc.poll() is None:
                self.proc.kill()
            self.proc.wait(timeout=5)
        except Exception:
            pass
        for stream in (self.proc.stdin, self.proc.stdout):
            try:
                if stream:
                    stream.close()
            except Exception:
                pass

    def shutdown(self, request_id: str):
        try:
            self.send({"v": PROTOCOL_VERSION, "id": request_id, "op": "shutdown"})
            self.proc.wait(timeout=5)
        except Exception:
            pass
        self.kill()


class AdapterClient:
    """Drives one adapter subprocess; safe for one thread at a time."""

    def __init__(self, command: str, scratch_dir=None, timeout: float = DEFAULT_TIMEOUT):
        self._argv = shlex.split(command)
        if not self._argv:
            raise SpawnFailure("empty adapter command")
        self._scratch = scratch_dir
        self._timeout = timeout
        self._counter = 0
        self._child = _Child(self._argv, scratch_dir)
        self.capabilities = self._handshake()

    # -- plumbing -----------------------------------------------------------

    def _next_id(self) -> str:
        self._counter += 1
        return f"r{self._counter}"

    def _handshake(self) -> AdapterCapabilities:
        request_id = self._next_id()
        try:
            self._child.send({"v": PROTOCOL_VERSION, "id": request_id, "op": "handshake"})
            line = self._child.read_line(self._timeout)
        except BackendError as exc:
            code = self._child.proc.poll()
            detail = f"exited with code {code}" if code is not None else str(exc)
            raise SpawnFailure(f"adapter handshake failed: {detail}") from exc
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolVersionMismatch(f"handshake reply is not JSON: {line[:200]!r}") from exc
        if not isinstance(msg, dict) or msg.get("v") != PROTOCOL_VERSION:
            raise ProtocolVersionMismatch(f"adapter speaks version {msg.get('v')!r}, expected {PROTOCOL_VERSION}")
        if msg.get("id") != request_id:
            raise ProtocolError(f"handshake reply for unknown request id {msg.get('id')!r}")
        if msg.get("status") != "ok":
            raise BackendError(str(msg.get("error", "handshake failed")))
        for field in ("adapter_id", "cams", "attacks"):
            if field not in msg:
                raise ProtocolError(f"handshake reply is missing {field!r}")
        return AdapterCapabilities(
            adapter_id=str(msg["adapter_id"]),
            cam_methods=tuple(msg["cams"]),
            attacks=tuple(msg["attacks"]),
        )

    def _respawn(self):
        self._child.kill()
        self._child = _Child(self._argv, self._scratch)
        self.capabilities = self._handshake()

    def _roundtrip(self, payload: dict) -> dict:
        """Send one request; on timeout, respawn once and retry it."""
        for attempt in (0, 1):
            request_id = self._next_id()
            message = dict(payload, v=PROTOCOL_VERSION, id=request_id)
            try:
                self._child.send(message)
                while True:
                    line = self._child.read_line(self._timeout)
                    try:
                        reply = json.loads(line)
                    except json.JSONDecodeError as exc:
                        raise ProtocolError(f"adapter sent a non-JSON line: {line[:200]!r}") from exc
                    if not isinstance(reply, dict) or "id" not in reply:
                        raise ProtocolError("adapter reply has no request id")
                    if reply["id"] != request_id:
                        raise ProtocolError(f"adapter replied to unknown request id {reply['id']!r}")
                    break
            except Timeout:
                if attempt == 0:
                    self._respawn()
                    continue
                raise
            if reply.get("status") == "ok":
                return reply
            if reply.get("status") == "error":
                raise BackendError(str(reply.get("error", "unspecified adapter error")))
            raise ProtocolError(f"adapter reply has unknown status {reply.get('status')!r}")
        raise AssertionError("unreachable")

    # -- operations ---------------------------------------------------------

    def predict(self, image_path) -> int:
        reply = self._roundtrip({"op": "predict", "image_path": str(image_path)})
        if "label" not in reply:
            raise ProtocolError("predict reply is missing 'label'")
        return int(reply["label"])

    def generate_cam(self, image_path, cam_method: str, target_size: tuple) -> SaliencyMap:
        """CAM for the top-1 class, normalized and upsampled to target (w, h)."""
        if cam_method not in self.capabilities.cam_methods:
            raise UnsupportedCamMethod(f"adapter {self.capabilities.adapter_id} lacks CAM method {cam_method!r}")
        reply = self._roundtrip({"op": "cam", "image_path": str(image_path), "cam_method": cam_method})
        if "saliency_path" not in reply:
            raise ProtocolError("cam reply is missing 'saliency_path'")
        try:
            raw = read_saliency(reply["saliency_path"])
        except CamRobustError as exc:
            raise BadSaliencyFile(f"unreadable saliency from adapter: {exc}") from exc
        target_w, target_h = target_size
        return upsample_bilinear(normalize_saliency(raw), target_w, target_h)

    def generate_adversarial(self, image_path, attack: str, eps: float | None = None) -> tuple:
        """Run an attack; returns (perturbed Image, path written by the adapter)."""
        if attack not in self.capabilities.attacks:
            raise UnsupportedAttack(f"adapter {self.capabilities.adapter_id} lacks attack {attack!r}")
        spec: dict = {"name": attack}
        if eps is not None:
            spec["eps"] = eps
        reply = self._roundtrip({"op": "adversarial", "image_path": str(image_path), "attack": spec})
        if "image_path" not in reply:
            raise ProtocolError("adversarial reply is missing 'image_path'")
        source = load_image(image_path)
        result = load_image(reply["image_path"])
        if (result.height, result.width) != (source.height, source.width):
            raise BackendError(
                f"adversarial image is {result.width}x{result.height}, input was {source.width}x{source.height}"
            )
        return result, reply["image_path"]

    def close(self):
        self._child.shutdown(self._next_id())

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()
        return False
