import sys
import time

import numpy as np
import pytest

from camrobust import (
    AdapterClient,
    BackendError,
    BadSaliencyFile,
    Image,
    ProtocolError,
    ProtocolVersionMismatch,
    SpawnFailure,
    Timeout,
    UnsupportedAttack,
    UnsupportedCamMethod,
    save_image,
)


def fake_adapter(tmp_path, body: str) -> str:
    """Write a python script acting as an adapter; return its launch command."""
    path = tmp_path / "fake_adapter.py"
    path.write_text(body)
    return f'"{sys.executable}" "{path}"'


HANDSHAKE_OK = """\
import json, sys
def reply(**kw):
    sys.stdout.write(json.dumps(kw) + "\\n")
    sys.stdout.flush()
for line in sys.stdin:
    msg = json.loads(line)
    if msg["op"] == "handshake":
        reply(v=1, id=msg["id"], status="ok", adapter_id="fake", cams=["stubcam"], attacks=[])
        continue
%s
"""


@pytest.fixture
def image_path(tmp_path, random_image):
    path = tmp_path / "input.png"
    save_image(random_image(16, 16, seed=0), path)
    return path


# ---------------------------------------------------------------------------
# process and handshake failure modes


class TestSpawnAndHandshake:
    def test_stub_capabilities(self, stub_command, tmp_path):
        with AdapterClient(stub_command, scratch_dir=tmp_path) as client:
            caps = client.capabilities
            assert caps.adapter_id == "stub-v1"
            assert caps.cam_methods == ("stubcam",)
            assert caps.attacks == ("fgsm",)

    def test_empty_command(self):
        with pytest.raises(SpawnFailure):
            AdapterClient("")

    def test_missing_binary(self):
        with pytest.raises(SpawnFailure):
            AdapterClient("/no/such/binary-anywhere")

    def test_command_that_exits_immediately(self):
        with pytest.raises(SpawnFailure) as err:
            AdapterClient("false")
        assert "handshake failed" in str(err.value)

    def test_garbage_reply(self, tmp_path):
        cmd = fake_adapter(
            tmp_path,
            'import sys\n'
            'sys.stdin.readline()\n'
            'sys.stdout.write("alive, but not speaking json\\n")\n'
            'sys.stdout.flush()\n'
            'sys.stdin.read()\n',
        )
        with pytest.raises(ProtocolVersionMismatch):
            AdapterClient(cmd)

    def test_wrong_protocol_version(self, tmp_path):
        cmd = fake_adapter(
            tmp_path,
            'import json, sys\n'
            'msg = json.loads(sys.stdin.readline())\n'
            'sys.stdout.write(json.dumps({"v": 2, "id": msg["id"], "status": "ok"}) + "\\n")\n'
            'sys.stdout.flush()\n'
            'sys.stdin.read()\n',
        )
        with pytest.raises(ProtocolVersionMismatch):
            AdapterClient(cmd)

    def test_handshake_reply_missing_capabilities(self, tmp_path):
        cmd = fake_adapter(
            tmp_path,
            'import json, sys\n'
            'msg = json.loads(sys.stdin.readline())\n'
            'sys.stdout.write(json.dumps({"v": 1, "id": msg["id"], "status": "ok",'
            ' "adapter_id": "fake"}) + "\\n")\n'
            'sys.stdout.flush()\n'
            'sys.stdin.read()\n',
        )
        with pytest.raises(ProtocolError) as err:
            AdapterClient(cmd)
        assert "cams" in str(err.value)


# ---------------------------------------------------------------------------
# request failure modes


class TestRequestHandling:
    def test_unknown_request_id_is_a_protocol_error(self, tmp_path, image_path):
        cmd = fake_adapter(
            tmp_path,
            HANDSHAKE_OK % '    reply(v=1, id="bogus", status="ok", label=0)',
        )
        with AdapterClient(cmd) as client:
            with pytest.raises(ProtocolError):
                client.predict(image_path)

    def test_timeout_respawns_once_then_raises(self, tmp_path, image_path):
        marker = tmp_path / "starts.log"
        cmd = fake_adapter(
            tmp_path,
            f'import json, sys, time\n'
            f'open({str(marker)!r}, "a").write("start\\n")\n'
            + HANDSHAKE_OK % "    time.sleep(30)",
        )
        t0 = time.monotonic()
        client = AdapterClient(cmd, timeout=0.5)
        try:
            with pytest.raises(Timeout):
                client.predict(image_path)
        finally:
            client.close()
        assert time.monotonic() - t0 < 20  # killed, not waited out
        assert marker.read_text().count("start") == 2  # exactly one respawn

    def test_backend_error_message_is_surfaced(self, stub_command, tmp_path):
        with AdapterClient(stub_command, scratch_dir=tmp_path) as client:
            with pytest.raises(BackendError) as err:
                client.predict(tmp_path / "missing.png")
            assert "MissingFile" in str(err.value)

    def test_truncated_saliency_file(self, tmp_path, image_path):
        op_body = (
            '    path = __import__("os").path.join(__import__("tempfile").gettempdir(),'
            ' "broken.salm")\n'
            '    open(path, "wb").write(b"SALM\\x07")\n'
            '    reply(v=1, id=msg["id"], status="ok", saliency_path=path)'
        )
        cmd = fake_adapter(tmp_path, HANDSHAKE_OK % op_body)
        with AdapterClient(cmd) as client:
            with pytest.raises(BadSaliencyFile):
                client.generate_cam(image_path, "stubcam", target_size=(16, 16))

    def test_unsupported_cam_method_fails_client_side(self, stub_command, image_path, tmp_path):
        with AdapterClient(stub_command, scratch_dir=tmp_path) as client:
            with pytest.raises(UnsupportedCamMethod):
                client.generate_cam(image_path, "gradcam", target_size=(16, 16))

    def test_unsupported_attack(self, stub_command, image_path, tmp_path):
        with AdapterClient(stub_command, scratch_dir=tmp_path) as client:
            with pytest.raises(UnsupportedAttack):
                client.generate_adversarial(image_path, "cw")


# ---------------------------------------------------------------------------
# stub behavior through the client


class TestStubThroughClient:
    def test_predict_mean_threshold(self, stub_command, tmp_path):
        dark = tmp_path / "dark.png"
        bright = tmp_path / "bright.png"
        save_image(Image(np.full((8, 8, 3), 10, np.uint8)), dark)
        save_image(Image(np.full((8, 8, 3), 250, np.uint8)), bright)
        with AdapterClient(stub_command, scratch_dir=tmp_path) as client:
            assert client.predict(dark) == 0
            assert client.predict(bright) == 1

    def test_cam_is_normalized_upsampled_ramp(self, stub_command, image_path, tmp_path):
        with AdapterClient(stub_command, scratch_dir=tmp_path) as client:
            smap = client.generate_cam(image_path, "stubcam", target_size=(16, 16))
        assert smap.values.shape == (16, 16)
        assert smap.values[0, 0] == 0.0
        assert smap.values[-1, -1] == 1.0
        # row-major ramp stays monotone along each row after upsampling
        assert np.all(np.diff(smap.values, axis=1) >= 0)
        assert not smap.degenerate

    def test_cam_deterministic_across_calls(self, stub_command, image_path, tmp_path):
        with AdapterClient(stub_command, scratch_dir=tmp_path) as client:
            a = client.generate_cam(image_path, "stubcam", target_size=(9, 9))
            b = client.generate_cam(image_path, "stubcam", target_size=(9, 9))
        assert a.values.tobytes() == b.values.tobytes()

    def test_adversarial_checkerboard(self, stub_command, tmp_path):
        src = tmp_path / "gray.png"
        save_image(Image(np.full((8, 8, 3), 128, np.uint8)), src)
        with AdapterClient(stub_command, scratch_dir=tmp_path) as client:
            out, out_path = client.generate_adversarial(src, "fgsm", eps=0.1)
        assert str(out_path).startswith(str(tmp_path))
        expected_up = np.rint((128 / 255 + 0.1) * 255)  # 154
        expected_dn = np.rint((128 / 255 - 0.1) * 255)  # 102 (rounds half to even)
        assert out.data[0, 0, 0] == expected_up
        assert out.data[0, 1, 0] == expected_dn
        assert out.data[1, 0, 0] == expected_dn
        assert out.data[1, 1, 0] == expected_up

    def test_adversarial_default_eps(self, stub_command, tmp_path):
        src = tmp_path / "gray.png"
        save_image(Image(np.full((8, 8, 3), 128, np.uint8)), src)
        with AdapterClient(stub_command, scratch_dir=tmp_path) as client:
            out, _ = client.generate_adversarial(src, "fgsm")
        assert out.data[0, 0, 0] == np.rint((128 / 255 + 0.01) * 255)

    def test_exchange_files_live_under_scratch(self, stub_command, image_path, tmp_path):
        scratch = tmp_path / "scratch"
        scratch.mkdir()
        with AdapterClient(stub_command, scratch_dir=scratch) as client:
            client.generate_cam(image_path, "stubcam", target_size=(8, 8))
            client.generate_adversarial(image_path, "fgsm", eps=0.05)
        names = [p.name for p in scratch.iterdir()]
        assert any(n.endswith(".salm") for n in names)
        assert any(n.endswith(".png") for n in names)

    def test_close_terminates_the_process(self, stub_command, tmp_path):
        client = AdapterClient(stub_command, scratch_dir=tmp_path)
        proc = client._child.proc
        client.close()
        assert proc.poll() is not None
