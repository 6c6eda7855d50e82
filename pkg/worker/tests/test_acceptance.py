"""Worker release criteria: rendering determinism and limit enforcement."""

import time

from .conftest import WorkerClient, png_bytes

FIXED_SEGMENT = """\
from PIL import Image, ImageDraw
img = Image.open("img0.png").convert("RGB")
d = ImageDraw.Draw(img)
d.polygon([(10, 40), (10, 10), (50, 40)], outline="black")
d.line([10, 40, 50, 10], fill="red", width=2)
d.text((26, 20), "A", fill="black")
img.save("annotated.png")
"""


def test_sandbox_determinism_across_runs_and_workers():
    image = png_bytes()
    digests = []
    worker_a = WorkerClient()
    try:
        for _ in range(3):
            resp = worker_a.exec(FIXED_SEGMENT, images=[("img0", image)])
            assert resp["status"] == "ok" and len(resp["images"]) == 1
            digests.append(resp["images"][0])
    finally:
        worker_a.kill()
    worker_b = WorkerClient()
    try:
        resp = worker_b.exec(FIXED_SEGMENT, images=[("img0", image)])
        assert resp["status"] == "ok"
        digests.append(resp["images"][0])
    finally:
        worker_b.kill()
    assert len(set(digests)) == 1
    print("\n[ACCEPTANCE] sandbox-determinism: PASS")


def test_limit_enforcement_and_statelessness():
    worker = WorkerClient()
    try:
        t0 = time.monotonic()
        spin = worker.exec("while True: pass", timeout_ms=700)
        wall = time.monotonic() - t0
        assert spin["status"] == "timeout" and wall <= 1.4

        socket_try = worker.exec("import socket\nsocket.socket()")
        assert socket_try["status"] == "error"
        assert "socket" in socket_try["trace"]

        escape = worker.exec("open('/tmp/worker-escape', 'w').write('x')")
        assert escape["status"] == "error"
        assert "write outside" in escape["trace"]

        a = worker.exec("from PIL import Image\n"
                        "Image.new('RGB', (6, 6), 'blue').save('a.png')")
        assert a["status"] == "ok"
        b_after = worker.exec("from PIL import Image\n"
                              "Image.new('RGB', (6, 6), 'green').save('b.png')")
    finally:
        worker.kill()
    fresh = WorkerClient()
    try:
        b_alone = fresh.exec("from PIL import Image\n"
                             "Image.new('RGB', (6, 6), 'green').save('b.png')")
    finally:
        fresh.kill()
    assert b_after["images"] == b_alone["images"]
    print("\n[ACCEPTANCE] limit-enforcement-statelessness: PASS")
