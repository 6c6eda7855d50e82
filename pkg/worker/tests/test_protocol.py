import struct

from .conftest import HEADER, WorkerClient


class TestHandshake:
    def test_hello_round_trip(self):
        client = WorkerClient()
        try:
            client.send({"id": "e", "op": "echo", "payload": {"x": 1}})
            assert client.recv() == {"id": "e", "op": "echo", "payload": {"x": 1}}
        finally:
            client.kill()

    def test_mismatched_version_flag_reported_in_reply(self):
        client = WorkerClient(protocol_version=9, handshake=False)
        try:
            client.send({"op": "hello", "protocol_version": 1})
            reply = client.recv()
            assert reply == {"op": "hello", "protocol_version": 9}
            # worker refuses to serve an unsupported protocol after replying
            assert client.close() == 2
        finally:
            client.kill()

    def test_non_hello_first_frame_rejected(self):
        client = WorkerClient(handshake=False)
        try:
            client.send({"id": "x", "op": "echo", "payload": {}})
            reply = client.recv()
            assert reply["status"] == "protocol_error"
            assert client.close() == 1
        finally:
            client.kill()


class TestFrameLoop:
    def test_stream_close_exits_zero(self):
        client = WorkerClient()
        assert client.close() == 0

    def test_garbage_bytes_protocol_error_then_exit(self):
        client = WorkerClient()
        try:
            client.send_raw(HEADER.pack(11) + b"not json!!!")
            reply = client.recv()
            assert reply["status"] == "protocol_error"
            assert client.close() == 1
        finally:
            client.kill()

    def test_oversized_frame_rejected(self):
        client = WorkerClient()
        try:
            client.send_raw(HEADER.pack(1 << 31))
            reply = client.recv()
            assert reply["status"] == "protocol_error"
        finally:
            client.kill()

    def test_unknown_op_rejected(self):
        client = WorkerClient()
        try:
            client.send({"id": "x", "op": "teleport"})
            reply = client.recv()
            assert reply["status"] == "protocol_error"
            assert "teleport" in reply["trace"]
        finally:
            client.kill()

    def test_sequential_requests_one_worker(self, worker):
        for i in range(3):
            worker.send({"id": f"e{i}", "op": "echo", "payload": {"i": i}})
            assert worker.recv()["payload"] == {"i": i}
