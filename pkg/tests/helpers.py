"""Shared test fixtures: random container files and a byte-flipping proxy."""

from __future__ import annotations

import random
import socket
import threading

import numpy as np

from picoflow import emdlite
from picoflow.emdlite import (
    AxisKind, Dataset, DatasetDescriptor, DetectorInfo, DType, EmdLiteFile,
    ExperimentMetadata, SampleInfo, SoftwareInfo, StagePosition,
)

ELEMENTS = ["Au", "C", "Si", "O", "Cu", "N", "Fe", "Pt"]


def minimal_metadata(stamp: str = "2023-05-01T10:00:00Z") -> ExperimentMetadata:
    return ExperimentMetadata(acquisition_datetime=stamp)


def minimal_file() -> EmdLiteFile:
    return EmdLiteFile(metadata=minimal_metadata(), datasets=[])


def random_metadata(rng: random.Random) -> ExperimentMetadata:
    stamp = f"2023-{rng.randint(1, 12):02d}-{rng.randint(1, 28):02d}T{rng.randint(0, 23):02d}:00:00Z"
    return ExperimentMetadata(
        acquisition_datetime=stamp,
        beam_energy=rng.uniform(30.0, 300.0),
        magnification=rng.choice([1e3, 8e4, 2e5]),
        stage_position=StagePosition(*(rng.uniform(-5, 5) for _ in range(5))),
        detector=DetectorInfo(name=rng.choice(["xpad", "haadf"]), position="inserted"),
        software=SoftwareInfo(name="synth", version=f"{rng.randint(0, 3)}.{rng.randint(0, 9)}"),
        sample=SampleInfo(description=f"sample {rng.randint(0, 999)}",
                          elements=rng.sample(ELEMENTS, rng.randint(1, 3))),
        extra={"run": rng.randint(0, 10)} if rng.random() < 0.5 else {},
    )


def random_dataset(rng: random.Random, index: int) -> Dataset:
    dtype = rng.choice(list(DType))
    ndim = rng.randint(1, 4)
    dims = tuple(rng.randint(1, 5) for _ in range(ndim))
    axes = tuple(rng.choice(list(AxisKind)) for _ in range(ndim))
    desc = DatasetDescriptor(name=f"ds{index}_{rng.randint(0, 99)}",
                             dtype=dtype, dims=dims, axes=axes)
    payload = bytes(rng.getrandbits(8) for _ in range(desc.payload_len))
    return Dataset(descriptor=desc, payload=payload)


def random_file(rng: random.Random, max_datasets: int = 3) -> EmdLiteFile:
    return EmdLiteFile(
        metadata=random_metadata(rng),
        datasets=[random_dataset(rng, i) for i in range(rng.randint(0, max_datasets))],
    )


def hyperspectral_file(width=4, height=4, energy=8, fill=None, seed=0) -> EmdLiteFile:
    if fill is None:
        cube = np.random.default_rng(seed).uniform(0, 10, (width, height, energy))
    else:
        cube = np.full((width, height, energy), fill, dtype=np.float64)
    ds = Dataset.from_array("cube", cube, emdlite.HYPERSPECTRAL_AXES)
    return EmdLiteFile(metadata=minimal_metadata(), datasets=[ds])


def spatiotemporal_file(frames=3, height=16, width=16, seed=0) -> EmdLiteFile:
    stack = np.random.default_rng(seed).uniform(0, 1, (frames, height, width))
    ds = Dataset.from_array("stack", stack, emdlite.SPATIOTEMPORAL_AXES)
    return EmdLiteFile(metadata=minimal_metadata(), datasets=[ds])


class FlippingProxy:
    """TCP proxy that flips one bit of the Nth client->server body byte.

    The flip lands after the HTTP header terminator so requests stay
    parseable; every new connection gets the same treatment.
    """

    def __init__(self, upstream_host: str, upstream_port: int, flip_body_offset: int = 100):
        self.upstream = (upstream_host, upstream_port)
        self.flip_body_offset = flip_body_offset
        self._server = socket.create_server(("127.0.0.1", 0))
        self.port = self._server.getsockname()[1]
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._thread.start()

    def _accept_loop(self):
        self._server.settimeout(0.2)
        while not self._stop.is_set():
            try:
                client, _ = self._server.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            threading.Thread(target=self._pump, args=(client,), daemon=True).start()

    def _pump(self, client: socket.socket):
        try:
            upstream = socket.create_connection(self.upstream)
        except OSError:
            client.close()
            return

        def forward(src, dst, corrupt: bool):
            header_buf = b""
            header_done = False
            body_seen = 0
            flipped = False
            try:
                while True:
                    data = src.recv(65536)
                    if not data:
                        break
                    if corrupt and not flipped:
                        if not header_done:
                            chunk_start = len(header_buf)
                            header_buf += data
                            marker = header_buf.find(b"\r\n\r\n")
                            if marker >= 0:
                                header_done = True
                                body_start_in_chunk = max(0, marker + 4 - chunk_start)
                                data, flipped, body_seen = self._maybe_flip(
                                    data, body_start_in_chunk, body_seen)
                        else:
                            data, flipped, body_seen = self._maybe_flip(data, 0, body_seen)
                    dst.sendall(data)
            except OSError:
                pass
            finally:
                try:
                    dst.shutdown(socket.SHUT_WR)
                except OSError:
                    pass

        t1 = threading.Thread(target=forward, args=(client, upstream, True), daemon=True)
        t2 = threading.Thread(target=forward, args=(upstream, client, False), daemon=True)
        t1.start()
        t2.start()
        t1.join()
        t2.join()
        client.close()
        upstream.close()

    def _maybe_flip(self, data: bytes, body_start_in_chunk: int, body_seen: int):
        body_bytes = len(data) - body_start_in_chunk
        target = self.flip_body_offset - body_seen
        if 0 <= target < body_bytes:
            index = body_start_in_chunk + target
            mutated = bytearray(data)
            mutated[index] ^= 0x01
            return bytes(mutated), True, body_seen + body_bytes
        return data, False, body_seen + body_bytes

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def close(self):
        self._stop.set()
        self._server.close()
        self._thread.join(timeout=2)
