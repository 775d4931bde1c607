"""Recording TCP proxy.

Sits between a client and an upstream service and captures every byte in
both directions, so a scanner can inspect exactly what an on-path observer
(the "phone" layer, the network, the relay's front door) would see. Bytes
are accumulated per connection per direction, so a match can never be lost
to a packet-boundary split.
"""

from __future__ import annotations

import socket
import threading
from dataclasses import dataclass


@dataclass(frozen=True)
class Flow:
    label: str
    data: bytes


class Wiretap:
    def __init__(self, upstream_host: str, upstream_port: int,
                 bind_host: str = "127.0.0.1", bind_port: int = 0):
        self._upstream = (upstream_host, upstream_port)
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((bind_host, bind_port))
        self._listener.listen(32)
        self.host, self.port = self._listener.getsockname()
        self._flows: dict[str, bytearray] = {}
        self._order: list[str] = []
        self._lock = threading.Lock()
        self._threads: list[threading.Thread] = []
        self._conn_counter = 0
        self._closing = False
        self._accept_thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def start(self) -> "Wiretap":
        self._accept_thread = threading.Thread(target=self._accept_loop,
                                               name="wiretap-accept",
                                               daemon=True)
        self._accept_thread.start()
        return self

    def stop(self) -> None:
        self._closing = True
        # A thread blocked in accept() holds the kernel socket open past
        # close(); poke it so the listener actually dies now.
        try:
            with socket.create_connection((self.host, self.port), timeout=1):
                pass
        except OSError:
            pass
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2)
        try:
            self._listener.close()
        except OSError:
            pass
        for thread in self._threads:
            thread.join(timeout=2)

    def transcript(self) -> list[Flow]:
        """All captured flows in first-byte order, one entry per direction."""
        with self._lock:
            return [Flow(label, bytes(self._flows[label]))
                    for label in self._order]

    def _record(self, label: str, chunk: bytes) -> None:
        with self._lock:
            if label not in self._flows:
                self._flows[label] = bytearray()
                self._order.append(label)
            self._flows[label] += chunk

    def _accept_loop(self) -> None:
        while True:
            try:
                client, _ = self._listener.accept()
            except OSError:
                return
            if self._closing:
                client.close()
                return
            self._conn_counter += 1
            conn_id = self._conn_counter
            thread = threading.Thread(target=self._handle,
                                      args=(client, conn_id),
                                      name=f"wiretap-conn{conn_id}",
                                      daemon=True)
            self._threads.append(thread)
            thread.start()

    def _handle(self, client: socket.socket, conn_id: int) -> None:
        try:
            upstream = socket.create_connection(self._upstream, timeout=10)
        except OSError:
            client.close()
            return
        pumps = [
            threading.Thread(
                target=self._pump,
                args=(client, upstream, f"conn{conn_id} client->server"),
                daemon=True),
            threading.Thread(
                target=self._pump,
                args=(upstream, client, f"conn{conn_id} server->client"),
                daemon=True),
        ]
        for pump in pumps:
            pump.start()
        for pump in pumps:
            pump.join()
        for sock in (client, upstream):
            try:
                sock.close()
            except OSError:
                pass

    def _pump(self, src: socket.socket, dst: socket.socket, label: str) -> None:
        while True:
            try:
                chunk = src.recv(65536)
            except OSError:
                break
            if not chunk:
                break
            self._record(label, chunk)
            try:
                dst.sendall(chunk)
            except OSError:
                break
        try:
            dst.shutdown(socket.SHUT_WR)
        except OSError:
            pass
