"""
Split Plant/Controller Nodes.

The plant node stands in for the engine and its rapid-prototyping unit: once per
engine period it runs one plant cycle, sends the measurement, and waits up to
the compute budget for the actuation that echoes the cycle id. A missing or
late reply holds the last actuation (status fallback). The controller node
answers each new measurement with one actuation and sends heartbeats while idle.

Both nodes run a receive thread that decodes datagrams into a queue and a main
loop that consumes it; the solve itself runs on the main loop only.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from typing import Optional

import numpy as np
import pandas as pd

from lstm_nmpc.controller import NmpcController
from lstm_nmpc.domain import Actuation, ActuatorBounds, ModelOutput
from lstm_nmpc.errors import WireError
from lstm_nmpc.ocp import Reference
from lstm_nmpc.rt_bridge.timing import CycleClock
from lstm_nmpc.rt_bridge.wire import (
    STATUS_DEGRADED,
    STATUS_FALLBACK,
    STATUS_OK,
    ActuationMsg,
    HeartbeatMsg,
    MeasurementMsg,
    decode,
    encode,
)
from lstm_nmpc.surrogate_plant import SurrogatePlant

logger = logging.getLogger(__name__)

Address = tuple[str, int]
RECV_TIMEOUT_S = 0.05
MAX_DATAGRAM = 2048
# a peer counts as alive if heard from within this many periods
ALIVE_PERIODS = 3
SEQ_MODULUS = 2**32

PLANT_LOG_COLUMNS = [
    "cycle",
    "imep",
    "ca50",
    "nox",
    "mprr",
    "r_imep",
    "r_ca50",
    "doi_fuel",
    "doi_water",
    "nvo",
    "solve_time_us",
    "round_trip_ms",
    "status",
    "miss",
    "jitter_ms",
    "peer_alive",
]
CONTROLLER_LOG_COLUMNS = [
    "cycle",
    "seq",
    "imep",
    "ca50",
    "nox",
    "mprr",
    "r_imep",
    "r_ca50",
    "doi_fuel",
    "doi_water",
    "nvo",
    "predicted_imep",
    "predicted_ca50",
    "cost",
    "sqp_iterations",
    "solve_time_us",
    "status",
]


def seq_distance(seq: int, last: int) -> int:
    """Steps from `last` forward to `seq` on the 32-bit counter; values past 2**31 mean older."""
    return (seq - last) % SEQ_MODULUS


def _open_socket(bind: Address) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.bind(bind)
    sock.settimeout(RECV_TIMEOUT_S)
    return sock


class _UdpNode:
    """Socket, receive thread and inbox shared by both node types."""

    def __init__(self, bind: Address):
        self.sock = _open_socket(bind)
        self.inbox: queue.Queue = queue.Queue()
        self.malformed = 0
        self._stop = threading.Event()
        self._receiver: Optional[threading.Thread] = None

    @property
    def address(self) -> Address:
        return self.sock.getsockname()

    def _accept(self, msg, sender: Address) -> None:
        self.inbox.put((msg, sender))

    def _receive_loop(self) -> None:
        while not self._stop.is_set():
            try:
                data, sender = self.sock.recvfrom(MAX_DATAGRAM)
            except socket.timeout:
                continue
            except ConnectionRefusedError:
                # ICMP port unreachable from a peer that is not listening
                logger.debug("Peer port unreachable, still listening")
                continue
            except OSError:
                if self._stop.is_set():
                    return
                raise
            try:
                msg = decode(data)
            except WireError as exc:
                self.malformed += 1
                logger.warning("Dropped malformed packet from %s: %s", sender, exc)
                continue
            self._accept(msg, sender)

    def start(self) -> None:
        self._stop.clear()
        self._receiver = threading.Thread(target=self._receive_loop, daemon=True)
        self._receiver.start()

    def stop(self) -> None:
        self._stop.set()

    def close(self) -> None:
        self.stop()
        if self._receiver is not None:
            self._receiver.join(timeout=1.0)
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


class PlantNode(_UdpNode):
    """
    Plant side of the split loop.

    Parameters:
        plant (SurrogatePlant): Plant instance owned by this node.
        reference (Reference): Per-cycle targets; cycle k's measurement carries
            the target of cycle k+1.
        clock (CycleClock): Period and reply budget.
        bind (Address): Local UDP address (port 0 picks an ephemeral port).
        controller (Address): Where measurements are sent.
        u_init (Actuation): Actuation applied until the first valid reply.
        bounds (ActuatorBounds): Replies outside these bounds are rejected.
        loss_rate (float): Probability of discarding each inbound packet.
        seed (int): Seed of the loss injection.
    """

    def __init__(
        self,
        plant: SurrogatePlant,
        reference: Reference,
        clock: CycleClock,
        bind: Address,
        controller: Address,
        u_init: Actuation,
        bounds: ActuatorBounds,
        loss_rate: float = 0.0,
        seed: int = 0,
    ):
        if not 0.0 <= loss_rate <= 1.0:
            raise ValueError("loss_rate must lie in [0, 1]")
        if not bounds.contains(u_init):
            raise ValueError(f"initial actuation {u_init} violates actuator bounds")
        super().__init__(bind)
        self.plant = plant
        self.reference = reference
        self.clock = clock
        self.controller = controller
        self.u_init = u_init
        self.bounds = bounds
        self.loss_rate = loss_rate
        self._loss_rng = np.random.default_rng(seed)
        self.last_heard = float("-inf")
        self.dropped = 0
        self.stale = 0

    def _accept(self, msg, sender: Address) -> None:
        if self.loss_rate and self._loss_rng.random() < self.loss_rate:
            self.dropped += 1
            return
        if isinstance(msg, (ActuationMsg, HeartbeatMsg)):
            self.last_heard = time.perf_counter()
        if isinstance(msg, ActuationMsg):
            self.inbox.put((msg, sender))

    def _await_reply(self, cycle: int, deadline: float) -> Optional[ActuationMsg]:
        while True:
            remaining = deadline - time.perf_counter()
            if remaining <= 0:
                return None
            try:
                msg, _ = self.inbox.get(timeout=remaining)
            except queue.Empty:
                return None
            if msg.cycle == cycle:
                return msg
            self.stale += 1
            logger.debug("Discarded stale actuation for cycle %d during cycle %d", msg.cycle, cycle)

    def run(self, n_cycles: int) -> pd.DataFrame:
        """Run `n_cycles` paced cycles and return the run log."""
        self.start()
        rows = []
        actuation = self.u_init
        start = time.perf_counter() + self.clock.period_s / 10
        try:
            for cycle in range(n_cycles):
                target = self.clock.emission_time(start, cycle)
                self.clock.wait_until(target)
                measured = self.plant.step(actuation)
                r_imep, r_ca50 = self.reference.at(cycle + 1)
                sent_at = time.perf_counter()
                self.sock.sendto(
                    encode(MeasurementMsg(cycle, cycle, *measured.as_array(), r_imep, r_ca50)),
                    self.controller,
                )
                reply = self._await_reply(cycle, sent_at + self.clock.budget_s)
                received_at = time.perf_counter()

                applied = actuation
                if reply is not None and reply.status != STATUS_FALLBACK:
                    candidate = Actuation(reply.doi_fuel, reply.doi_water, reply.nvo)
                    if self.bounds.contains(candidate):
                        actuation, status, miss = candidate, reply.status, False
                    else:
                        logger.warning("Cycle %d: actuation %s out of bounds, holding", cycle, candidate)
                        status, miss = STATUS_FALLBACK, True
                else:
                    status, miss = STATUS_FALLBACK, True
                    logger.warning("Cycle %d: no reply within %.1f ms, holding last actuation",
                                   cycle, self.clock.budget_ms)
                rows.append(
                    [
                        cycle,
                        *measured.as_array(),
                        *self.reference.at(cycle),
                        *applied.as_array(),
                        reply.solve_time_us if reply is not None else np.nan,
                        1e3 * (received_at - sent_at) if reply is not None else np.nan,
                        status,
                        miss,
                        1e3 * (sent_at - target),
                        time.perf_counter() - self.last_heard
                        <= ALIVE_PERIODS * self.clock.period_s,
                    ]
                )
        finally:
            self.stop()
        log = pd.DataFrame(rows, columns=PLANT_LOG_COLUMNS)
        logger.info(
            "Plant node finished %d cycles: %d misses, %d stale replies, %d injected losses",
            n_cycles,
            int(log["miss"].sum()) if len(log) else 0,
            self.stale,
            self.dropped,
        )
        return log


class ControllerNode(_UdpNode):
    """
    Controller side of the split loop.

    Each new measurement (by sequence number) gets exactly one reply, sent back to
    the address it came from. Sequence numbers compare modulo 2**32, so the
    counter may wrap. Repeated or older sequence numbers are ignored and gaps are
    counted and logged. An older sequence number carrying cycle 0 means the plant
    restarted: the controller state is reset and the new session is served.
    """

    def __init__(
        self,
        controller: NmpcController,
        bind: Address,
        clock: CycleClock,
        plant: Optional[Address] = None,
    ):
        super().__init__(bind)
        self.controller = controller
        self.clock = clock
        self.plant = plant
        self.last_seq: Optional[int] = None
        self.last_cycle = 0
        self.gaps = 0
        self.duplicates = 0
        self.replies = 0
        self.sessions = 1
        self._reply_seq = 0

    def _send(self, msg, destination: Address) -> None:
        self.sock.sendto(encode(msg), destination)
        self._reply_seq = (self._reply_seq + 1) % SEQ_MODULUS

    def _handle(self, msg: MeasurementMsg, sender: Address) -> Optional[list]:
        if self.last_seq is not None:
            ahead = seq_distance(msg.seq, self.last_seq)
            if ahead == 0 or (ahead >= SEQ_MODULUS // 2 and msg.cycle != 0):
                self.duplicates += 1
                logger.debug("Ignored repeated measurement seq %d", msg.seq)
                return None
            if ahead >= SEQ_MODULUS // 2:
                logger.info(
                    "Plant restarted at seq %d after seq %d, starting a new session",
                    msg.seq,
                    self.last_seq,
                )
                self.controller.reset()
                self.sessions += 1
            elif ahead > 1:
                self.gaps += ahead - 1
                logger.warning(
                    "Sequence gap: %d measurement(s) missing before seq %d", ahead - 1, msg.seq
                )
        self.last_seq = msg.seq
        self.plant = sender

        started = time.perf_counter()
        measurement = ModelOutput(msg.imep, msg.ca50, msg.nox, msg.mprr)
        step = self.controller.step(msg.cycle, measurement, (msg.r_imep, msg.r_ca50))
        solve_time_us = max(1, int(round(1e6 * (time.perf_counter() - started))))
        status = STATUS_DEGRADED if step.result.degraded else STATUS_OK
        u = step.actuation
        self._send(
            ActuationMsg(
                self._reply_seq, msg.cycle, u.doi_fuel, u.doi_water, u.nvo, solve_time_us, status
            ),
            sender,
        )
        self.replies += 1
        self.last_cycle = msg.cycle
        if solve_time_us > 1e3 * self.clock.budget_ms:
            logger.warning("Cycle %d: solve took %d us, over the budget", msg.cycle, solve_time_us)
        return [
            msg.cycle,
            msg.seq,
            msg.imep,
            msg.ca50,
            msg.nox,
            msg.mprr,
            msg.r_imep,
            msg.r_ca50,
            *u.as_array(),
            step.predicted.imep,
            step.predicted.ca50,
            step.result.final_cost,
            step.result.iterations,
            solve_time_us,
            status,
        ]

    def run(
        self, max_cycles: Optional[int] = None, idle_timeout_s: Optional[float] = None
    ) -> pd.DataFrame:
        """
        Serve measurements until `max_cycles` replies, an idle timeout or `stop()`.

        A heartbeat goes to the last known plant address after every idle period.
        """
        self.start()
        rows = []
        idle_since = time.perf_counter()
        try:
            while not self._stop.is_set():
                if max_cycles is not None and self.replies >= max_cycles:
                    break
                try:
                    msg, sender = self.inbox.get(timeout=self.clock.period_s)
                except queue.Empty:
                    if self.plant is not None:
                        self._send(HeartbeatMsg(self._reply_seq, self.last_cycle), self.plant)
                    if idle_timeout_s is not None and time.perf_counter() - idle_since > idle_timeout_s:
                        logger.info("Controller node idle for %.1f s, stopping", idle_timeout_s)
                        break
                    continue
                if not isinstance(msg, MeasurementMsg):
                    continue
                row = self._handle(msg, sender)
                if row is not None:
                    rows.append(row)
                    idle_since = time.perf_counter()
        finally:
            self.stop()
        logger.info(
            "Controller node answered %d measurements: %d duplicates, %d missing, %d malformed",
            self.replies,
            self.duplicates,
            self.gaps,
            self.malformed,
        )
        return pd.DataFrame(rows, columns=CONTROLLER_LOG_COLUMNS)
