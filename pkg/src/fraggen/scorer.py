"""Main-reward scorers: built-in objectives and the external wire protocol.

Scorer protocol v1, newline-delimited over the child's stdin/stdout:
one request line = base64 of an ATG v1 record; one reply line = decimal
score or the literal ``NaN``; replies arrive in request order.  External
replies follow the docking convention (lower is better) and are negated
into rewards; ``NaN`` and timeouts score 0.
"""

from __future__ import annotations

import base64
import logging
import select
import shlex
import subprocess

import numpy as np

from .graphs import AttributedGraph, serialize_graph
from .rewards import (
    LogpTable,
    QedParams,
    SaTable,
    load_logp_table,
    load_qed_params,
    load_sa_table,
    qed,
    sa,
    surrogate_logp,
)
from .toylibs import label_count

log = logging.getLogger("fraggen")


class ScorerProtocolError(RuntimeError):
    pass


class FunctionScorer:
    """Wrap a per-graph function; failures score 0 with a warning."""

    def __init__(self, fn, name: str):
        self.fn = fn
        self.name = name
        self.n_exchanges = 0

    def score_batch(self, graphs) -> list[float]:
        out = []
        for g in graphs:
            self.n_exchanges += 1
            try:
                out.append(float(self.fn(g)))
            except Exception as exc:
                log.warning("scorer %s failed (%s); scoring 0", self.name, exc)
                out.append(0.0)
        return out

    def close(self):
        pass


class ExternalScorer:
    """Client for the subprocess wire protocol."""

    def __init__(self, command: str, timeout: float = 60.0):
        self.command = command
        self.timeout = timeout
        self.n_exchanges = 0
        self._start()

    def _start(self):
        try:
            self._proc = subprocess.Popen(
                shlex.split(self.command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise ScorerProtocolError(
                f"cannot start scorer {self.command!r}: {exc}") from exc

    def _read_line(self) -> str | None:
        """One reply line, or None on timeout."""
        fd = self._proc.stdout
        ready, _, _ = select.select([fd], [], [], self.timeout)
        if not ready:
            return None
        line = fd.readline()
        if line == "":
            raise ScorerProtocolError(
                f"scorer {self.command!r} closed its stdout mid-protocol")
        return line.strip()

    def score_batch(self, graphs) -> list[float]:
        graphs = list(graphs)
        if not graphs:
            return []
        try:
            for g in graphs:
                payload = base64.b64encode(serialize_graph(g).encode()).decode()
                self._proc.stdin.write(payload + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ScorerProtocolError(
                f"scorer {self.command!r} pipe failed: {exc}") from exc
        out = []
        for i in range(len(graphs)):
            self.n_exchanges += 1
            line = self._read_line()
            if line is None:
                log.warning("scorer timed out after %.0fs; scoring 0 and "
                            "restarting", self.timeout)
                self._proc.kill()
                self._start()
                out.extend([0.0] * (len(graphs) - i))
                break
            if line == "NaN":
                out.append(0.0)
                continue
            try:
                score = float(line)
            except ValueError:
                raise ScorerProtocolError(
                    f"scorer {self.command!r} sent malformed reply {line!r}")
            out.append(-score)  # docking convention: lower score, higher reward
        return out

    def close(self):
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()


def make_scorer(spec: str, qed_params: QedParams | None = None,
                sa_table: SaTable | None = None,
                logp_table: LogpTable | None = None,
                timeout: float = 60.0):
    """Build a scorer from its CLI spelling."""
    if spec.startswith("external:"):
        return ExternalScorer(spec.split(":", 1)[1], timeout=timeout)
    if spec == "surrogate-logp":
        table = logp_table or load_logp_table()
        return FunctionScorer(lambda g: surrogate_logp(g, table), spec)
    if spec == "qed":
        params = qed_params or load_qed_params()
        return FunctionScorer(lambda g: qed(g, params), spec)
    if spec == "sa":
        table = sa_table or load_sa_table()
        return FunctionScorer(lambda g: sa(g, table), spec)
    if spec == "node-count":
        return FunctionScorer(lambda g: float(g.n), spec)
    if spec.startswith("label-count:"):
        lab = int(spec.split(":", 1)[1])
        return FunctionScorer(lambda g: label_count(g, lab), spec)
    raise ValueError(
        f"unknown scorer {spec!r}; use surrogate-logp, qed, sa, node-count, "
        f"label-count:<k> or external:<cmd>")
