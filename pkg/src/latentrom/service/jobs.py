"""Thread-backed job registry for the long-running pipeline commands."""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field

from ..errors import LatentRomError


@dataclass
class Job:
    id: str
    command: str
    status: str = "queued"  # queued | running | done | failed
    created: float = field(default_factory=time.time)
    started: float | None = None
    finished: float | None = None
    result: dict | None = None
    error: dict | None = None

    def snapshot(self) -> dict:
        return {
            "id": self.id,
            "command": self.command,
            "status": self.status,
            "created": self.created,
            "started": self.started,
            "finished": self.finished,
            "result": self.result,
            "error": self.error,
        }


class JobRegistry:
    def __init__(self):
        self._jobs: dict[str, Job] = {}
        self._lock = threading.Lock()

    def submit(self, command: str, fn) -> Job:
        job = Job(id=uuid.uuid4().hex[:12], command=command)
        with self._lock:
            self._jobs[job.id] = job

        def runner():
            job.status = "running"
            job.started = time.time()
            try:
                job.result = fn()
                job.status = "done"
            except LatentRomError as err:
                job.error = {"category": err.category, "message": str(err)}
                job.status = "failed"
            except Exception as err:  # pragma: no cover - defensive
                job.error = {"category": "internal-error", "message": f"{type(err).__name__}: {err}"}
                job.status = "failed"
            finally:
                job.finished = time.time()

        threading.Thread(target=runner, daemon=True).start()
        return job

    def get(self, job_id: str) -> Job:
        with self._lock:
            return self._jobs[job_id]

    def list(self) -> list[dict]:
        with self._lock:
            return [j.snapshot() for j in self._jobs.values()]

    def wait(self, job_id: str, poll: float = 0.05, timeout: float | None = None) -> Job:
        deadline = None if timeout is None else time.time() + timeout
        job = self.get(job_id)
        while job.status in ("queued", "running"):
            if deadline is not None and time.time() > deadline:
                break
            time.sleep(poll)
        return job
