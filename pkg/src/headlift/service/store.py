"""In-memory LRU session store; the only shared mutable state of the service."""

import threading
import time
import uuid
from collections import OrderedDict
from dataclasses import dataclass, field

from ..errors import ConfigurationError

DEFAULT_CAPACITY = 32


@dataclass
class Session:
    session_id: str
    cloud: object
    source: str  # "reconstruct" or "edit"
    created_at: float = field(default_factory=time.time)


class SessionStore:
    """Bounded session cache, least-recently-rendered eviction.

    Lookups refresh recency, so capacity pressure evicts the session whose
    last render is oldest.  All operations hold one lock; values are
    immutable after insertion.
    """

    def __init__(self, capacity=DEFAULT_CAPACITY):
        if capacity < 1:
            raise ConfigurationError("session capacity must be >= 1")
        self.capacity = capacity
        self._lock = threading.Lock()
        self._sessions = OrderedDict()

    def put(self, cloud, source):
        session = Session(uuid.uuid4().hex, cloud, source)
        with self._lock:
            self._sessions[session.session_id] = session
            while len(self._sessions) > self.capacity:
                self._sessions.popitem(last=False)
        return session

    def get(self, session_id):
        with self._lock:
            session = self._sessions.get(session_id)
            if session is not None:
                self._sessions.move_to_end(session_id)
            return session

    def __len__(self):
        with self._lock:
            return len(self._sessions)

    def ids(self):
        with self._lock:
            return list(self._sessions)
