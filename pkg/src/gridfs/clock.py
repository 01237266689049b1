"""Clocks and cooperative tasks.

Service code is written as plain blocking Python. It sleeps, spawns helper
tasks and waits on events only through a clock object, so the same code runs
against wall-clock time (:class:`RealClock`) or inside the simulator
(:class:`VirtualClock`).

The virtual clock runs every task on its own OS thread but lets exactly one
of them execute at a time. A task gives up the baton only when it sleeps,
waits or finishes; the next task is the one with the smallest
``(wake time, sequence)`` key. Given the same script, the interleaving and
therefore every timestamp is reproducible.

All times are milliseconds.
"""

import heapq
import itertools
import threading
import time


class Deadlock(RuntimeError):
    pass


class RealClock:
    def __init__(self):
        self._t0 = time.monotonic()

    def now(self):
        return (time.monotonic() - self._t0) * 1000.0

    def sleep(self, ms):
        if ms > 0:
            time.sleep(ms / 1000.0)

    def sleep_until(self, t):
        self.sleep(t - self.now())

    def spawn(self, fn, *args, name=None):
        task = _RealTask(fn, args)
        task.thread = threading.Thread(target=task.run, name=name, daemon=True)
        task.thread.start()
        return task

    def event(self):
        return _RealEvent()

    def lock(self):
        return threading.Lock()


class _RealTask:
    def __init__(self, fn, args):
        self.fn, self.args = fn, args
        self.result = None
        self.error = None
        self.thread = None

    def run(self):
        try:
            self.result = self.fn(*self.args)
        except BaseException as exc:  # re-raised by join()
            self.error = exc

    @property
    def done(self):
        return not self.thread.is_alive()

    def join(self, timeout=None):
        self.thread.join(None if timeout is None else timeout / 1000.0)
        if self.error is not None:
            raise self.error
        return self.result


class _RealEvent:
    def __init__(self):
        self._ev = threading.Event()

    def set(self):
        self._ev.set()

    def is_set(self):
        return self._ev.is_set()

    def wait(self, timeout=None):
        return self._ev.wait(None if timeout is None else timeout / 1000.0)


class _Task:
    __slots__ = ("name", "gate", "ticket", "done", "result", "error", "finished")

    def __init__(self, name):
        self.name = name
        self.gate = threading.Semaphore(0)
        self.ticket = None
        self.done = False
        self.result = None
        self.error = None
        self.finished = None


class VirtualClock:
    """Deterministic virtual time shared by all simulated nodes."""

    #: wall-clock seconds a parked thread waits before declaring the scheduler stuck
    watchdog_s = 1800.0

    def __init__(self, start=0.0):
        self._now = float(start)
        self._seq = itertools.count()
        self._heap = []
        self._mutex = threading.Lock()
        self._local = threading.local()
        self._names = itertools.count(1)

    # -- public API -------------------------------------------------------

    def now(self):
        return self._now

    def sleep(self, ms):
        if ms <= 0:
            return
        me = self._me()
        with self._mutex:
            self._schedule(me, self._now + ms)
        self._switch(me)

    def sleep_until(self, t):
        self.sleep(t - self._now)

    def yield_(self):
        """Let other tasks runnable at the current instant go first."""
        me = self._me()
        with self._mutex:
            self._schedule(me, self._now)
        self._switch(me)

    def spawn(self, fn, *args, name=None):
        task = _Task(name or "task-%d" % next(self._names))
        task.finished = self.event()

        def body():
            self._local.task = task
            self._park(task)
            try:
                task.result = fn(*args)
            except BaseException as exc:
                task.error = exc
            task.done = True
            task.finished.set()
            self._handoff()

        with self._mutex:
            self._schedule(task, self._now)
        threading.Thread(target=body, name=task.name, daemon=True).start()
        return _TaskHandle(self, task)

    def event(self):
        return _SimEvent(self)

    def lock(self):
        return _SimLock(self)

    def run_until_idle(self):
        """Let every other runnable or sleeping task finish its work."""
        me = self._me()
        while True:
            with self._mutex:
                self._drop_stale()
                if not self._heap:
                    return
                self._schedule(me, max(self._now, self._heap[0][0]))
            self._switch(me)

    # -- scheduler internals ---------------------------------------------

    def _me(self):
        task = getattr(self._local, "task", None)
        if task is None:
            task = _Task(threading.current_thread().name)
            self._local.task = task
        return task

    def _schedule(self, task, t):
        ticket = object()
        task.ticket = ticket
        heapq.heappush(self._heap, (t, next(self._seq), ticket, task))

    def _drop_stale(self):
        while self._heap and self._heap[0][3].ticket is not self._heap[0][2]:
            heapq.heappop(self._heap)

    def _pop_next(self):
        self._drop_stale()
        if not self._heap:
            return None
        t, _, _, task = heapq.heappop(self._heap)
        task.ticket = None
        if t > self._now:
            self._now = t
        return task

    def _switch(self, me):
        with self._mutex:
            nxt = self._pop_next()
        if nxt is None:
            raise Deadlock("no runnable task at t=%.3f ms" % self._now)
        if nxt is not me:
            nxt.gate.release()
            self._park(me)

    def _park(self, task):
        if not task.gate.acquire(timeout=self.watchdog_s):
            raise Deadlock("task %s never resumed" % task.name)

    def _handoff(self):
        with self._mutex:
            nxt = self._pop_next()
        if nxt is not None:
            nxt.gate.release()


class _TaskHandle:
    def __init__(self, clock, task):
        self._clock = clock
        self._task = task

    @property
    def done(self):
        return self._task.done

    def join(self, timeout=None):
        if not self._task.done:
            self._task.finished.wait(timeout)
        if self._task.error is not None:
            raise self._task.error
        return self._task.result


class _SimEvent:
    def __init__(self, clock):
        self._clock = clock
        self._flag = False
        self._waiters = []

    def is_set(self):
        return self._flag

    def set(self):
        clock = self._clock
        with clock._mutex:
            if self._flag:
                return
            self._flag = True
            waiters, self._waiters = self._waiters, []
            for task in waiters:
                clock._schedule(task, clock._now)

    def wait(self, timeout=None):
        clock = self._clock
        me = clock._me()
        with clock._mutex:
            if self._flag:
                return True
            self._waiters.append(me)
            if timeout is not None:
                clock._schedule(me, clock._now + timeout)
        clock._switch(me)
        with clock._mutex:
            if me in self._waiters:
                self._waiters.remove(me)
        return self._flag


class _SimLock:
    """Mutual exclusion that hands the baton on while blocked."""

    def __init__(self, clock):
        self._clock = clock
        self._held = False
        self._queue = []

    def acquire(self):
        while self._held:
            ev = self._clock.event()
            self._queue.append(ev)
            ev.wait()
        self._held = True
        return True

    def release(self):
        self._held = False
        if self._queue:
            self._queue.pop(0).set()

    def __enter__(self):
        self.acquire()
        return self

    def __exit__(self, *exc):
        self.release()
