"""Per-connection token bucket."""


class TokenBucket:
    """Bytes per second with a bounded burst; ``rate <= 0`` means unlimited.

    :meth:`reserve` never refuses: it takes the tokens, possibly going into
    debt, and returns how long (ms) the caller must wait for the debt to clear.
    """

    def __init__(self, rate, burst=None, now=0.0):
        self.rate = float(rate)
        if burst is None:
            burst = max(64 * 1024, self.rate / 10.0)
        self.burst = float(burst)
        self.tokens = self.burst
        self.last = now

    def reserve(self, nbytes, now):
        if self.rate <= 0:
            return 0.0
        elapsed = max(0.0, now - self.last)
        self.tokens = min(self.burst, self.tokens + elapsed * self.rate / 1000.0)
        self.last = now
        self.tokens -= nbytes
        if self.tokens >= 0:
            return 0.0
        return -self.tokens * 1000.0 / self.rate
