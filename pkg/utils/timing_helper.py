import signal
from contextlib import contextmanager


class TimeLimitExceeded(Exception): pass


@contextmanager
def time_limit(seconds):
    """Raise TimeLimitExceeded if the block runs longer than `seconds` (SIGALRM, main thread only)."""
    def signal_handler(signum, frame):
        raise TimeLimitExceeded(f"exceeded the {seconds} s runtime ceiling")
    previous = signal.signal(signal.SIGALRM, signal_handler)
    signal.alarm(int(seconds))
    try:
        yield
    finally:
        signal.alarm(0)
        signal.signal(signal.SIGALRM, previous)
