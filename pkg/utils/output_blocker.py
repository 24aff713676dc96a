import io
import sys


"""Redirects stdout and stderr into buffers so CLI tests can inspect what a command printed"""
class CaptureStd:
    def __enter__(self):
        self._original = sys.stdout, sys.stderr
        self.stdout, self.stderr = io.StringIO(), io.StringIO()
        sys.stdout, sys.stderr = self.stdout, self.stderr
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        sys.stdout, sys.stderr = self._original
