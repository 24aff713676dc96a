"""
Gradescope-style JSON results for the macrolimit test suites
"""
import json
import sys
import time
from unittest.signals import registerResult

from gradescope_utils.autograder_utils.json_test_runner import JSONTestResult


class ErrorAwareJSONTestResult(JSONTestResult):
	def addError(self, test, err):
		super(JSONTestResult, self).addError(test, err)
		# keep tracebacks of crashing tests out of the console, they are recorded in the JSON
		self._mirrorOutput = False
		self.processResult(test, self.errors[-1])


class JSONTestRunner(object):
	"""Runs a suite and dumps score, per-test results and timing as JSON to `stream`."""
	resultclass = ErrorAwareJSONTestResult

	def __init__(self, stream=sys.stdout, descriptions=True, verbosity=1,
				 failfast=False, buffer=True, visibility=None, comment=""):
		self.stream = stream
		self.descriptions = descriptions
		self.verbosity = verbosity
		self.failfast = failfast
		self.buffer = buffer
		self.json_data = {'output': comment, 'tests': [], 'leaderboard': []}
		if visibility:
			self.json_data['visibility'] = visibility

	def _makeResult(self):
		return self.resultclass(self.stream, self.descriptions, self.verbosity,
								self.json_data['tests'], self.json_data['leaderboard'])

	def run(self, test):
		result = self._makeResult()
		registerResult(result)
		result.failfast = self.failfast
		result.buffer = self.buffer
		start = time.time()
		result.startTestRun()
		try:
			test(result)
		finally:
			result.stopTestRun()
		self.json_data['execution_time'] = format(time.time() - start, '0.2f')

		tests = self.json_data['tests']
		self.json_data['score'] = sum(t.get('score', 0) for t in tests)
		self.json_data['max_score'] = sum(t.get('max_score', 0) for t in tests)
		failed = [t['name'] for t in tests if t.get('score', 0) < t.get('max_score', 0)]
		if failed:
			self.json_data['output'] += '\nFailed: ' + ', '.join(failed)

		json.dump(self.json_data, self.stream, indent=4)
		self.stream.write('\n')
		return result
