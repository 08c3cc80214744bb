import io
import json
import math
import os
import tempfile

import jsonschema
import numpy as np
from django.test import SimpleTestCase

from quickdetect.changepoint.reports import emit_report, make_header, normalize, render_csv


class NormalizeTests(SimpleTestCase):
    def test_significant_digits(self):
        self.assertEqual(normalize(1 / 3), 0.333333333333)
        self.assertEqual(normalize(np.float64(123456.78901234567)), 123456.789012)
        self.assertIsNone(normalize(math.inf))
        self.assertEqual(normalize({"a": np.arange(2), "b": np.bool_(True)}),
                         {"a": [0, 1], "b": True})


class EmitReportTests(SimpleTestCase):
    def setUp(self):
        self.header = make_header({"model": "u2b"}, seed=0, grid_size=100, command="oc")

    def test_json_is_byte_stable(self):
        report = {"arl": 2.0000000000004, "curve": [1.5, 1.25], "name": "sr"}
        first = emit_report(report, header=self.header)
        second = emit_report(dict(reversed(list(report.items()))), header=self.header)
        self.assertEqual(first, second)
        document = json.loads(first)
        self.assertEqual(document["report"]["arl"], 2.0)
        self.assertEqual(document["header"]["tool"], "quickdetect")

    def test_schema_rejects_empty_report(self):
        with self.assertRaises(jsonschema.ValidationError):
            emit_report({}, header=self.header)

    def test_stream(self):
        stream = io.StringIO()
        text = emit_report({"value": 1}, header=self.header, stream=stream)
        self.assertEqual(stream.getvalue(), text)

    def test_csv(self):
        text = render_csv([{"nu": 0, "add": 1.0 / 3}, {"nu": 1, "add": 2.5}], self.header,
                          columns=("nu", "add"))
        lines = text.splitlines()
        self.assertTrue(all(line.startswith("# ") for line in lines[:6]))
        self.assertIn('# command: "oc"', lines)
        self.assertEqual(lines[6:], ["nu,add", "0,0.333333333333", "1,2.5"])

    def test_file_output(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "report.json")
            text = emit_report({"value": 1}, header=self.header, path=path)
            with open(path, encoding="utf-8") as handle:
                self.assertEqual(handle.read(), text)

    def test_unwritable_path(self):
        with self.assertRaises(OSError) as raised:
            emit_report({"value": 1}, header=self.header, path="/nonexistent/dir/report.json")
        self.assertIn("/nonexistent/dir/report.json", str(raised.exception))

    def test_unknown_format(self):
        with self.assertRaises(ValueError):
            emit_report({"value": 1}, format="xml", header=self.header)
