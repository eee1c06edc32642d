"""
Tests: CSV ingestion
"""

import os
import tempfile
import unittest
from unittest.mock import MagicMock

import numpy as np

from asac_tool.errors import IngestError
from asac_tool.harness import CsvSchema, export_csv, ingest_csv
from asac_tool.types import Episode, Task
from asac_tool_tests.fixtures import random_episodes


class TestIngestCsv(unittest.TestCase):
    """
    Unit tests for the `ingest_csv` function.
    """

    def setUp(self):
        self.logger = MagicMock()
        self._directory = tempfile.TemporaryDirectory()
        self.directory = self._directory.name

    def tearDown(self):
        self._directory.cleanup()

    def _write(self, text: str) -> str:
        path = os.path.join(self.directory, "data.csv")
        with open(path, "w", encoding="utf-8") as file:
            file.write(text)
        return path

    def test_episodes_grouped_and_sorted(self):
        """
        Test rows out of order with two interleaved episodes.

        :assert: Episodes keep first-appearance order, steps are sorted
        and blank cells become missing.
        """
        path = self._write(
            "episode_id,t,y,x1,x2\n"
            "b,2,0.5,1.0,2.0\n"
            "a,1,0.1,3.0,\n"
            "b,1,0.4,5.0,6.0\n"
        )
        episodes = ingest_csv(path, logger=self.logger)
        self.assertEqual([e.episode_id for e in episodes], ["b", "a"])
        np.testing.assert_array_equal(
            episodes[0].features, [[5.0, 6.0], [1.0, 2.0]]
        )
        np.testing.assert_array_equal(episodes[0].labels, [0.4, 0.5])
        np.testing.assert_array_equal(episodes[1].availability, [[1.0, 0.0]])
        self.logger.info.assert_called_once()

    def test_step_gap_names_episode(self):
        """
        Test an episode whose steps skip a value.

        :assert: IngestError names the episode.
        """
        path = self._write(
            "episode_id,t,y,x1\n" "p7,1,0,1.0\n" "p7,3,0,2.0\n"
        )
        with self.assertRaises(IngestError) as context:
            ingest_csv(path, logger=self.logger)
        self.assertIn("p7", str(context.exception))

    def test_ragged_rows(self):
        """
        Test a short row and a long row on the third line.

        :assert: IngestError names the line for both.
        """
        short = self._write("episode_id,t,y,x1,x2\n" "a,1,0,1,2\n" "a,2,0,1\n")
        with self.assertRaises(IngestError) as context:
            ingest_csv(short, logger=self.logger)
        self.assertIn(":3:", str(context.exception))
        long = self._write("episode_id,t,y,x1\n" "a,1,0,1\n" "a,2,0,1,9\n")
        with self.assertRaises(IngestError) as context:
            ingest_csv(long, logger=self.logger)
        self.assertIn("line 3", str(context.exception))

    def test_non_numeric_cell(self):
        """
        Test a feature cell that is not a number.

        :assert: IngestError names the line and column.
        """
        path = self._write("episode_id,t,y,x1\n" "a,1,0,abc\n")
        with self.assertRaises(IngestError) as context:
            ingest_csv(path, logger=self.logger)
        self.assertIn(":2:", str(context.exception))
        self.assertIn("x1", str(context.exception))

    def test_invalid_encoding(self):
        """
        Test a file with a byte that is not valid UTF-8.

        :assert: IngestError names the file.
        """
        path = os.path.join(self.directory, "latin.csv")
        with open(path, "wb") as file:
            file.write(b"episode_id,t,y,x1\n1,1,0,\xff\n")
        with self.assertRaises(IngestError) as context:
            ingest_csv(path, logger=self.logger)
        self.assertIn("UTF-8", str(context.exception))

    def test_header_checks(self):
        """
        Test wrong key columns and out-of-order feature names.

        :assert: IngestError is raised for both.
        """
        for header in ("id,t,y,x1", "episode_id,t,y,x2"):
            path = self._write(f"{header}\na,1,0,1\n")
            with self.subTest(header=header):
                with self.assertRaises(IngestError):
                    ingest_csv(path, logger=self.logger)

    def test_schema_checks(self):
        """
        Test the feature count and class label expectations.

        :assert: IngestError is raised for a wrong width and for a label
        outside the classes.
        """
        path = self._write("episode_id,t,y,x1\n" "a,1,2,1\n")
        with self.assertRaises(IngestError):
            ingest_csv(path, CsvSchema(n_features=2), logger=self.logger)
        with self.assertRaises(IngestError):
            ingest_csv(
                path,
                CsvSchema(task=Task.CLASSIFICATION, n_classes=2),
                logger=self.logger,
            )

    def test_empty_and_missing_files(self):
        """
        Test an empty file, a header-only file and a missing path.

        :assert: IngestError for the first two, FileNotFoundError for
        the last.
        """
        with self.assertRaises(IngestError):
            ingest_csv(self._write(""), logger=self.logger)
        with self.assertRaises(IngestError):
            ingest_csv(self._write("episode_id,t,y,x1\n"), logger=self.logger)
        with self.assertRaises(FileNotFoundError):
            ingest_csv(
                os.path.join(self.directory, "absent.csv"), logger=self.logger
            )

    def test_export_then_ingest(self):
        """
        Test writing episodes with missing values and reading them back.

        :assert: Values, labels and availability are restored exactly.
        """
        episodes = random_episodes(3, 4, 2, seed=6)
        availability = np.ones((4, 2))
        availability[1, 0] = 0.0
        episodes[1] = Episode(
            episodes[1].features, episodes[1].labels, availability, "2"
        )
        path = os.path.join(self.directory, "out.csv")
        export_csv(episodes, path, logger=self.logger)
        loaded = ingest_csv(path, logger=self.logger)
        self.assertEqual(len(loaded), 3)
        for original, restored in zip(episodes, loaded):
            self.assertEqual(original.episode_id, restored.episode_id)
            np.testing.assert_array_equal(original.features, restored.features)
            np.testing.assert_array_equal(original.labels, restored.labels)
            np.testing.assert_array_equal(
                original.availability, restored.availability
            )


if __name__ == "__main__":
    unittest.main()
