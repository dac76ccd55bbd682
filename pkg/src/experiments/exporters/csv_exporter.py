"""
CSV exporter for run artifacts.

Tables start with `#`-prefixed header lines (seed, solver, scenario digest,
column names) followed by a plain comma-separated body. Floats are written
with 17 significant digits so reading a table back reproduces every value.
"""

import os

import numpy as np
import pandas as pd

FLOAT_FORMAT = "%.17g"


class CSVExporter:
    """
    Exports pandas frames as commented CSV tables.
    """
    def __init__(self, float_format=FLOAT_FORMAT):
        self.float_format = float_format

    def export(self, frame, output_path, header=None):
        """
        Write a table.

        Args:
            frame (DataFrame): Table body; its columns give the column order
            output_path (str): Destination file
            header (dict): Ordered key/value pairs written as `# key: value` lines
        """
        directory = os.path.dirname(output_path)
        if directory:
            os.makedirs(directory, exist_ok=True)

        with open(output_path, "w", newline="", encoding="utf-8") as csvfile:
            for key, value in (header or {}).items():
                csvfile.write(f"# {key}: {value}\n")
            csvfile.write(f"# columns: {','.join(map(str, frame.columns))}\n")
            frame.to_csv(csvfile, index=False, float_format=self.float_format,
                         na_rep="nan", lineterminator="\n")


def read_table(path):
    """
    Read a table written by CSVExporter.

    Returns:
        (header dict of strings, DataFrame)
    """
    header = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].partition(":")
            header[key.strip()] = value.strip()
    frame = pd.read_csv(path, comment="#", float_precision="round_trip")
    return header, frame


def format_float(value):
    return FLOAT_FORMAT % value


def trajectory_frame(segment):
    """Columns t, x1..xn, u1..um at the segment's sample times."""
    n, m = segment.states.shape[1], segment.controls.shape[1]
    columns = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)]
    data = np.column_stack([segment.times, segment.states, segment.controls])
    return pd.DataFrame(data, columns=columns)


def tree_frame(rows, n):
    """Columns node_id, parent_id, cost, x1..xn from PlanTree.table() rows."""
    columns = ["node_id", "parent_id", "cost"] + [f"x{i + 1}" for i in range(n)]
    frame = pd.DataFrame(rows, columns=columns)
    return frame.astype({"node_id": int, "parent_id": int})
