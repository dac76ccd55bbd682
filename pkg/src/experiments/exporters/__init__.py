"""
Artifact writers: commented CSV tables and Jinja2 text reports.
"""

from .csv_exporter import CSVExporter, format_float, read_table, tree_frame, trajectory_frame
from .report import render_report
