"""
Text reports rendered with Jinja2 from `src/experiments/templates`.
"""

import math
import os

from jinja2 import Environment, FileSystemLoader, StrictUndefined, TemplateNotFound

from src.experiments.exporters.csv_exporter import format_float
from src.utils.logger import get_logger

logger = get_logger(__name__)

TEMPLATE_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "templates")


def _number(value, digits=6):
    """Short human-readable number; inf/nan spelled out."""
    if value is None:
        return "-"
    value = float(value)
    if math.isnan(value):
        return "NaN"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.{digits}g}"


def _environment():
    env = Environment(
        loader=FileSystemLoader(TEMPLATE_DIR),
        undefined=StrictUndefined,
        keep_trailing_newline=True,
        trim_blocks=True,
        lstrip_blocks=True,
    )
    env.filters["num"] = _number
    env.filters["exact"] = format_float
    return env


def render_report(template_name, context, output_path=None):
    """
    Render a template and optionally write it.

    Args:
        template_name: File name under the templates directory
        context: Template variables
        output_path: Destination; the text is only returned when None

    Returns:
        Rendered text
    """
    try:
        template = _environment().get_template(template_name)
    except TemplateNotFound:
        logger.error(1, f"Template {template_name} not found in {TEMPLATE_DIR}")
        raise
    text = template.render(context)
    if output_path is not None:
        directory = os.path.dirname(output_path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(output_path, "w", encoding="utf-8") as f:
            f.write(text)
    return text
