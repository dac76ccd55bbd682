"""
Indented Logger Module

Wraps the standard logging module with indentation levels so that nested
planner work (iteration -> edge -> solver) reads as an outline in the console.
"""

import logging
import sys

RESET = "\033[0m"
SECTION_COLOUR = "\033[92m"
WARNING_COLOUR = "\033[90m"
ERROR_COLOUR = "\033[31m"
CRITICAL_COLOUR = "\033[91m"


def _stream_is_terminal():
    try:
        return sys.stderr.isatty()
    except (AttributeError, ValueError):
        return False


class IndentLogger:
    """A logger wrapper that provides indentation support."""
    def __init__(self, logger_name=None, indent_char="   ", colour=None):
        """
        Initialize the IndentLogger.

        Args:
            logger_name: Name for the logger (optional)
            indent_char: Characters used for one indentation level
            colour: Force ANSI colours on or off; None means "only on a terminal"
        """
        self.logger = logging.getLogger(logger_name) if logger_name else logging.getLogger()
        self.indent_char = indent_char
        self.colour = _stream_is_terminal() if colour is None else colour

        logging.addLevelName(logging.WARNING, "WARN ")

    def _paint(self, colour, message):
        if not self.colour:
            return message
        return f"{colour}{message}{RESET}"

    def _log_with_indent(self, level_func, level, message, *args, **kwargs):
        """
        Log a message with the specified indentation level.

        Args:
            level_func: The logging function to use (info, warning, error, etc.)
            level: The indentation level (0 = section header)
            message: The message to log
        """
        if level == 0:
            level_func("")
            message = self._paint(SECTION_COLOUR, message)
        level_func(f"{self.indent_char * level}{message}", *args, **kwargs)

    def _dispatch(self, level_func, colour, level, message, args, kwargs):
        if isinstance(level, int):
            if colour:
                message = self._paint(colour, message)
            self._log_with_indent(level_func, level, message, *args, **kwargs)
        else:
            # Called like a plain logger: the first argument is the message.
            text = self._paint(colour, level) if colour else level
            level_func(text, *([message] + list(args)), **kwargs)

    def isEnabledFor(self, level):
        return self.logger.isEnabledFor(level)

    def info(self, level, message=None, *args, **kwargs):
        """Log an info message with indentation."""
        self._dispatch(self.logger.info, None, level, message, args, kwargs)

    def warning(self, level, message=None, *args, **kwargs):
        """Log a warning message with indentation in grey."""
        self._dispatch(self.logger.warning, WARNING_COLOUR, level, message, args, kwargs)

    def error(self, level, message=None, *args, **kwargs):
        """Log an error message with indentation in red."""
        self._dispatch(self.logger.error, ERROR_COLOUR, level, message, args, kwargs)

    def debug(self, level, message=None, *args, **kwargs):
        """Log a debug message with indentation."""
        if not self.logger.isEnabledFor(logging.DEBUG):
            return
        self._dispatch(self.logger.debug, None, level, message, args, kwargs)

    def critical(self, level, message=None, *args, **kwargs):
        """Log a critical message with indentation in bright red."""
        self._dispatch(self.logger.critical, CRITICAL_COLOUR, level, message, args, kwargs)

    def setLevel(self, level):
        """Set the logging level."""
        self.logger.setLevel(level)


def configure_logging(verbose=False):
    """
    Configure the root logger the way the entry script expects.

    Args:
        verbose: Emit DEBUG records (per-edge solver failures, sweep statistics)
    """
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )


def get_logger(name=None):
    """
    Get an IndentLogger instance.

    Args:
        name: The name for the logger.

    Returns:
        An IndentLogger instance.
    """
    return IndentLogger(name)
