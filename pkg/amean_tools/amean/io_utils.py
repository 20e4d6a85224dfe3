#!/usr/bin/env python3

"""
Module: io_utils.py

Provides these helpers:

 * load_json: Load a JSON document; invalid JSON raises a ConfigurationError
   naming the parse position.

 * save_json: Write a dict as indented JSON with a trailing newline.

 * file_sha256: Hash of a file bytes, used in run manifests.

 * show_elapsed_time: To display the length of time from given time to time of call.
   Additional info can be given as prepend to 'Elapsed time' message;
   The default 'writer' function is print, but could be logger.info.

 * class MsgFmt: Callable class to preclude eager execution of f-strings in logging.
"""
import hashlib
import json
import logging
from pathlib import Path
import time
from typing import Callable, Union

from amean.errors import ConfigurationError


logger = logging.getLogger(__name__)


def load_json(fp: Union[str, Path]) -> dict:
    """Load a JSON file.
    Raises:
      FileNotFoundError: file not found.
      ConfigurationError: invalid JSON; the message gives line & column.
    """
    fp = Path(fp)
    if not fp.exists():
        raise FileNotFoundError(f"Not found: {fp!s}")
    try:
        return json.loads(fp.read_text())
    except json.JSONDecodeError as e:
        raise ConfigurationError(
            f"{fp!s}: invalid JSON at line {e.lineno}, column {e.colno} (char {e.pos}): {e.msg}"
        ) from e


def save_json(data: dict, fp: Union[str, Path]) -> Path:
    fp = Path(fp)
    fp.parent.mkdir(parents=True, exist_ok=True)
    fp.write_text(json.dumps(data, indent=2) + "\n")
    return fp


def file_sha256(fp: Union[str, Path]) -> str:
    return hashlib.sha256(Path(fp).read_bytes()).hexdigest()


def show_elapsed_time(start_t: float, info: str = None,
                      writer: Callable = logger.info,
                      return_time: bool = False):
    """If specific info is given, it follows the elapsed time marker, e.g.:
    'Elapsed time - <info>:'.
    Argument 'writer' is an output function, e.g. print.
    """
    elapsed = time.time() - start_t
    if info is None:
        msg = f"Elapsed time: {elapsed:,.2f} s ({elapsed/60:,.2f} min)"
    else:
        msg = f"Elapsed time - {info}: {elapsed:,.2f} s ({elapsed/60:,.2f} min)"
    writer(msg)
    if return_time:
        return elapsed

    return


class MsgFmt:
    """Preclude eagerly exec of f-strings."""

    def __init__(self, fmt, /, *args, **kwargs):
        self.fmt = fmt
        self.args = args
        self.kwargs = kwargs

    def __str__(self):
        return self.fmt.format(*self.args, **self.kwargs)

    def __call__(self, fmt, /, *args, **kwargs) -> str:
        return fmt.format(*args, **kwargs)


mf = MsgFmt  # short lowercase alias
