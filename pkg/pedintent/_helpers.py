from __future__ import annotations

import os
import tempfile
from collections.abc import Iterator, Mapping
from configparser import ConfigParser
from contextlib import contextmanager
from dataclasses import fields
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import IO, Any, Generic, NoReturn, TypeVar, overload

from .errors import ValidationError


def format_timedelta(delta: timedelta) -> str:
    values = [
        f"{v}{u}"
        for v, u in (
            (delta.days, "d"),
            (delta.seconds, "s"),
            (delta.microseconds, "us"),
        )
        if v
    ]
    if values:
        return " ".join(values)
    else:
        return "0s"


T = TypeVar("T")
C = TypeVar("C")


class PassthroughManager(Generic[T]):
    def __init__(self, ret: T) -> None:
        self.ret = ret

    def __enter__(self) -> T:
        return self.ret

    def __exit__(self, *a: Any) -> None:
        pass


@overload
def open_or_return(fo_or_path: None, mode: str = "r") -> NoReturn: ...


@overload
def open_or_return(fo_or_path: str, mode: str = "r") -> IO[str]: ...


@overload
def open_or_return(fo_or_path: Path, mode: str = "r") -> IO[str]: ...


@overload
def open_or_return(
    fo_or_path: IO[str], mode: str = "r"
) -> PassthroughManager[IO[str]]: ...


def open_or_return(
    fo_or_path: str | Path | IO[str] | None, mode: str = "r"
) -> IO[str] | PassthroughManager[IO[str]]:
    # Returns a context manager around a file-object for fo_or_path. If
    # fo_or_path is a file-object, the context manager keeps it open. If it's a
    # path, the file is opened with mode and will be closed upon context exit.
    # If fo_or_path is None, a ValueError is raised.

    if fo_or_path is None:
        raise ValueError("No file-like object nor path provided")
    if isinstance(fo_or_path, str):
        return open(fo_or_path, mode, encoding="utf-8")
    if isinstance(fo_or_path, Path):
        return fo_or_path.open(mode, encoding="utf-8")

    return PassthroughManager(fo_or_path)


@contextmanager
def atomic_write(path: str | Path) -> Iterator[IO[str]]:
    """Write ``path`` through a temporary sibling file renamed on success.

    Readers never see a partially written file; on error the target is left
    untouched.
    """
    path = Path(path)
    fd, tmpname = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fo:
            yield fo
        os.replace(tmpname, path)
    except BaseException:
        os.unlink(tmpname)
        raise


def strtobool(value: str) -> bool:
    """Boolean of a yes/no string.

    >>> strtobool("Yes"), strtobool("0")
    (True, False)
    """
    value = value.strip().lower()
    if value in ("1", "y", "yes", "t", "true", "on"):
        return True
    if value in ("", "0", "n", "no", "f", "false", "off"):
        return False
    raise ValueError(f"invalid truth value {value!r}")


def _convert(raw: str, default: object, key: str) -> object:
    try:
        if isinstance(default, bool):
            return strtobool(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise ValidationError(f"invalid value {raw!r}", path=key)
    return raw


def read_ini_section(
    fo: str | Path | IO[str],
    section: str,
    defaults: Mapping[str, object],
) -> dict[str, object]:
    """Read ``section`` of an INI file into typed values.

    Values are converted after the type of the matching entry of
    ``defaults``. A missing section yields an empty dict. Unknown keys are
    rejected.

    >>> from io import StringIO
    >>> read_ini_section(
    ...     StringIO("[world]\\nnoise = 0.1\\nframes=15\\n"),
    ...     "world",
    ...     {"noise": 0.05, "frames": 15, "seed": 0},
    ... )
    {'noise': 0.1, 'frames': 15}
    """
    config = ConfigParser(comment_prefixes=("#", ";"), delimiters=("=",))
    with open_or_return(fo) as f:
        config.read_file(f, source=getattr(f, "name", None))
    if not config.has_section(section):
        return {}
    values = {}
    for key, raw in config.items(section):
        if key not in defaults:
            raise ValidationError("unknown setting", path=f"{section}.{key}")
        values[key] = _convert(raw, defaults[key], f"{section}.{key}")
    return values


def config_from_dict(cls: type[C], data: Mapping[str, Any], path: str) -> C:
    """Build dataclass ``cls`` from a JSON or INI mapping.

    Lists become tuples. Unknown keys and invalid values raise
    :class:`ValidationError` located under ``path``.
    """
    known = {f.name for f in fields(cls)}  # type: ignore[arg-type]
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ValidationError("unknown field", f"{path}.{key}")
        kwargs[key] = tuple(value) if isinstance(value, list) else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        if isinstance(e, ValidationError):
            raise e.within(path)
        raise ValidationError(str(e), path)


class Timer:
    def __enter__(self) -> Timer:
        self.start = datetime.now(timezone.utc)
        return self

    def __exit__(self, *a: Any) -> None:
        self.delta = datetime.now(timezone.utc) - self.start
