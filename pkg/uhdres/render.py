"""
Text and HTML rendering of reports through Jinja2 templates.

The bundled templates live in `uhdres/templates`. A directory passed to `configure` is searched
first, so any template can be overridden by placing a file with the same name there.
"""

from __future__ import annotations

from collections.abc import Sequence
from pathlib import Path
from typing import Any

from jinja2 import Environment
from jinja2 import FileSystemLoader
from jinja2 import select_autoescape

import uhdres
from uhdres.model import UHDResModel
from uhdres.model import count_params
from uhdres.model import param_breakdown


def configure(
    *,
    footer_text: str = "",
    template_directory: Path | None = None,
) -> None:
    """
    Configure the rendering output.

    - `footer_text` is additional text that appears at the bottom of HTML reports.
    - `template_directory` is an additional (preferred) directory for templates.
    """
    searchpath = _default_searchpath
    if template_directory:
        searchpath = [Path(template_directory)] + searchpath
    env.loader = FileSystemLoader(searchpath)
    env.globals["footer_text"] = footer_text


def thousands(n: int) -> str:
    return f"{n:,}"


def kilo(n: int) -> str:
    """`401220` → `401.22K`"""
    return f"{n / 1000:.2f}K"


def params_table(model: UHDResModel, depth: int = 2) -> str:
    """The total parameter count and its breakdown by block."""
    return env.get_template("params.txt.jinja2").render(
        config=model.config,
        total=count_params(model),
        breakdown=param_breakdown(model, depth),
    )


def selftest_report(results: Sequence[Any]) -> str:
    """Renders a list of `uhdres.selftest.CheckResult`."""
    return env.get_template("selftest.txt.jinja2").render(
        results=results,
        failed=sum(1 for r in results if not r.passed),
    )


def html_report(
    title: str,
    header: Sequence[str],
    rows: Sequence[Sequence[Any]],
    summary: Sequence[tuple[str, str]] = (),
) -> str:
    """Renders a table of experiment results, optionally preceded by a summary list."""
    return env.get_template("report.html.jinja2").render(
        title=title,
        header=header,
        rows=rows,
        summary=summary,
    )


_default_searchpath = [Path(__file__).parent / "templates"]

env = Environment(
    loader=FileSystemLoader(_default_searchpath),
    autoescape=select_autoescape(enabled_extensions=("html.jinja2",), default_for_string=False),
    trim_blocks=True,
    lstrip_blocks=True,
    keep_trailing_newline=True,
)
"""
The Jinja2 environment used to render all templates.
You can modify this object to add custom filters and globals.
"""
env.filters["thousands"] = thousands
env.filters["kilo"] = kilo
env.globals["__version__"] = uhdres.__version__
configure()
