from __future__ import annotations

import pytest

import uhdres
from uhdres import render
from uhdres.model import UHDResConfig
from uhdres.model import build
from uhdres.selftest import SMALL_CONFIG
from uhdres.selftest import CheckResult


@pytest.fixture(autouse=True)
def reset_rendering():
    yield
    render.configure()


def test_filters():
    assert render.thousands(401220) == "401,220"
    assert render.kilo(401220) == "401.22K"
    assert render.kilo(351867) == "351.87K"


def test_params_table():
    text = render.params_table(build())
    lines = text.splitlines()
    assert lines[0] == "channels 12/24/48, depths 2/3/4, expansion 2, kernels 5-9-13"
    assert "ablated" not in text
    assert lines[-1].startswith("total")
    assert lines[-1].endswith("351,867  (351.87K)")
    assert any(line.startswith("bottleneck.daeb3") for line in lines)


def test_params_table_lists_ablations():
    config = UHDResConfig(use_samu=False, use_sgfn=False)
    text = render.params_table(build(config), depth=1)
    assert "ablated: samu, sgfn\n" in text
    assert "enc1.daeb0" not in text


def test_selftest_report():
    results = [CheckResult("one", True, "1e-9"), CheckResult("two", False)]
    text = render.selftest_report(results)
    assert text.splitlines()[0].startswith("ok   one")
    assert text.splitlines()[1].startswith("FAIL two")
    assert text.rstrip().endswith("1 of 2 checks failed.")
    assert render.selftest_report(results[:1]).rstrip().endswith("All 1 checks passed.")


def test_html_report_escapes():
    html = render.html_report(
        "<perturbation>",
        ["image", "psnr_db"],
        [["a&b", "12.5"]],
        summary=[("mean", "<12.5>")],
    )
    assert html.startswith("<!doctype html>")
    assert "<title>&lt;perturbation&gt;</title>" in html
    assert "<td>a&amp;b</td>" in html
    assert "<dd>&lt;12.5&gt;</dd>" in html
    assert f"generated by uhdres {uhdres.__version__}" in html


def test_footer_text():
    render.configure(footer_text="lab run 7")
    assert "<footer>lab run 7</footer>" in render.html_report("t", ["a"], [])


def test_template_directory(tmp_path):
    (tmp_path / "params.txt.jinja2").write_text("{{ total|thousands }} parameters\n")
    render.configure(template_directory=tmp_path)
    model = build(SMALL_CONFIG)
    assert render.params_table(model).endswith(" parameters\n")
    render.configure()
    assert render.params_table(model).startswith("channels")
