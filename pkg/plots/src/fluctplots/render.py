"""Render the four figure kinds from lab CSV artifacts.

Pure views: every number plotted comes straight from a file, the only
transforms are axis scalings. Rendering the same inputs twice produces the
same PNG bytes.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .csvdata import DataError, Table, load  # noqa: E402

KINDS = ("lln", "phase", "phi-vs-T", "wave")

_SAVE = {"dpi": 150, "metadata": {"Software": "fluctplots"}}


@dataclass(frozen=True)
class FigureSpec:
    inputs: tuple
    kind: str            # lln | phase | phi-vs-T | wave
    out: str


def render(spec: FigureSpec) -> str:
    """Render one figure; returns the output path."""
    if spec.kind not in KINDS:
        raise DataError(f"unknown figure kind {spec.kind!r}; expected one of {KINDS}")
    if not spec.inputs:
        raise DataError("no input CSVs given")
    tables = [load(p) for p in spec.inputs]
    fig = _RENDERERS[spec.kind](tables)
    fig.savefig(spec.out, **_SAVE)
    plt.close(fig)
    return spec.out


def _label(t: Table, keys) -> str:
    parts = [f"{k}={t.meta[k]}" for k in keys if k in t.meta]
    return ", ".join(parts) if parts else t.path


def _render_lln(tables) -> plt.Figure:
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for t in tables:
        test = t.column("test")
        base = _label(t, ("model", "N", "replicas"))
        ax.plot(test, t.column("density_err"), "o-", label=f"density ({base})")
        ax.plot(test, t.column("current_err"), "s--", label=f"current ({base})")
    ax.set_yscale("log")
    ax.set_xlabel("test function index")
    ax.set_ylabel("|lattice pairing - limit pairing|")
    ax.set_title("law of large numbers: pairing errors")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def _render_phase(tables) -> plt.Figure:
    fig, (top, bot) = plt.subplots(2, 1, figsize=(6.4, 6.0), sharex=True)
    for t in tables:
        J = t.column("J")
        base = _label(t, ("model", "m"))
        line, = top.plot(J, t.column("U"), "o-", label=f"flat cost ({base})")
        top.plot(J, t.column("Psi_min"), "s--", color=line.get_color(),
                 label=f"best wave ({base})")
        bot.plot(J, t.column("gap"), "o-", color=line.get_color(), label=base)
        if "jstar" in t.meta:
            jstar = float(t.meta["jstar"])
            for ax in (top, bot):
                ax.axvline(jstar, color=line.get_color(), ls=":", lw=1)
            bot.annotate(f"J* = {jstar:g}", (jstar, 0), textcoords="offset points",
                         xytext=(4, 4), fontsize=8, color=line.get_color())
    top.set_ylabel("cost")
    top.legend(fontsize=8)
    bot.axhline(0.0, color="k", lw=0.8)
    bot.set_xlabel("target current J")
    bot.set_ylabel("flat cost - wave cost")
    bot.legend(fontsize=8)
    top.set_title("flat holding vs traveling waves")
    fig.tight_layout()
    return fig


def _render_phi_vs_t(tables) -> plt.Figure:
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for t in tables:
        T = t.column("T")
        value = t.column("value")
        base = _label(t, ("model", "J", "m"))
        line, = ax.plot(T, value, "o-", label=f"rate per unit time ({base})")
        ax.plot(T, [a * b for a, b in zip(T, value)], "s--",
                color=line.get_color(), label=f"total cost ({base})")
    ax.set_xlabel("horizon T")
    ax.set_ylabel("constrained path cost")
    ax.set_title("path cost against the horizon")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def _render_wave(tables) -> plt.Figure:
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for t in tables:
        ax.plot(t.column("u"), t.column("value"), "-",
                label=_label(t, ("model", "J", "m", "v_star")))
    ax.set_xlabel("u")
    ax.set_ylabel("profile")
    ax.set_title("optimal profiles")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


_RENDERERS = {
    "lln": _render_lln,
    "phase": _render_phase,
    "phi-vs-T": _render_phi_vs_t,
    "wave": _render_wave,
}


def _main(kind: str, argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog=f"fluctplot-{kind.lower()}",
        description=f"render the {kind} figure from lab CSV artifacts",
    )
    parser.add_argument("csv", nargs="+", help="input CSV artifact(s)")
    parser.add_argument("-o", "--out", default=None,
                        help="output PNG path (default: first input with .png)")
    args = parser.parse_args(argv)
    out = args.out or str(args.csv[0]).rsplit(".", 1)[0] + ".png"
    try:
        render(FigureSpec(inputs=tuple(args.csv), kind=kind, out=out))
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {out}")
    return 0


def main_lln(argv=None) -> int:
    return _main("lln", argv)


def main_phase(argv=None) -> int:
    return _main("phase", argv)


def main_phi_vs_t(argv=None) -> int:
    return _main("phi-vs-T", argv)


def main_wave(argv=None) -> int:
    return _main("wave", argv)
