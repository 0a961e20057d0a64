"""Render convergence figures from inversion CSV logs.

Reads the per-iteration log written by the invert command and produces
PNG figures next to it: misfit and Lagrangian decay, coupling residuals,
and the error curve when ground truth was available. Multiple logs can
be overlaid (clean vs noisy runs).
"""

from __future__ import annotations

import csv
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import ConfigError

LOG_COLUMNS = ("k", "L", "G", "TV", "s_minus_sigma", "grad_diff",
               "sigma_err", "wall_time_s")


def write_log(path, state) -> None:
    """CSV with one row per completed outer iteration."""
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        rows = zip(state.L_history, state.G_history, state.TV_history,
                   state.s_minus_sigma_history, state.grad_diff_history,
                   state.error_history, state.wall_time_history)
        for k, row in enumerate(rows, start=1):
            writer.writerow([k] + [repr(float(v)) for v in row])


def read_log(path) -> dict:
    """Columns of one log file as float arrays keyed by LOG_COLUMNS."""
    try:
        with open(path, "r", encoding="ascii", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != LOG_COLUMNS:
                raise ConfigError("%s: not an inversion log (header %r)"
                                  % (path, header))
            rows = [[float(tok) for tok in row] for row in reader if row]
    except OSError as exc:
        raise ConfigError("cannot read log: %s" % exc) from None
    except ValueError as exc:
        raise ConfigError("%s: malformed log row (%s)" % (path, exc)) from None
    data = np.asarray(rows, dtype=np.float64).reshape(-1, len(LOG_COLUMNS))
    return {name: data[:, i] for i, name in enumerate(LOG_COLUMNS)}


def _style():
    plt.rcParams.update({
        "figure.figsize": (6.0, 4.0),
        "figure.dpi": 110,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "font.size": 10,
    })


def render_report(log_paths, out_dir, labels=None) -> list:
    """Write the figure set for one or more logs; returns file paths."""
    if isinstance(log_paths, (str, os.PathLike)):
        log_paths = [log_paths]
    if not log_paths:
        raise ConfigError("no log files given")
    logs = [read_log(p) for p in log_paths]
    if labels is None:
        labels = [os.path.splitext(os.path.basename(p))[0] for p in log_paths]
    if len(labels) != len(logs):
        raise ConfigError("need one label per log")
    os.makedirs(out_dir, exist_ok=True)
    _style()
    written = []

    def figure(name, draw, ylabel, semilog):
        fig, ax = plt.subplots()
        drew = False
        for log, label in zip(logs, labels):
            values = draw(log)
            if not np.isfinite(values).any():
                continue
            plot = ax.semilogy if semilog else ax.plot
            plot(log["k"], values, marker=".", label=label)
            drew = True
        if not drew:
            plt.close(fig)
            return
        ax.set_xlabel("outer iteration")
        ax.set_ylabel(ylabel)
        if len(logs) > 1:
            ax.legend()
        fig.tight_layout()
        out = os.path.join(out_dir, name)
        fig.savefig(out)
        plt.close(fig)
        written.append(out)

    figure("misfit.png", lambda l: l["G"], "data misfit G", True)
    figure("lagrangian.png", lambda l: l["L"], "augmented Lagrangian", False)
    figure("coupling.png", lambda l: l["s_minus_sigma"],
           "||s - sigma||_L2", True)
    figure("grad_coupling.png", lambda l: l["grad_diff"],
           "||grad s - grad sigma||_L2", True)
    figure("error.png", lambda l: l["sigma_err"],
           "||sigma - truth||_L2", False)
    figure("tv.png", lambda l: l["TV"], "TV(s)", False)
    return written
