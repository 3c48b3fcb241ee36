"""Command-line front end.

Subcommands:
  equilibrium  print the optimal steady state of a scenario's network
  simulate     run a scenario; write <prefix>.trace.csv + .metrics.json
  plot         render a trace CSV to a static SVG
  sweep        re-run a scenario over a list of values for one parameter

Exit codes: 0 success (any simulation verdict), 2 configuration or
content error, 3 I/O error.  Scenario arguments accept a literal path,
a name under $DCGRID_SCENARIO_DIR, or the name of a bundled scenario.
"""

from __future__ import annotations

import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import click
import numpy as np

from .config import (ConfigError, bundled_scenario_names, load_scenario,
                     resolve_scenario_path, scenario_from_dict,
                     scenario_to_dict)
from .sim import Trace, TraceFormatError, run_scenario

EXIT_CONFIG = 2
EXIT_IO = 3


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load(path_arg: str):
    try:
        path = resolve_scenario_path(path_arg)
    except FileNotFoundError as exc:
        _fail(EXIT_IO, str(exc))
    try:
        return load_scenario(path)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except OSError as exc:
        _fail(EXIT_IO, str(exc))


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
def main():
    """Simulation and control toolkit for a single-bus DC microgrid."""


@main.command("equilibrium")
@click.option("--params", "params_file", required=True,
              help="Scenario file providing the network constants and "
                   "steady-state targets.")
def cmd_equilibrium(params_file):
    """Print the loss-optimal steady state as a table and as JSON."""
    scenario = _load(params_file)
    eq = scenario.equilibrium()
    click.echo(f"Optimal steady state (v_b* = {eq.v_b_target:.3f} V, "
               f"d_l* = {eq.d_l_target:.4f})")
    for j in range(scenario.params.n_sources):
        click.echo(f"  source {j + 1}:  v* = {eq.v[j]:.5f} V   "
                   f"i_t* = {eq.i_t[j]:.5f} A   i_s* = {eq.i_s[j]:.5f} A")
    click.echo(f"  bus:       v_b* = {eq.v_b:.5f} V   "
               f"total source current = {eq.load_current:.5f} A")
    click.echo(f"  load:      i_f* = {eq.i_f:.5f} A   v_l* = {eq.v_l:.5f} V"
               f"   d_l* = {eq.d_l:.4f}")
    payload = {
        "v": [float(x) for x in eq.v],
        "i_t": [float(x) for x in eq.i_t],
        "i_s": [float(x) for x in eq.i_s],
        "v_b": eq.v_b,
        "i_f": eq.i_f,
        "v_l": eq.v_l,
        "d_l": eq.d_l,
        "total_load_current": eq.load_current,
    }
    click.echo("JSON: " + json.dumps(payload))


@main.command("simulate")
@click.option("--scenario", "scenario_file", required=True,
              help="Scenario file to run.")
@click.option("--out", "out_prefix", default=None,
              help="Output prefix for <prefix>.trace.csv and "
                   "<prefix>.metrics.json (default: scenario's "
                   "output_prefix or the scenario file stem).")
def cmd_simulate(scenario_file, out_prefix):
    """Run one scenario; print its verdict on the last line."""
    scenario = _load(scenario_file)
    if out_prefix is None:
        out_prefix = scenario.output_prefix
    if out_prefix is None:
        base = os.path.basename(scenario_file)
        out_prefix = base[:-5] if base.endswith(".json") else base
    trace, metrics = run_scenario(scenario)
    trace_path = f"{out_prefix}.trace.csv"
    metrics_path = f"{out_prefix}.metrics.json"
    try:
        trace.to_csv(trace_path)
        metrics.to_json(metrics_path)
    except OSError as exc:
        _fail(EXIT_IO, str(exc))
    click.echo(f"wrote {trace_path}")
    click.echo(f"wrote {metrics_path}")
    click.echo(metrics.verdict)


@main.command("plot")
@click.option("--trace", "trace_file", required=True,
              help="Trace CSV produced by `simulate`.")
@click.option("--out", "out_file", required=True,
              help="Output SVG path.")
@click.option("--divergence-threshold", default=1e6, show_default=True,
              help="Clip plotted magnitudes beyond this value.")
def cmd_plot(trace_file, out_file, divergence_threshold):
    """Render voltages, currents, adaptive gains and energy vs. time."""
    if not os.path.exists(trace_file):
        _fail(EXIT_IO, f"trace file {trace_file!r} not found")
    try:
        trace = Trace.from_csv(trace_file)
    except TraceFormatError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except OSError as exc:
        _fail(EXIT_IO, str(exc))
    if len(trace) == 0:
        _fail(EXIT_CONFIG, f"no samples in {trace_file!r}")

    import matplotlib
    matplotlib.use("svg", force=True)
    import matplotlib.pyplot as plt

    n = trace.n_sources
    fig, axes = plt.subplots(2, 2, figsize=(11, 7), sharex=True)
    (ax_v, ax_i), (ax_rho, ax_h) = axes

    ax_v.plot(trace.t, trace.states[:, 2 * n], label="v_b")
    for j in range(n):
        ax_v.plot(trace.t, trace.states[:, 2 * j], label=f"v_{j + 1}")
    ax_v.plot(trace.t, trace.states[:, 2 * n + 2], label="v_l")
    ax_v.set_ylabel("voltage [V]")
    ax_v.legend(loc="best", fontsize=8)

    for j in range(n):
        ax_i.plot(trace.t, trace.states[:, 2 * j + 1], label=f"i_t{j + 1}")
    ax_i.plot(trace.t, trace.states[:, 2 * n + 1], label="i_f")
    ax_i.set_ylabel("current [A]")
    ax_i.legend(loc="best", fontsize=8)

    for i in range(trace.n_channels):
        label = f"rho_{i + 1}" if i < n else "rho_load"
        ax_rho.plot(trace.t, trace.rho[:, i], label=label)
    ax_rho.set_ylabel("adaptive gain")
    ax_rho.set_xlabel("t [s]")
    ax_rho.legend(loc="best", fontsize=8)

    ax_h.plot(trace.t, trace.H, label="H")
    ax_h.set_ylabel("energy [J]")
    ax_h.set_xlabel("t [s]")
    ax_h.legend(loc="best", fontsize=8)

    attacked = np.any(np.abs(trace.delta) > 0.0, axis=1)
    if np.any(attacked):
        t_attack = float(trace.t[int(np.argmax(attacked))])
        for idx, ax in enumerate(
                (ax_v, ax_i, ax_rho, ax_h)):
            line = ax.axvline(t_attack, color="crimson", linestyle="--",
                              linewidth=1.0)
            if idx == 0:
                line.set_gid("attack-start")

    clipped = False
    for ax, series in (
            (ax_v, [trace.states[:, 2 * j] for j in range(n)]
             + [trace.states[:, 2 * n], trace.states[:, 2 * n + 2]]),
            (ax_i, [trace.states[:, 2 * j + 1] for j in range(n)]
             + [trace.states[:, 2 * n + 1]])):
        worst = max(float(np.max(np.abs(s))) for s in series)
        if worst > divergence_threshold:
            ax.set_ylim(-1.1 * divergence_threshold,
                        1.1 * divergence_threshold)
            if not clipped:
                marker = ax.axhline(divergence_threshold, color="gray",
                                    linestyle=":", linewidth=0.8)
                marker.set_gid("divergence-clip")
                clipped = True

    fig.tight_layout()
    try:
        fig.savefig(out_file, format="svg")
    except OSError as exc:
        _fail(EXIT_IO, str(exc))
    finally:
        plt.close(fig)
    click.echo(f"wrote {out_file}")


def _set_by_path(document: dict, dotted: str, value):
    parts = dotted.split(".")
    node = document
    for i, part in enumerate(parts):
        is_last = i == len(parts) - 1
        if isinstance(node, list):
            if not part.lstrip("-").isdigit():
                raise KeyError(
                    f"{'.'.join(parts[:i + 1])}: list index expected")
            idx = int(part)
            if not -len(node) <= idx < len(node):
                raise KeyError(
                    f"{'.'.join(parts[:i + 1])}: index out of range")
            if is_last:
                node[idx] = value
            else:
                node = node[idx]
        elif isinstance(node, dict):
            if part not in node:
                raise KeyError(
                    f"{'.'.join(parts[:i + 1])}: no such key in the "
                    f"scenario document")
            if is_last:
                node[part] = value
            else:
                node = node[part]
        else:
            raise KeyError(
                f"{'.'.join(parts[:i])}: not a container, cannot descend")


def _parse_values(raw: str) -> list:
    values = []
    for token in raw.split(","):
        token = token.strip()
        if not token:
            continue
        try:
            values.append(json.loads(token))
        except json.JSONDecodeError:
            values.append(token)
    if not values:
        raise ValueError("no values given")
    return values


@main.command("sweep")
@click.option("--scenario", "scenario_file", required=True,
              help="Base scenario file.")
@click.option("--param", "param_path", required=True,
              help="Dotted path of the value to vary, e.g. controller.q "
                   "or attack.channels.0.kappa.")
@click.option("--values", "values_raw", required=True,
              help="Comma-separated list of values.")
@click.option("--out", "out_file", required=True,
              help="Output CSV of metrics keyed by value.")
@click.option("--jobs", default=0, show_default="cpu count",
              help="Worker threads (0 = one per value, capped at CPUs).")
def cmd_sweep(scenario_file, param_path, values_raw, out_file, jobs):
    """Run the scenario once per value and tabulate the metrics."""
    base_scenario = _load(scenario_file)
    base_doc = scenario_to_dict(base_scenario)
    try:
        values = _parse_values(values_raw)
    except ValueError as exc:
        _fail(EXIT_CONFIG, str(exc))

    scenarios = []
    for value in values:
        doc = json.loads(json.dumps(base_doc))
        try:
            _set_by_path(doc, param_path, value)
        except KeyError as exc:
            _fail(EXIT_CONFIG, f"--param {param_path}: {exc.args[0]}")
        try:
            scenarios.append(scenario_from_dict(
                doc, source=f"{scenario_file}[{param_path}={value}]"))
        except ConfigError as exc:
            _fail(EXIT_CONFIG, str(exc))

    workers = jobs if jobs > 0 else min(len(scenarios), os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(lambda sc: run_scenario(sc)[1], scenarios))

    n = base_scenario.params.n_sources
    overshoot_cols = [f"overshoot_i_t{j + 1}_pct" for j in range(n)]
    overshoot_cols.append("overshoot_i_f_pct")
    header = (["value", "verdict", "diverged", "t_divergence",
               "bus_deviation_pct"] + overshoot_cols
              + ["max_current_overshoot_pct", "uub_radius", "settling_time",
                 "qp_feasible_fraction",
                 "pre_attack_h_nonincreasing_fraction"])
    try:
        with open(out_file, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for value, metrics in zip(values, results):
                row = [value, metrics.verdict, int(metrics.diverged),
                       ("" if metrics.t_divergence is None
                        else repr(metrics.t_divergence)),
                       repr(metrics.bus_deviation_pct)]
                for j in range(n):
                    row.append(repr(
                        metrics.current_overshoot_pct[f"i_t{j + 1}"]))
                row.append(repr(metrics.current_overshoot_pct["i_f"]))
                row += [repr(metrics.max_current_overshoot_pct),
                        repr(metrics.uub_radius),
                        repr(metrics.settling_time),
                        repr(metrics.qp_feasible_fraction),
                        repr(metrics.pre_attack_h_nonincreasing_fraction)]
                writer.writerow(row)
    except OSError as exc:
        _fail(EXIT_IO, str(exc))
    click.echo(f"wrote {out_file} ({len(values)} rows)")


@main.command("scenarios")
def cmd_scenarios():
    """List the bundled scenario files."""
    for name in bundled_scenario_names():
        click.echo(name)


if __name__ == "__main__":
    main()
