"""
CSV / JSON writers and SVG charts for CLI results.

Floats are written with 17 significant digits, CSV uses commas, UTF-8 and
Unix newlines.  SVG output is made reproducible by fixing matplotlib's hash
salt and dropping the date from the file metadata.
"""
import json
import logging
import sys

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np

from macrolimit.config import setting

logger = logging.getLogger(__name__)


def write_frame(frame, path=None):
    """Write a table as CSV to `path`, or to stdout when path is None."""
    target = path if path is not None else sys.stdout
    frame.to_csv(target, index=False, float_format=setting('output.float_format', '%.17g'),
                 lineterminator='\n', encoding='utf-8')
    if path is not None:
        logger.info("wrote %d rows to %s", len(frame), path)


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if np.isfinite(value) else None
    return value


def write_json(document, path=None):
    text = json.dumps(_jsonable(document), indent=2) + '\n'
    if path is None:
        sys.stdout.write(text)
        return
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(text)
    logger.info("wrote report to %s", path)


def _figure():
    plt.rcParams['svg.hashsalt'] = setting('output.svg_hashsalt', 'macrolimit')
    return plt.subplots(figsize=(setting('output.plot_width_in', 7.0), setting('output.plot_height_in', 4.0)))


def _save_svg(fig, path):
    fig.tight_layout()
    fig.savefig(path, format='svg', metadata={'Date': None})
    plt.close(fig)
    logger.info("wrote plot to %s", path)


def plot_densities(curves, path, title=''):
    """Line chart of pointer densities; `curves` maps a label to a frame with columns x, density."""
    fig, ax = _figure()
    for label, frame in curves.items():
        ax.plot(frame['x'], frame['density'], label=label, linewidth=1.2)
    ax.set_xlabel('pointer position x_p')
    ax.set_ylabel('probability density')
    if title:
        ax.set_title(title)
    if len(curves) > 1:
        ax.legend()
    _save_svg(fig, path)


def plot_s_interval(table, v_star, path):
    """Area chart of the admissible same-side correlator interval against v."""
    fig, ax = _figure()
    feasible = table.dropna(subset=['s_max'])
    ax.fill_between(feasible['v'], feasible['s_min'], feasible['s_max'], alpha=0.4, label='admissible s')
    ax.axvline(v_star, color='k', linestyle='--', linewidth=1.0, label=f'v* = {v_star:.5f}')
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(-1.05, 1.05)
    ax.set_xlabel('correlator v = 2V - 1')
    ax.set_ylabel('same-side correlator s')
    ax.legend()
    _save_svg(fig, path)


def plot_histograms(samples, path, xlabel, normal_reference=False):
    """Step histograms of each labelled sample, optionally against the standard normal density."""
    fig, ax = _figure()
    for label, values in samples.items():
        ax.hist(np.asarray(values, dtype=float), bins=40, density=True, histtype='step', label=label)
    if normal_reference:
        grid = np.linspace(-4.0, 4.0, 401)
        ax.plot(grid, np.exp(-grid ** 2 / 2) / np.sqrt(2 * np.pi), 'k--', linewidth=1.0, label='N(0, 1)')
    ax.set_xlabel(xlabel)
    ax.set_ylabel('density')
    ax.legend()
    _save_svg(fig, path)
