# Prompt-driven CAM toolkit
# Copyright (C) 2023 The promptcam developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <http://www.gnu.org/licenses/>.

"""
Tables and plots comparing runs.

From EvalReports:
    prompt_strategies.csv   one row per run
    pool_size_sweep.csv     mIoU against pool size (and a plot)
From selection dumps:
    selection_frequency.csv how often each class chose its ground-truth name
                            (and a radar plot)
"""

import csv
import logging
import math
import os

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402

from pole.class_selector import selection_frequency

logger = logging.getLogger(__name__)

STRATEGY_FILE = 'prompt_strategies.csv'
FREQUENCY_FILE = 'selection_frequency.csv'
FREQUENCY_PLOT = 'selection_frequency.png'
SWEEP_FILE = 'pool_size_sweep.csv'
SWEEP_PLOT = 'pool_size_sweep.png'


class EmptyReport(ValueError):
    """There is nothing to report on."""
    pass


class UnknownClass(ValueError):
    """A selection record refers to a class without a name."""
    pass


def strategy_rows(reports):
    """
    One dict per EvalReport, in the order given.
    """
    if not reports:
        raise EmptyReport('No evaluation reports')
    rows = []
    for r in reports:
        md = r.metadata
        rows.append({'run': md.get('run', ''),
                     'strategy': md.get('strategy', ''),
                     'template': md.get('template', ''),
                     'pool_size': md.get('pool_size', ''),
                     'gate_mode': md.get('gate_mode', ''),
                     'epoch': md.get('epoch', ''),
                     'miou': '%.4f' % r.miou})
    return rows


def frequency_rows(records, class_names):
    """
    One dict per class: how many records it has and the fraction that
    chose the ground-truth name (empty for classes without records).
    """
    if not records:
        raise EmptyReport('No selection records')
    top = max(r.class_index for r in records)
    if top >= len(class_names):
        raise UnknownClass('Selections refer to class %d, but only %d class names were given'
                           % (top, len(class_names)))
    fractions = selection_frequency(records, len(class_names))
    counts = [0] * len(class_names)
    for r in records:
        counts[r.class_index] += 1
    rows = []
    for k, name in enumerate(class_names):
        f = fractions[k]
        rows.append({'class_index': k,
                     'class_name': name,
                     'records': counts[k],
                     'ground_truth_fraction': '' if f is None else '%.4f' % f})
    return rows


def sweep_points(reports):
    """
    (pool size, mIoU, run) of each report, ordered by pool size then run.
    """
    if not reports:
        raise EmptyReport('No evaluation reports')
    points = [(r.metadata.get('pool_size'), r.miou, r.metadata.get('run', '')) for r in reports]
    missing = [p for p in points if p[0] is None]
    if missing:
        raise EmptyReport('Report for run "%s" has no pool size' % missing[0][2])
    return sorted(points)


def write_rows(rows, path):
    with open(path, 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def plot_radar(rows, path):
    """Radar plot of the ground-truth fraction per class."""
    values = [float(r['ground_truth_fraction'] or 0) for r in rows]
    labels = [r['class_name'] for r in rows]
    angles = [2 * math.pi * i / len(values) for i in range(len(values))]
    fig = plt.figure(figsize=(6, 6))
    ax = fig.add_subplot(projection='polar')
    ax.plot(angles + angles[:1], values + values[:1])
    ax.fill(angles + angles[:1], values + values[:1], alpha=0.25)
    ax.set_xticks(angles)
    ax.set_xticklabels(labels)
    ax.set_ylim(0, 1)
    ax.set_title('Ground-truth name chosen')
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_sweep(points, path):
    fig = plt.figure(figsize=(6, 4))
    ax = fig.add_subplot()
    ax.plot([p[0] for p in points], [p[1] for p in points], marker='o')
    ax.set_xlabel('pool size')
    ax.set_ylabel('CAM mIoU')
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def write_reports(output_dir, reports=(), records=(), class_names=None):
    """
    Write every table and plot the inputs allow. Returns the paths written.
    Class names default to class0, class1, ...
    """
    if not reports and not records:
        raise EmptyReport('Nothing to report: no evaluation reports and no selection records')
    os.makedirs(output_dir, exist_ok=True)
    written = []
    if reports:
        written.append(write_rows(strategy_rows(reports), os.path.join(output_dir, STRATEGY_FILE)))
        points = sweep_points(reports)
        written.append(write_rows([{'pool_size': p[0], 'miou': '%.4f' % p[1], 'run': p[2]} for p in points],
                                  os.path.join(output_dir, SWEEP_FILE)))
        written.append(plot_sweep(points, os.path.join(output_dir, SWEEP_PLOT)))
    if records:
        if class_names is None:
            class_names = ['class%d' % k for k in range(max(r.class_index for r in records) + 1)]
        rows = frequency_rows(records, class_names)
        written.append(write_rows(rows, os.path.join(output_dir, FREQUENCY_FILE)))
        written.append(plot_radar(rows, os.path.join(output_dir, FREQUENCY_PLOT)))
    for path in written:
        logger.info('Wrote %s', path)
    return written
