"""
CSV outputs and the plain-text verification report.

Floats are written with ``format(value, '.17g')`` and rows in a fixed order,
so identical runs produce byte-identical files.
"""
import csv
import logging
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError
from .serializers import ConditionReportSerializer, MatchReportSerializer

logger = logging.getLogger(__name__)

CONDITIONS_CSV = 'conditions.csv'
REPORTS_CSV = 'reports.csv'
REPORT_TXT = 'report.txt'

CONDITION_FIELDS = [
    'condition_id', 'verdict', 'estimated_constant',
    'witness_t', 'witness_x', 'witness_r', 'witness_r_bar', 'detail',
]
REPORT_FIELDS = ['stage', 'metric', 'value', 'threshold', 'verdict', 'context']

# reports.csv keeps stages in pipeline order whatever subcommand wrote them
STAGE_ORDER = ('fpke', 'sde', 'particles')


def fmt(value):
    return format(float(value), '.17g')


def write_csv(path, rows, fieldnames):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='', encoding='utf-8') as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames, lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow({key: row.get(key, '') for key in fieldnames})
    logger.debug('wrote %s', path)
    return path


def write_table(path, header, columns):
    """Write equally long numeric columns; used for the large density and particle tables."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([cell if isinstance(cell, (str, int, np.integer)) else fmt(cell) for cell in row])
    logger.debug('wrote %s', path)
    return path


def read_csv(path):
    with Path(path).open(newline='', encoding='utf-8') as handle:
        return list(csv.DictReader(handle))


def density_columns(densities, label=None):
    """Long-format (t, x, u) columns for a sequence of GridDensity snapshots."""
    t, x, u, tags = [], [], [], []
    for density in densities:
        n = density.grid.n_cells
        t.append(np.full(n, density.time_stamp))
        x.append(density.grid.centers)
        u.append(density.values)
        if label is not None:
            tags.extend([label(density)] * n)
    columns = [np.concatenate(t), np.concatenate(x), np.concatenate(u)]
    if label is not None:
        columns.insert(0, tags)
    return columns


def write_densities(path, densities):
    return write_table(path, ['t', 'x', 'u'], density_columns(densities))


def write_conditions(out_dir, reports):
    rows = ConditionReportSerializer(reports, many=True).data
    return write_csv(Path(out_dir) / CONDITIONS_CSV, rows, CONDITION_FIELDS)


def write_stage_reports(out_dir, stage_reports):
    """Replace the rows of the given stages in reports.csv, keeping rows other subcommands wrote."""
    path = Path(out_dir) / REPORTS_CSV
    kept = {}
    if path.exists():
        for row in read_csv(path):
            kept.setdefault(row['stage'], []).append(row)
    for stage, reports in stage_reports.items():
        kept[stage] = list(MatchReportSerializer(reports, many=True, context={'stage': stage}).data)
    ordered = [stage for stage in STAGE_ORDER if stage in kept]
    ordered += sorted(stage for stage in kept if stage not in STAGE_ORDER)
    rows = [row for stage in ordered for row in kept[stage]]
    return write_csv(path, rows, REPORT_FIELDS)


def render_report(out_dir):
    """Rebuild report.txt from conditions.csv, reports.csv and the files in ``out_dir``.

    Returns the number of failed checks. Running it twice gives the same file.
    """
    out_dir = Path(out_dir)
    if not out_dir.is_dir():
        raise ConfigurationError(f'{out_dir} is not a directory', key='out')
    conditions = read_csv(out_dir / CONDITIONS_CSV) if (out_dir / CONDITIONS_CSV).exists() else []
    reports = read_csv(out_dir / REPORTS_CSV) if (out_dir / REPORTS_CSV).exists() else []

    lines = ['mvsde verification report', '']
    if conditions:
        lines.append('Hypothesis audit')
        for row in conditions:
            line = f"  [{row['verdict']}] {row['condition_id']}: constant={row['estimated_constant']}"
            if row['witness_t']:
                line += (f" witness=(t={row['witness_t']}, x={row['witness_x']}, "
                         f"r={row['witness_r']}, r_bar={row['witness_r_bar']})")
            lines.append(line)
            lines.append(f"         {row['detail']}")
        lines.append('')
    if reports:
        lines.append('Checks')
        for row in reports:
            lines.append(
                f"  [{row['verdict']}] {row['stage']} {row['metric']}: "
                f"value={row['value']} threshold={row['threshold']} ({row['context']})"
            )
        lines.append('')

    files = sorted({path.name for path in out_dir.iterdir() if path.is_file()} | {REPORT_TXT})
    lines.append('Files')
    lines.extend(f'  {name}' for name in files)
    lines.append('')

    failed = sum(row['verdict'] != 'PASS' for row in conditions + reports)
    total = len(conditions) + len(reports)
    lines.append(f'{total - failed} of {total} checks passed')
    (out_dir / REPORT_TXT).write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return failed
