"""Command-line entry point.

Exit codes:
    0  success
    2  usage error (unknown flag, missing argument)
    3  unreadable input (missing file, invalid JSON, I/O failure)
    4  schema version mismatch
    5  invalid data or configuration values
    6  attack could not run (e.g. samples without IN/OUT shadows)
    7  model training diverged
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import os
import sys
from typing import Optional, Sequence

import numpy as np

from miaudit import harness
from miaudit import io as mio
from miaudit.harness import (
    ATTACKS, InsufficientShadowsError, ModelTrainingError, ScatterSpec, SchemaVersionError)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_SCHEMA = 4
EXIT_DATA = 5
EXIT_ATTACK = 6
EXIT_TRAINING = 7

logger = logging.getLogger('miaudit')


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(EXIT_USAGE, f'{self.prog}: {message}')


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(',') if t.strip()]


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f'not a comma-separated list of numbers: {text!r}')


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f'not a comma-separated list of integers: {text!r}')


def _load(fn, *args):
    """Runs a loader, mapping its failures onto exit codes."""
    try:
        return fn(*args)
    except SchemaVersionError as e:
        raise CliError(EXIT_SCHEMA, str(e))
    except mio.ScoreFileError as e:
        raise CliError(EXIT_DATA, str(e))
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CliError(EXIT_IO, f'cannot read input: {e}')
    except (ValueError, TypeError, KeyError) as e:
        raise CliError(EXIT_DATA, f'invalid input: {e}')


def _load_config(path: str) -> harness.ExperimentConfig:
    config = _load(mio.load_config, path)
    try:
        return harness.apply_seed_override(config)
    except ValueError as e:
        raise CliError(EXIT_DATA, f'{harness.SEED_ENV} must be an integer: {e}')


def _jsonable(value):
    if isinstance(value, dict):
        return {(repr(k) if isinstance(k, float) else k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


# -- subcommands -------------------------------------------------------------

def cmd_train_ensemble(args) -> int:
    config = _load_config(args.config)
    ens = harness.build_ensemble(config)
    out = args.out
    mio.write_score_file(ens.matrix, os.path.join(out, 'scores.csv'))
    for step, matrix in sorted(ens.checkpoint_matrices.items()):
        mio.write_score_file(matrix, os.path.join(out, f'scores_step{step}.csv'))
    for i, (model, cks) in enumerate(zip(ens.models, ens.checkpoints)):
        mio.save_checkpoints(os.path.join(out, 'checkpoints', f'model-{i:04d}.npz'), model, cks)
    gaps = {str(r): harness.target_gap(ens.matrix, r) for r in range(ens.matrix.num_models)}
    bundle = mio.ReportBundle(
        'ensemble', config.to_dict(), config.seed,
        gaps={k: g for k, g in gaps.items() if g is not None},
        extra={'scores': 'scores.csv',
               'shadow_rows': ens.shadow_rows.tolist(),
               'target_rows': ens.target_rows.tolist(),
               'checkpoint_steps': sorted(ens.checkpoint_matrices)})
    bundle.write(out)
    print(f'wrote {ens.matrix.num_models} x {ens.matrix.num_samples} scores to {out}')
    return EXIT_OK


def cmd_attack(args) -> int:
    matrix = _load(mio.read_score_file, args.scores)
    attacks = _csv_list(args.attacks)
    unknown = sorted(set(attacks) - set(ATTACKS))
    if unknown or not attacks:
        raise CliError(EXIT_USAGE, f'unknown or empty attack list: {unknown or attacks}')
    seed = args.seed
    if seed is None:
        seed = int(os.environ.get(harness.SEED_ENV) or 0)
    shadows = args.shadows
    if shadows is None:
        shadows = [r for r in range(matrix.num_models) if r != args.target]
    try:
        result = harness.attack_target(matrix, args.target, attacks, args.alphas, shadows,
                                       args.variance_mode, args.variance_floor,
                                       args.recalls, seed)
    except InsufficientShadowsError as e:
        raise CliError(EXIT_ATTACK, str(e))
    except ValueError as e:
        raise CliError(EXIT_ATTACK, f'attack failed: {e}')
    config = {
        'scores': args.scores,
        'scores_sha256': mio.file_sha256(args.scores),
        'target': args.target,
        'attacks': attacks,
        'alphas': list(args.alphas),
        'recalls': list(args.recalls),
        'shadow_rows': [int(r) for r in shadows],
        'variance_mode': args.variance_mode,
        'variance_floor': args.variance_floor,
        'seed': seed,
    }
    bundle = mio.ReportBundle(
        'attack', config, seed, attacks=result.reports,
        gaps={str(args.target): result.gap} if result.gap else {},
        rocs={name: result.curve(name) for name in attacks})
    bundle.write(args.out, svg=not args.no_svg, scale=args.scale)
    for name, rep in result.reports.items():
        tprs = ' '.join(f'TPR@{a:g}={v:.4f}' for a, v in rep.tpr_at.items())
        print(f'{name}: AUC={rep.auc:.4f} {tprs}')
    return EXIT_OK


def _flatten_row(row: dict) -> dict:
    flat = {}
    for k, v in row.items():
        if k == 'tpr_at':
            for a, t in v.items():
                flat[f'tpr@{float(a):g}'] = t
        else:
            flat[k] = v
    return flat


def _write_rows_csv(rows: list[dict], path: str) -> None:
    flat = [_flatten_row(r) for r in rows]
    with mio.atomic_open(path, 'w', newline='', encoding='utf-8') as f:
        _rows_to_csv(flat, f)


def _rows_to_csv(flat: list[dict], f) -> None:
    if not flat:
        return
    w = csv.DictWriter(f, fieldnames=list(flat[0]), lineterminator='\n')
    w.writeheader()
    for r in flat:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def cmd_sweep(args) -> int:
    config = _load_config(args.config)
    settings = config.sweeps.get(args.axis, {})
    extra, attacks, rocs = {'axis': args.axis}, {}, {}
    try:
        if args.axis == 'augmentation':
            policies = settings.get('policies')
            if isinstance(policies, list):
                policies = {name: name for name in policies}
            rows = harness.sweep_augmentation(config, policies)
        elif args.axis == 'early-stop':
            rows = harness.sweep_early_stopping(config)
        elif args.axis == 'scatter':
            grid = ScatterSpec.from_dict(settings)
            records = harness.generalization_scatter(config, grid)
            rows = [r.to_dict() for r in records]
            extra['correlations'] = {repr(a): harness.scatter_correlations(records, a)
                                     for a in config.alphas}
        else:
            kr = harness.attacker_knowledge_experiment(
                config, settings.get('target_policy', 'shift'),
                settings.get('shadow_policy_a'), settings.get('shadow_policy_b', 'none'))
            rows = []
            attacks = {'matched': kr.matched.reports[kr.attack],
                       'mismatched': kr.mismatched.reports[kr.attack]}
            rocs = dict(zip(('matched', 'mismatched'), kr.curves))
            extra['attack'] = kr.attack
    except InsufficientShadowsError as e:
        raise CliError(EXIT_ATTACK, str(e))
    rows = _jsonable(rows)
    bundle = mio.ReportBundle(f'sweep-{args.axis}', config.to_dict(), config.seed,
                              attacks=attacks, rows=rows, extra=_jsonable(extra), rocs=rocs)
    bundle.write(args.out)
    if rows:
        _write_rows_csv(rows, os.path.join(args.out, 'sweep.csv'))
    print(f'sweep {args.axis}: {len(rows) or len(attacks)} rows written to {args.out}')
    return EXIT_OK


# -- report rendering ----------------------------------------------------------

_PERCENT_PREFIXES = ('train_acc', 'test_acc', 'gap_acc', 'tpr@', 'auc', 'balanced_accuracy')


def _attack_rows(bundle: mio.ReportBundle) -> list[dict]:
    rows = []
    for name, rep in bundle.attacks.items():
        row = {'attack': name, 'auc': rep.auc, 'balanced_accuracy': rep.balanced_accuracy}
        row.update({f'tpr@{a:g}': v for a, v in rep.tpr_at.items()})
        row.update({f'precision@recall{r:g}': v for r, v in rep.precision_at_recall.items()})
        rows.append(row)
    return rows


_COLUMN_ORDER = ('policy', 'step', 'model_id', 'attack', 'model', 'epochs', 'weight_decay',
                 'augmentation', 'replicate', 'train_acc', 'test_acc', 'gap_acc', 'train_loss',
                 'test_loss', 'gap_loss', 'auc', 'balanced_accuracy')


def _ordered(row: dict) -> dict:
    rank = {c: i for i, c in enumerate(_COLUMN_ORDER)}
    keys = sorted(row, key=lambda k: (rank.get(k, len(rank)), k))
    return {k: row[k] for k in keys}


def report_rows(bundle: mio.ReportBundle) -> list[dict]:
    """Flat rows (fractions) of whatever the bundle holds."""
    if bundle.rows:
        rows = [_flatten_row(r) for r in bundle.rows]
    elif bundle.attacks:
        rows = _attack_rows(bundle)
    else:
        rows = [{'model': k, **g.to_dict()} for k, g in bundle.gaps.items()]
    return [_ordered(r) for r in rows]


def format_table(rows: list[dict]) -> str:
    """Fixed-width text table; accuracy, gap and TPR columns shown in percent."""
    if not rows:
        return '(empty)\n'
    cols = list(rows[0])

    def cell(col, v):
        if v is None:
            return '-'
        if isinstance(v, float):
            if col.startswith(_PERCENT_PREFIXES):
                return f'{100.0 * v:.2f}'
            return f'{v:.4g}'
        return str(v)

    heads = [c + (' %' if c.startswith(_PERCENT_PREFIXES) else '') for c in cols]
    body = [[cell(c, r.get(c)) for c in cols] for r in rows]
    widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(heads)]
    lines = ['  '.join(h.rjust(w) for h, w in zip(heads, widths)),
             '  '.join('-' * w for w in widths)]
    lines += ['  '.join(v.rjust(w) for v, w in zip(b, widths)) for b in body]
    return '\n'.join(lines) + '\n'


def _render_svg(bundle: mio.ReportBundle, src: str, out: str, scale: str) -> list[str]:
    written = []
    tables = mio.ReportBundle.roc_tables(src)
    if tables:
        path = os.path.join(out, 'roc.svg')
        mio.plot_rocs({n: (f, t) for n, (f, t, _) in tables.items()}, path, scale)
        written.append(path)
    if bundle.kind == 'sweep-scatter' and bundle.rows:
        rows = [_flatten_row(r) for r in bundle.rows]
        key = next(k for k in rows[0] if k.startswith('tpr@'))
        tpr = [r[key] for r in rows]
        color = [r['epochs'] for r in rows]
        for x in ('gap_acc', 'test_acc', 'gap_loss'):
            path = os.path.join(out, f'scatter_{x}.svg')
            mio.plot_scatter([r[x] for r in rows], tpr, color, path, x, key, 'epochs')
            written.append(path)
    elif bundle.rows:
        rows = [_flatten_row(r) for r in bundle.rows]
        label = 'policy' if 'policy' in rows[0] else 'step'
        for key in (k for k in rows[0] if k.startswith('tpr@')):
            path = os.path.join(out, f'sweep_{key.replace("@", "_at_")}.svg')
            mio.plot_bars([r[label] for r in rows], [r[key] for r in rows], path, key)
            written.append(path)
    return written


def cmd_report(args) -> int:
    bundle = _load(mio.ReportBundle.read, args.input)
    rows = report_rows(bundle)
    if args.format == 'svg':
        out = args.out or args.input
        written = _load(_render_svg, bundle, args.input, out, args.scale)
        for p in written:
            print(p)
        return EXIT_OK
    if args.format == 'csv':
        buf = _io.StringIO()
        _rows_to_csv(rows, buf)
        text = buf.getvalue()
    else:
        text = format_table(rows)
        corr = bundle.extra.get('correlations')
        if corr:
            for alpha, c in corr.items():
                vals = ', '.join(f'{k}={"undefined" if v is None else f"{v:+.3f}"}'
                                 for k, v in c.items())
                text += f'Spearman vs TPR@{float(alpha):g}: {vals}\n'
    if args.out:
        with mio.atomic_open(args.out, 'w', encoding='utf-8') as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog='miaudit', description='Membership inference auditing toolkit.')
    p.add_argument('-v', '--verbose', action='store_true', help='log progress to stderr')
    sub = p.add_subparsers(dest='command', required=True, parser_class=_Parser)

    t = sub.add_parser('train-ensemble', help='train shadow (and target) models')
    t.add_argument('--config', required=True)
    t.add_argument('--out', required=True)
    t.set_defaults(func=cmd_train_ensemble)

    a = sub.add_parser('attack', help='attack one row of a score file')
    a.add_argument('--scores', required=True)
    a.add_argument('--target', required=True, type=int)
    a.add_argument('--attacks', default='lira_online', help='comma-separated attack names')
    a.add_argument('--alphas', default=[0.001, 0.01, 0.1], type=_float_list)
    a.add_argument('--recalls', default=[], type=_float_list)
    a.add_argument('--shadows', default=None, type=_int_list,
                   help='rows used as shadow models (default: every other row)')
    a.add_argument('--variance-mode', default='per_sample', choices=('per_sample', 'global'))
    a.add_argument('--variance-floor', default=harness.atk.DEFAULT_FLOOR, type=float)
    a.add_argument('--seed', default=None, type=int)
    a.add_argument('--scale', default='log', choices=('log', 'linear'))
    a.add_argument('--no-svg', action='store_true')
    a.add_argument('--out', required=True)
    a.set_defaults(func=cmd_attack)

    s = sub.add_parser('sweep', help='run an experiment template')
    s.add_argument('--config', required=True)
    s.add_argument('--axis', required=True,
                   choices=('augmentation', 'early-stop', 'scatter', 'knowledge'))
    s.add_argument('--out', required=True)
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser('report', help='render a result directory')
    r.add_argument('--in', dest='input', required=True)
    r.add_argument('--format', default='table', choices=('csv', 'table', 'svg'))
    r.add_argument('--scale', default='log', choices=('log', 'linear'))
    r.add_argument('--out', default=None, help='output file (csv/table) or directory (svg)')
    r.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as e:
        print(e, file=sys.stderr)
        return e.code
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format='%(levelname)s %(name)s: %(message)s')
    try:
        return args.func(args)
    except CliError as e:
        print(f'error: {e}', file=sys.stderr)
        return e.code
    except ModelTrainingError as e:
        print(f'error: {e}', file=sys.stderr)
        return EXIT_TRAINING
    except OSError as e:
        print(f'error: {e}', file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f'error: {e}', file=sys.stderr)
        return EXIT_DATA


if __name__ == '__main__':
    sys.exit(main())
