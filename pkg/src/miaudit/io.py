"""File formats: score files, configs, report bundles and ROC exports.

Score file (text, comma separated, UTF-8):

    model_id,sample_id,member,score[,class_label][,prob_vector]
    # criterion=logit_confidence
    # schema_version=1
    0,0,1,2.302585092994046,3,0.01 0.02 ...

The header is always the first line; '#' lines carry metadata. Rows are
model-major, sample-minor. Floats are written with `repr`, which round-trips
exactly. `prob_vector` is a space-separated list inside one field. Every
(model_id, sample_id) cell of the dense matrix must appear exactly once.
"""

from __future__ import annotations

import contextlib
import csv
import dataclasses
import datetime
import hashlib
import io as _io
import json
import math
import os
import tempfile
from typing import Optional

import numpy as np

from miaudit.attacks import ScoreMatrix
from miaudit.harness import ExperimentConfig, SchemaVersionError
from miaudit.metrics import AttackReport, GapReport, RocCurve
from miaudit.trainkit import Checkpoint, ModelParams

SCORE_SCHEMA_VERSION = 1
CHECKPOINT_SCHEMA_VERSION = 1
REQUIRED_COLUMNS = ('model_id', 'sample_id', 'member', 'score')
LOG_AXIS_FLOOR = 1e-4


class ScoreFileError(ValueError):
    """Malformed score file; `line` is the 1-based line number when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f'line {line}: {message}' if line else message)
        self.line = line


@contextlib.contextmanager
def atomic_open(path, mode='w', **kwargs):
    """Writes to a temp file in the target directory, then renames over `path`."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix='.tmp-', suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode, **kwargs) as f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_score_file(matrix: ScoreMatrix, path) -> None:
    if matrix.num_models == 0 or matrix.num_samples == 0:
        raise ValueError('refusing to write an empty score matrix')
    cols = list(REQUIRED_COLUMNS)
    if matrix.labels is not None:
        cols.append('class_label')
    if matrix.probs is not None:
        cols.append('prob_vector')
    with atomic_open(path, 'w', newline='', encoding='utf-8') as f:
        f.write(','.join(cols) + '\n')
        f.write(f'# criterion={matrix.criterion}\n')
        f.write(f'# schema_version={SCORE_SCHEMA_VERSION}\n')
        lines = []
        for m in range(matrix.num_models):
            for s in range(matrix.num_samples):
                parts = [str(m), str(s), '1' if matrix.masks[m, s] else '0',
                         repr(float(matrix.scores[m, s]))]
                if matrix.labels is not None:
                    parts.append(str(int(matrix.labels[s])))
                if matrix.probs is not None:
                    parts.append(' '.join(repr(float(v)) for v in matrix.probs[m, s]))
                lines.append(','.join(parts))
        f.write('\n'.join(lines) + '\n')


def read_score_file(path) -> ScoreMatrix:
    """Parses a score file into a dense ScoreMatrix.

    Raises:
        ScoreFileError: malformed line, duplicate cell, incomplete matrix or
            non-finite score.
        SchemaVersionError: the file declares a schema this reader does not know.
    """
    with open(path, newline='', encoding='utf-8') as f:
        text = f.read()
    lines = text.splitlines()
    if not lines:
        raise ScoreFileError('empty score file')
    header = [h.strip() for h in lines[0].split(',')]
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise ScoreFileError(f'header lacks columns {missing}', 1)
    col = {name: i for i, name in enumerate(header)}
    meta = {}
    cells = {}
    labels = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        if raw.startswith('#'):
            key, _, value = raw[1:].strip().partition('=')
            meta[key.strip()] = value.strip()
            continue
        parts = raw.split(',')
        if len(parts) != len(header):
            raise ScoreFileError(f'expected {len(header)} fields, got {len(parts)}', lineno)
        try:
            m = int(parts[col['model_id']])
            s = int(parts[col['sample_id']])
            member = int(parts[col['member']])
            score = float(parts[col['score']])
            label = int(parts[col['class_label']]) if 'class_label' in col else None
            probs = ([float(v) for v in parts[col['prob_vector']].split()]
                     if 'prob_vector' in col else None)
        except ValueError as e:
            raise ScoreFileError(f'cannot parse field ({e})', lineno) from None
        if m < 0 or s < 0:
            raise ScoreFileError('negative model or sample id', lineno)
        if member not in (0, 1):
            raise ScoreFileError(f'member must be 0 or 1, got {member}', lineno)
        if not math.isfinite(score):
            raise ScoreFileError(f'non-finite score {score!r}', lineno)
        if (m, s) in cells:
            raise ScoreFileError(f'duplicate (model_id, sample_id) pair ({m}, {s})', lineno)
        if label is not None:
            if labels.setdefault(s, label) != label:
                raise ScoreFileError(f'sample {s} has conflicting class labels', lineno)
        cells[(m, s)] = (member, score, probs)
    try:
        version = int(meta.get('schema_version', SCORE_SCHEMA_VERSION))
    except ValueError:
        raise ScoreFileError(f'bad schema_version {meta["schema_version"]!r}') from None
    if version != SCORE_SCHEMA_VERSION:
        raise SchemaVersionError(f'unsupported score schema version {version}')
    if not cells:
        raise ScoreFileError('score file has no records')
    num_models = 1 + max(m for m, _ in cells)
    num_samples = 1 + max(s for _, s in cells)
    if len(cells) != num_models * num_samples:
        raise ScoreFileError(
            f'incomplete matrix: {len(cells)} of {num_models * num_samples} cells present')
    scores = np.empty((num_models, num_samples))
    masks = np.empty((num_models, num_samples), dtype=bool)
    probs = None
    for (m, s), (member, score, pv) in cells.items():
        scores[m, s] = score
        masks[m, s] = bool(member)
        if pv is not None:
            if probs is None:
                probs = np.empty((num_models, num_samples, len(pv)))
            if len(pv) != probs.shape[2]:
                raise ScoreFileError(f'prob_vector length differs for ({m}, {s})')
            probs[m, s] = pv
    label_arr = (np.array([labels[s] for s in range(num_samples)])
                 if 'class_label' in col else None)
    return ScoreMatrix(scores, masks, meta.get('criterion', 'score'), label_arr, probs)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + '\n'


def config_hash(config_text: str) -> str:
    return hashlib.sha256(config_text.encode('utf-8')).hexdigest()


def write_json(obj, path) -> None:
    with atomic_open(path, 'w', encoding='utf-8') as f:
        f.write(canonical_json(obj))


def read_json(path):
    with open(path, encoding='utf-8') as f:
        return json.load(f)


def utc_timestamp() -> str:
    """Current UTC time; SOURCE_DATE_EPOCH pins it for reproducible bundles."""
    pinned = os.environ.get('SOURCE_DATE_EPOCH')
    now = (datetime.datetime.fromtimestamp(int(pinned), datetime.timezone.utc) if pinned
           else datetime.datetime.now(datetime.timezone.utc))
    return now.isoformat(timespec='seconds')


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(read_json(path))


def save_config(config: ExperimentConfig, path) -> str:
    """Writes the canonical JSON form and returns its hash."""
    text = canonical_json(config.to_dict())
    with atomic_open(path, 'w', encoding='utf-8') as f:
        f.write(text)
    return config_hash(text)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            h.update(chunk)
    return h.hexdigest()


@dataclasses.dataclass
class ReportBundle:
    """Everything one CLI run emits into its output directory.

    `config` is the document that reproduces the run; it is written as
    config.json and `config_hash` is the sha256 of exactly those bytes.
    `rocs` maps a name to a curve and becomes roc_<name>.csv (+ .svg).
    """
    kind: str
    config: dict
    seed: int
    timestamp: str = dataclasses.field(default_factory=utc_timestamp)
    attacks: dict = dataclasses.field(default_factory=dict)
    gaps: dict = dataclasses.field(default_factory=dict)
    rows: list = dataclasses.field(default_factory=list)
    extra: dict = dataclasses.field(default_factory=dict)
    rocs: dict = dataclasses.field(default_factory=dict)

    @property
    def config_text(self) -> str:
        return canonical_json(self.config)

    @property
    def config_hash(self) -> str:
        return config_hash(self.config_text)

    def numeric_content(self) -> dict:
        """The report minus run metadata; equal across reruns of one config."""
        return {
            'kind': self.kind,
            'attacks': {k: v.to_dict() for k, v in self.attacks.items()},
            'gaps': {k: v.to_dict() for k, v in self.gaps.items()},
            'rows': self.rows,
            'extra': self.extra,
        }

    def write(self, out_dir, svg: bool = True, scale: str = 'log') -> None:
        os.makedirs(out_dir, exist_ok=True)
        with atomic_open(os.path.join(out_dir, 'config.json'), 'w', encoding='utf-8') as f:
            f.write(self.config_text)
        for name, curve in self.rocs.items():
            emit_roc_export(curve, os.path.join(out_dir, f'roc_{name}.csv'), scale, svg, name)
        doc = {'schema_version': SCORE_SCHEMA_VERSION, 'config_hash': self.config_hash,
               'seed': self.seed, 'timestamp': self.timestamp,
               'roc_files': {n: f'roc_{n}.csv' for n in self.rocs}, **self.numeric_content()}
        write_json(doc, os.path.join(out_dir, 'report.json'))

    @classmethod
    def read(cls, out_dir) -> 'ReportBundle':
        doc = read_json(os.path.join(out_dir, 'report.json'))
        if doc.get('schema_version') != SCORE_SCHEMA_VERSION:
            raise SchemaVersionError(f'unsupported report schema {doc.get("schema_version")}')
        config_path = os.path.join(out_dir, 'config.json')
        with open(config_path, encoding='utf-8') as f:
            text = f.read()
        if config_hash(text) != doc['config_hash']:
            raise ValueError(f'{config_path} does not match the hash recorded in report.json')
        return cls(
            kind=doc['kind'], config=json.loads(text), seed=doc['seed'],
            timestamp=doc['timestamp'],
            attacks={k: AttackReport.from_dict(v) for k, v in doc['attacks'].items()},
            gaps={k: GapReport(**v) for k, v in doc['gaps'].items()},
            rows=doc['rows'], extra=doc['extra'])

    @staticmethod
    def roc_tables(out_dir) -> dict:
        doc = read_json(os.path.join(out_dir, 'report.json'))
        return {n: read_roc_table(os.path.join(out_dir, f))
                for n, f in doc.get('roc_files', {}).items()}


def save_checkpoints(path, model: ModelParams, checkpoints) -> None:
    """One .npz per model: the final parameters plus every checkpoint.

    Array keys are '<prefix>/layer<i>/{w,b}' with prefix 'final' or
    'step<k>'; the 'meta' entry is a JSON document holding the schema
    version, model kind and per-checkpoint statistics.
    """
    arrays = {}
    meta = {'schema_version': CHECKPOINT_SCHEMA_VERSION, 'kind': model.kind,
            'checkpoints': []}

    def put(prefix, params):
        for i, (w, b) in enumerate(params.layers):
            arrays[f'{prefix}/layer{i}/w'] = w
            arrays[f'{prefix}/layer{i}/b'] = b

    put('final', model)
    for c in checkpoints:
        put(f'step{c.step}', c.params)
        meta['checkpoints'].append({
            'step': c.step, 'train_accuracy': c.train_accuracy, 'train_loss': c.train_loss,
            'holdout_accuracy': c.holdout_accuracy, 'is_best': c.is_best})
    arrays['meta'] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    buf = _io.BytesIO()
    np.savez(buf, **arrays)
    with atomic_open(path, 'wb') as f:
        f.write(buf.getvalue())


def load_checkpoints(path) -> tuple[ModelParams, list[Checkpoint]]:
    with np.load(path) as data:
        meta = json.loads(bytes(data['meta']).decode())
        if meta.get('schema_version') != CHECKPOINT_SCHEMA_VERSION:
            raise SchemaVersionError(
                f'unsupported checkpoint schema {meta.get("schema_version")}')
        kind = meta['kind']
        n_layers = 1 if kind == 'linear' else 2

        def get(prefix):
            return ModelParams(kind, tuple((data[f'{prefix}/layer{i}/w'],
                                            data[f'{prefix}/layer{i}/b'])
                                           for i in range(n_layers)))

        final = get('final')
        cks = [Checkpoint(c['step'], get(f'step{c["step"]}'), c['train_accuracy'],
                          c['train_loss'], c['holdout_accuracy'], c['is_best'])
               for c in meta['checkpoints']]
    return final, cks


def roc_table(curve: RocCurve) -> str:
    out = _io.StringIO()
    w = csv.writer(out, lineterminator='\n')
    w.writerow(['fpr', 'tpr', 'threshold'])
    for f, t, th in curve.points():
        w.writerow([repr(f), repr(t), repr(th)])
    return out.getvalue()


def read_roc_table(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, threshold) columns of a table written by `emit_roc_export`."""
    with open(path, newline='', encoding='utf-8') as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != ['fpr', 'tpr', 'threshold']:
        raise ValueError(f'{path}: not a ROC table')
    data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, 3)
    return data[:, 0], data[:, 1], data[:, 2]


def emit_roc_export(curve: RocCurve, path, scale: str = 'log', svg: bool = True,
                    label: Optional[str] = None) -> None:
    """Writes the (fpr, tpr, threshold) table to `path` and, optionally, an SVG
    next to it (same stem, .svg).

    On the log scale both axes span [1e-4, 1]; points with fpr = 0 (or
    tpr = 0) are drawn at the 1e-4 floor. The diagonal is the random-guess
    reference.
    """
    if scale not in ('linear', 'log'):
        raise ValueError(f'unknown scale {scale!r}')
    with atomic_open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(roc_table(curve))
    if svg:
        stem, _ = os.path.splitext(os.fspath(path))
        plot_rocs({label or 'attack': (curve.fpr, curve.tpr)}, stem + '.svg', scale)


def _mpl():
    import matplotlib
    matplotlib.use('Agg')
    matplotlib.rcParams['svg.hashsalt'] = 'miaudit'
    import matplotlib.pyplot as plt
    return plt


def plot_rocs(curves: dict, path, scale: str = 'log', title: Optional[str] = None) -> None:
    """Line through the exact points of each (fpr, tpr) pair in `curves` plus the diagonal."""
    plt = _mpl()
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for name, (x, y) in curves.items():
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        if scale == 'log':
            x = np.maximum(x, LOG_AXIS_FLOOR)
            y = np.maximum(y, LOG_AXIS_FLOOR)
        ax.plot(x, y, lw=1.2, label=name)
    lo = LOG_AXIS_FLOOR if scale == 'log' else 0.0
    ax.plot([lo, 1], [lo, 1], ls='--', color='grey', lw=0.8)
    if scale == 'log':
        ax.set_xscale('log')
        ax.set_yscale('log')
    ax.set_xlim(lo, 1)
    ax.set_ylim(lo, 1)
    ax.set_xlabel('False positive rate')
    ax.set_ylabel('True positive rate')
    if title:
        ax.set_title(title)
    ax.legend(loc='lower right', fontsize=8)
    fig.tight_layout()
    with atomic_open(path, 'w', encoding='utf-8') as f:
        fig.savefig(f, format='svg', metadata={'Date': None})
    plt.close(fig)


def plot_scatter(xs, ys, colors, path, xlabel: str, ylabel: str, color_label: str) -> None:
    plt = _mpl()
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ys = np.maximum(np.asarray(ys, dtype=float), LOG_AXIS_FLOOR)
    sc = ax.scatter(xs, ys, c=colors, s=14, cmap='viridis')
    ax.set_yscale('log')
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.colorbar(sc, ax=ax, label=color_label)
    fig.tight_layout()
    with atomic_open(path, 'w', encoding='utf-8') as f:
        fig.savefig(f, format='svg', metadata={'Date': None})
    plt.close(fig)


def plot_bars(labels, values, path, ylabel: str, title: Optional[str] = None) -> None:
    plt = _mpl()
    fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(labels) + 1.5), 3.8))
    ax.bar(range(len(labels)), values, color='tab:blue')
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels([str(v) for v in labels], rotation=45, ha='right', fontsize=8)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    with atomic_open(path, 'w', encoding='utf-8') as f:
        fig.savefig(f, format='svg', metadata={'Date': None})
    plt.close(fig)
