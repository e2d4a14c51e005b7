"""Config-driven experiment pipeline.

For each cell (function, dimension, repetition) the pipeline trains the
source forest, then for each transfer size draws one transfer sample that is
shared by the scratch forest and the transferred forest, and scores all three
variants by SMAPE on an independent test sample of the target.
"""
import csv
import dataclasses
import io
import logging
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import bench
from .evaluation import (VARIANTS, significance, smape, smape_diff_percent,
                         summarize)
from .exceptions import ConfigError, InputError, ParseError
from .forest import Dataset, ForestParams, fit_forest, predict_batch
from .transfer import TransferSettings, fit_transferred

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

RECORD_COLUMNS = ("function", "dim", "size", "rep", "variant", "smape",
                  "opt_loss", "wall_ms")


@dataclass
class SyntheticSettings:
    functions: List[str] = field(default_factory=lambda: ["sphere"])
    dimensions: List[int] = field(default_factory=lambda: [2])
    source_points_per_dim: int = 1000
    test_points_per_dim: int = 1000
    lower: float = bench.DOMAIN[0]
    upper: float = bench.DOMAIN[1]
    translation_range: float = 1.0


@dataclass
class CsvSettings:
    source: str = ""
    target: str = ""
    name: str = "csv"
    n_source: Optional[int] = None
    exclude_transfer_from_test: bool = False


@dataclass
class ExperimentConfig:
    mode: str = "synthetic"
    sizes: List[int] = field(default_factory=lambda: [50])
    repetitions: int = 10
    seed: int = 0
    output: str = "results"
    workers: int = 1
    # None: on for synthetic runs, off for csv runs
    log_transform: Optional[bool] = None
    epsilon: float = bench.LOG_EPSILON
    record_timing: bool = False
    synthetic: SyntheticSettings = field(default_factory=SyntheticSettings)
    csv: Optional[CsvSettings] = None
    forest: ForestParams = field(default_factory=ForestParams)
    optimizer: TransferSettings = field(default_factory=TransferSettings)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.mode not in ("synthetic", "csv"):
            raise ConfigError(f"mode must be 'synthetic' or 'csv', got {self.mode!r}")
        if self.log_transform is None:
            self.log_transform = self.mode == "synthetic"
        elif self.log_transform and self.mode == "csv":
            raise ConfigError("log_transform is only supported in synthetic mode")
        if not self.sizes or any(int(s) < 1 for s in self.sizes):
            raise ConfigError("sizes must be a non-empty list of positive integers")
        if any(b <= a for a, b in zip(self.sizes, self.sizes[1:])):
            raise ConfigError(f"sizes must be strictly increasing, got {self.sizes}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.log_transform and not self.epsilon > 0:
            raise ConfigError("epsilon must be positive when log_transform is on")
        if self.mode == "synthetic":
            syn = self.synthetic
            try:
                for fid in syn.functions:
                    bench.resolve(fid)
            except InputError as exc:
                raise ConfigError(str(exc)) from exc
            if not syn.functions or not syn.dimensions:
                raise ConfigError("synthetic mode needs functions and dimensions")
            if any(d < 2 for d in syn.dimensions):
                raise ConfigError("synthetic dimensions must be >= 2")
            if not syn.lower < syn.upper:
                raise ConfigError("synthetic domain needs lower < upper")
        else:
            if self.csv is None:
                raise ConfigError("csv mode needs a [csv] section")
            for p in (self.csv.source, self.csv.target):
                if not p or not Path(p).is_file():
                    raise ConfigError(f"csv file not found: {p!r}")


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"[{where}] must be a table")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{where}] section: {exc}") from exc


def config_from_dict(doc):
    doc = dict(doc)
    sections = {"synthetic": SyntheticSettings, "csv": CsvSettings,
                "forest": ForestParams, "optimizer": TransferSettings}
    unknown = sorted(set(doc) - set(sections) - {"experiment"})
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    kwargs = dict(doc.get("experiment", {}))
    scalar_names = {f.name for f in dataclasses.fields(ExperimentConfig)} - set(sections)
    bad = sorted(set(kwargs) - scalar_names)
    if bad:
        raise ConfigError(f"unknown key(s) in [experiment]: {', '.join(bad)}")
    for name, cls in sections.items():
        if name in doc:
            kwargs[name] = _build(cls, doc[name], name)
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"invalid [experiment] section: {exc}") from exc


def load_config(path):
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(doc)


# ---------------------------------------------------------------------------
# data plumbing

def ingest_csv(path):
    """Read a ``x1,...,xd,y`` CSV file into a :class:`Dataset`."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "missing header row") from None
        header = [h.strip() for h in header]
        d = len(header) - 1
        expected = [f"x{i}" for i in range(1, d + 1)] + ["y"]
        if d < 1 or header != expected:
            raise ParseError(path, 1, f"header must be {','.join(expected) if d >= 1 else 'x1,...,xd,y'}, "
                                      f"got {','.join(header)}")
        rows = []
        for row in reader:
            line = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != d + 1:
                raise ParseError(path, line, f"expected {d + 1} fields, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise ParseError(path, line, f"non-numeric cell in {row!r}") from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError(path, line, "non-finite value")
            rows.append(vals)
    if not rows:
        raise InputError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=float)
    return Dataset(arr[:, :d], arr[:, d])


def write_csv(data, path):
    header = [f"x{i}" for i in range(1, data.d + 1)] + ["y"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for x, y in zip(data.X, data.y):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y))])
    return Path(path)


def subsample(data, n, rng):
    if not 1 <= n <= data.n:
        raise InputError(f"subsample size must lie in [1, {data.n}], got {n}")
    idx = np.random.default_rng(rng).choice(data.n, size=n, replace=False)
    return data.take(idx)


def stream(base_seed, *key):
    """Independent SeedSequence for a (function, dim, rep, stage, ...) key."""
    spawn_key = tuple(zlib.crc32(k.encode()) if isinstance(k, str) else int(k)
                      for k in key)
    return np.random.SeedSequence(entropy=int(base_seed), spawn_key=spawn_key)


# ---------------------------------------------------------------------------
# records

@dataclass
class ResultRecord:
    function: str
    dim: int
    size: Optional[int]
    rep: int
    variant: str
    smape: Optional[float]
    opt_loss: Optional[float] = None
    wall_ms: Optional[float] = None
    error: Optional[str] = None

    def row(self):
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return repr(v)
            return str(v)
        return [fmt(getattr(self, c)) for c in RECORD_COLUMNS]


def _cell_tasks(config):
    if config.mode == "synthetic":
        for fid in config.synthetic.functions:
            for d in config.synthetic.dimensions:
                for rep in range(config.repetitions):
                    yield (bench.resolve(fid), d, rep)
    else:
        d = ingest_csv(config.csv.target).d
        for rep in range(config.repetitions):
            yield (config.csv.name, d, rep)


class _Timer:
    def __init__(self, enabled):
        self.enabled = enabled

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.ms = (round((time.perf_counter() - self.t0) * 1000, 3)
                   if self.enabled else None)


def _prepare_synthetic(config, fid, d, rep):
    syn = config.synthetic
    lo, hi = syn.lower, syn.upper
    seed_ss = stream(config.seed, fid, d, rep, "instance")
    inst = bench.make_instance(fid, d, int(seed_ss.generate_state(1)[0]),
                               syn.translation_range)
    build = lambda fn, X: bench.build_dataset(fn, X, config.log_transform,
                                              config.epsilon)
    Xs = bench.sample_uniform(syn.source_points_per_dim * d, d, lo, hi,
                              stream(config.seed, fid, d, rep, "source_sample"))
    source_data = build(inst.source_value, Xs)
    Xe = bench.sample_uniform(syn.test_points_per_dim * d, d, lo, hi,
                              stream(config.seed, fid, d, rep, "test_sample"))
    test = build(inst.target_value, Xe)

    def draw_transfer(size):
        X = bench.sample_uniform(size, d, lo, hi,
                                 stream(config.seed, fid, d, rep, "transfer_sample", size))
        return build(inst.target_value, X), test

    return source_data, draw_transfer


def _prepare_csv(config, name, d, rep):
    opts = config.csv
    source_data = ingest_csv(opts.source)
    target = ingest_csv(opts.target)
    if source_data.d != target.d:
        raise InputError(f"source is {source_data.d}-D but target is {target.d}-D")
    if opts.n_source is not None and opts.n_source < source_data.n:
        source_data = subsample(source_data, opts.n_source,
                                stream(config.seed, name, d, rep, "source_sample"))
    def draw_transfer(size):
        rng = stream(config.seed, name, d, rep, "transfer_sample", size)
        idx = np.random.default_rng(rng).choice(target.n, size=size, replace=False)
        transfer = target.take(idx)
        if opts.exclude_transfer_from_test:
            keep = np.setdiff1d(np.arange(target.n), idx)
            return transfer, target.take(keep)
        return transfer, target

    return source_data, draw_transfer


def run_cell(config, fid, d, rep):
    """All records for one (function, dimension, repetition)."""
    records = []
    fail = lambda variant, size, exc: ResultRecord(
        fid, d, size, rep, variant, None, error=f"{type(exc).__name__}: {exc}")
    try:
        with _Timer(config.record_timing) as t_src:
            if config.mode == "synthetic":
                source_data, draw_transfer = _prepare_synthetic(config, fid, d, rep)
            else:
                source_data, draw_transfer = _prepare_csv(config, fid, d, rep)
            source_model = fit_forest(source_data, config.forest,
                                      stream(config.seed, fid, d, rep, "source_forest"))
    except ConfigError:
        raise
    except Exception as exc:
        log.exception("cell %s d=%d rep=%d failed while building the source model",
                      fid, d, rep)
        records.append(fail("original", None, exc))
        for size in config.sizes:
            records.append(fail("scratch", size, exc))
            records.append(fail("transferred", size, exc))
        return records

    original_done = False
    for size in config.sizes:
        try:
            transfer, test = draw_transfer(size)
        except Exception as exc:
            records.append(fail("scratch", size, exc))
            records.append(fail("transferred", size, exc))
            continue
        if not original_done:
            # the original model does not depend on the transfer size
            try:
                with _Timer(config.record_timing) as t:
                    s = smape(test.y, predict_batch(source_model, test.X))
                records.append(ResultRecord(fid, d, None, rep, "original", s,
                                            wall_ms=_add(t_src.ms, t.ms)))
            except Exception as exc:
                records.append(fail("original", None, exc))
            original_done = True
        try:
            with _Timer(config.record_timing) as t:
                scratch = fit_forest(transfer, config.forest,
                                     stream(config.seed, fid, d, rep, "scratch_forest", size))
                s = smape(test.y, predict_batch(scratch, test.X))
            records.append(ResultRecord(fid, d, size, rep, "scratch", s, wall_ms=t.ms))
        except Exception as exc:
            records.append(fail("scratch", size, exc))
        try:
            with _Timer(config.record_timing) as t:
                model, result = fit_transferred(
                    source_model, transfer, config.optimizer,
                    stream(config.seed, fid, d, rep, "optimizer", size))
                s = smape(test.y, model.predict_batch(test.X))
            records.append(ResultRecord(fid, d, size, rep, "transferred", s,
                                        opt_loss=float(result.best_f), wall_ms=t.ms))
        except Exception as exc:
            records.append(fail("transferred", size, exc))
    return records


def _add(a, b):
    return None if a is None or b is None else round(a + b, 3)


def _run_cell_args(args):
    return run_cell(*args)


def run_experiment(config, workers=None):
    """Run every cell; output order is independent of ``workers``."""
    workers = config.workers if workers is None else workers
    tasks = list(_cell_tasks(config))
    if workers <= 1 or len(tasks) <= 1:
        chunks = [run_cell(config, *t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_cell_args, [(config, *t) for t in tasks]))
    return sort_records([r for chunk in chunks for r in chunk])


def sort_records(records):
    order = {v: i for i, v in enumerate(VARIANTS)}
    return sorted(records, key=lambda r: (r.function, r.dim, r.rep,
                                          -1 if r.size is None else r.size,
                                          order.get(r.variant, 99)))


# ---------------------------------------------------------------------------
# output

COLUMN_DOCS = """\
records.csv    one row per (function, dim, size, rep, variant)
  function     benchmark function name (or csv dataset name)
  dim          input dimension
  size         transfer-set size; empty for the original model
  rep          repetition index
  variant      original | scratch | transferred
  smape        SMAPE on the target test set, in [0, 1]; empty on error
  opt_loss     best transfer loss (transferred only)
  wall_ms      wall time in ms; empty unless record_timing is set

summary.csv    one row per (function, dim, size)
  <variant>_mean, <variant>_std  mean and sample std of SMAPE over reps
  n_reps       repetitions contributing to the transferred column

heatmap.csv    one row per (function, dim, size)
  smape_diff_percent  100 * (scratch mean - transferred mean); > 0 means
                      the transferred model is better

curve_<function>.csv  size-sweep data, one row per (dim, size, variant)
  mean, std    SMAPE mean and sample std over reps

table.md       mean +- std table per dimension, one column pair per size
errors.csv     records that failed, with the error message (only if any)
"""


def _fmt(v):
    return repr(float(v))


def summary_rows(records):
    """{(function, dim, size): {variant: MetricReport}} over successful records.

    The original model has no size; its report is replicated into every size.
    """
    ok = [r for r in records if r.smape is not None]
    cells = sorted({(r.function, r.dim, r.size) for r in ok if r.size is not None})
    out = {}
    for fn, dim, size in cells:
        entry = {}
        for variant in VARIANTS:
            vals = [r.smape for r in ok if r.function == fn and r.dim == dim
                    and r.variant == variant
                    and (r.size == size or variant == "original")]
            if vals:
                entry[variant] = summarize(vals, variant)
        out[(fn, dim, size)] = entry
    return out


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def emit_results(records, out_dir):
    """Write records, summary, heatmap, size-sweep curves and a table."""
    if not records:
        raise InputError("no records to emit")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    records = sort_records(records)
    files = {}

    files["records.csv"] = _csv_text(RECORD_COLUMNS, [r.row() for r in records])

    summary = summary_rows(records)
    header = ["function", "dim", "size"]
    for v in VARIANTS:
        header += [f"{v}_mean", f"{v}_std"]
    header.append("n_reps")
    rows, heat = [], []
    for (fn, dim, size), entry in summary.items():
        row = [fn, dim, size]
        for v in VARIANTS:
            rep = entry.get(v)
            row += ["", ""] if rep is None else [_fmt(rep.smape_mean), _fmt(rep.smape_std)]
        row.append(entry["transferred"].n_runs if "transferred" in entry else 0)
        rows.append(row)
        if "scratch" in entry and "transferred" in entry:
            heat.append([fn, dim, size,
                         _fmt(smape_diff_percent(entry["scratch"], entry["transferred"]))])
    files["summary.csv"] = _csv_text(header, rows)
    files["heatmap.csv"] = _csv_text(["function", "dim", "size", "smape_diff_percent"], heat)

    for fn in sorted({k[0] for k in summary}):
        crow = []
        for (f2, dim, size), entry in summary.items():
            if f2 != fn:
                continue
            for v in VARIANTS:
                if v in entry:
                    crow.append([dim, size, v, _fmt(entry[v].smape_mean),
                                 _fmt(entry[v].smape_std)])
        files[f"curve_{fn}.csv"] = _csv_text(["dim", "size", "variant", "mean", "std"], crow)

    files["table.md"] = _markdown_table(summary)
    files["columns.txt"] = COLUMN_DOCS
    errors = [r for r in records if r.error]
    if errors:
        files["errors.csv"] = _csv_text(
            ["function", "dim", "size", "rep", "variant", "error"],
            [[r.function, r.dim, "" if r.size is None else r.size, r.rep,
              r.variant, r.error] for r in errors])

    written = []
    for name, text in files.items():
        path = out / name
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        written.append(path)
    return written


def _markdown_table(summary):
    def cell(rep):
        return "-" if rep is None else f"{rep.smape_mean:.4f} ± {rep.smape_std:.4f}"

    lines = []
    for dim in sorted({k[1] for k in summary}):
        sizes = sorted({k[2] for k in summary if k[1] == dim})
        head = ["f", "original"]
        for s in sizes:
            head += [f"scratch ({s})", f"transferred ({s})"]
        lines.append(f"### d = {dim}\n")
        lines.append("| " + " | ".join(head) + " |")
        lines.append("|" + "---|" * len(head))
        for fn in sorted({k[0] for k in summary if k[1] == dim}):
            first = summary.get((fn, dim, sizes[0]), {})
            row = [fn, cell(first.get("original"))]
            for s in sizes:
                entry = summary.get((fn, dim, s), {})
                row += [cell(entry.get("scratch")), cell(entry.get("transferred"))]
            lines.append("| " + " | ".join(row) + " |")
        lines.append("")
    return "\n".join(lines)


def read_records(path):
    path = Path(path)
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != RECORD_COLUMNS:
            raise ParseError(path, 1, f"expected header {','.join(RECORD_COLUMNS)}")
        for row in reader:
            if not row:
                continue
            if len(row) != len(RECORD_COLUMNS):
                raise ParseError(path, reader.line_num,
                                 f"expected {len(RECORD_COLUMNS)} fields, got {len(row)}")
            try:
                fn, dim, size, rep, variant, s, loss, wall = row
                out.append(ResultRecord(
                    fn, int(dim), int(size) if size else None, int(rep), variant,
                    float(s) if s else None, float(loss) if loss else None,
                    float(wall) if wall else None))
            except ValueError as exc:
                raise ParseError(path, reader.line_num, str(exc)) from None
    return out


# ---------------------------------------------------------------------------
# significance

@dataclass(frozen=True, eq=False)
class CellSignificance:
    function: str
    dim: int
    size: int
    report: Optional[object]
    inconclusive: bool

    @property
    def transferred_beats_original(self):
        return (not self.inconclusive
                and self.report.better("transferred", "original") == "transferred")

    @property
    def better_of_transferred_scratch(self):
        if self.inconclusive:
            return None
        return self.report.better("transferred", "scratch")


def run_significance(records, alpha=0.05, adjust="bonferroni"):
    """Kruskal-Wallis + Dunn per (function, dim, size) over the three variants."""
    out = []
    ok = [r for r in records if r.smape is not None]
    for (fn, dim, size), _ in summary_rows(ok).items():
        groups = []
        for v in VARIANTS:
            groups.append([r.smape for r in ok if r.function == fn and r.dim == dim
                           and r.variant == v and (r.size == size or v == "original")])
        if any(len(g) < 2 for g in groups):
            out.append(CellSignificance(fn, dim, size, None, True))
            continue
        out.append(CellSignificance(fn, dim, size,
                                    significance(groups, VARIANTS, alpha, adjust), False))
    return out


def significance_csv(cells):
    rows = []
    for c in cells:
        if c.inconclusive:
            rows.append([c.function, c.dim, c.size, "", "", "", "", "inconclusive"])
            continue
        better = c.better_of_transferred_scratch
        rows.append([c.function, c.dim, c.size, _fmt(c.report.kw_statistic),
                     _fmt(c.report.kw_p), int(c.transferred_beats_original),
                     better or "", "ok"])
    return _csv_text(["function", "dim", "size", "kw_h", "kw_p",
                      "transferred_beats_original", "better_of_transferred_scratch",
                      "status"], rows)
