"""End-to-end leakage experiments.

For every client: pick the global model snapshot (fresh, or trained
leave-one-subject-out on everybody else), cut the client's stream into
windows, batch them, compute the update the client would share (optionally
multi-step and privatized), hand it to every attack and score the
reconstructions. The global model is never updated from attacked batches.
"""

import csv
import dataclasses
import io
import json
import logging
import os
import platform
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .attacks import ATTACKS, make_attack
from .datagen import CsvSchema, DwellWarning, generate_stream, load_csv_stream, null_majority_spec, sliding_windows
from .defenses import LdpConfig, apply_ldp
from .exceptions import CapabilityError, DomainError, NumericError, SchemaError
from .metrics import BatchEvaluation, classacc, confusion_matrix, mean_leacc, mean_lnacc
from .model import (ModelArch, init_model, last_layer_gradients, load_checkpoint, multi_step_update,
                    save_checkpoint, sgd_train)
from .numerics import derive_seed
from .sampler import EmptyClassWarning, SamplingStrategy, batch_histogram, make_batches

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["attack", "client", "strategy", "model_state", "steps", "batch_size", "ldp",
                   "n_batches", "failed_batches", "leacc", "lnacc", "classacc"]

# seed streams, so that adding one stochastic step never shifts another
_SPEC, _SHIFT, _STREAM, _INIT, _TRAIN, _BATCH, _LDP, _PROBE = range(8)


@dataclass
class StreamConfig:
    """Synthetic corpus description (see :func:`null_majority_spec`)."""

    class_count: int = 5
    feature_dim: int = 3
    length: int = 20_000
    null_weight: float = 0.4
    mean_dwell_windows: float = 20.0
    null_dwell_windows: float = None
    signal: float = 1.0
    noise: float = 1.0
    subject_shift: float = 0.5


@dataclass
class ExperimentConfig:
    stream: StreamConfig = field(default_factory=StreamConfig)
    csv_paths: list = None
    csv_label_column: str = "label"
    client_count: int = 10
    window_length: int = 50
    overlap: float = 0.5
    sampling: str = "shuffled"
    batch_size: int = 100
    steps: int = 1
    hidden_dims: list = field(default_factory=lambda: [64, 32])
    final_layer_has_bias: bool = True
    init_gain: float = 0.5
    trained: bool = False
    epochs: int = 100
    learning_rate: float = 0.01
    train_batch_size: int = 100
    checkpoint_dir: str = None
    attacks: list = field(default_factory=lambda: list(ATTACKS))
    llg_star_probes: int = 10
    ldp: dict = None
    leacc_complement: bool = True
    allow_single_batch: bool = False
    seed: int = 0
    output_dir: str = None

    def __post_init__(self):
        if isinstance(self.stream, dict):
            self.stream = StreamConfig(**self.stream)
        if isinstance(self.ldp, LdpConfig):
            self.ldp = {"clip_norm": self.ldp.clip_norm, "noise_sigma": self.ldp.noise_sigma,
                        "order": self.ldp.order}
        self.hidden_dims = list(self.hidden_dims)
        self.attacks = list(self.attacks)

    def validate(self):
        if not self.attacks:
            raise DomainError("attack list is empty")
        unknown = sorted(set(self.attacks) - set(ATTACKS))
        if unknown:
            raise DomainError(f"unknown attacks {unknown}")
        if self.steps < 1 or self.batch_size % self.steps:
            raise DomainError(f"batch size {self.batch_size} is not divisible into {self.steps} steps")
        SamplingStrategy(self.sampling)
        self.ldp_config()
        if self.csv_paths is None and self.client_count < 1:
            raise DomainError("need at least one client")
        return self

    def ldp_config(self):
        return None if self.ldp is None else LdpConfig(**self.ldp)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise SchemaError(f"unknown config keys: {sorted(extra)}")
        stream = d.get("stream")
        if isinstance(stream, dict):
            extra = set(stream) - {f.name for f in dataclasses.fields(StreamConfig)}
            if extra:
                raise SchemaError(f"unknown stream keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @property
    def ldp_label(self):
        cfg = self.ldp_config()
        if cfg is None:
            return "none"
        parts = []
        if cfg.clip_norm is not None:
            parts.append(f"clip{cfg.clip_norm:g}")
        if cfg.noise_sigma is not None:
            parts.append(f"noise{cfg.noise_sigma:g}")
        return "+".join(parts) or "none"


@dataclass
class AttackCell:
    """One attack evaluated on one client."""

    attack: str
    evaluations: list = field(default_factory=list)
    failed_batches: int = 0
    skipped: str = None

    def metrics(self, complement=True):
        if self.skipped or not self.evaluations:
            reason = self.skipped or "every batch failed"
            return {"leacc": f"skipped:{reason}", "lnacc": f"skipped:{reason}", "classacc": f"skipped:{reason}"}
        return {"leacc": mean_leacc(self.evaluations, complement), "lnacc": mean_lnacc(self.evaluations),
                "classacc": classacc(self.evaluations)}

    def confusion(self):
        return None if self.skipped or not self.evaluations else confusion_matrix(self.evaluations)


@dataclass
class ClientReport:
    client_id: str
    n_batches: int
    cells: dict
    notes: list = field(default_factory=list)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    clients: list
    runtime: dict = field(default_factory=dict)

    def rows(self):
        cfg = self.config
        state = "trained" if cfg.trained else "untrained"
        out = []
        for name in cfg.attacks:
            for client in self.clients:
                cell = client.cells[name]
                row = {"attack": name, "client": client.client_id, "strategy": cfg.sampling,
                       "model_state": state, "steps": cfg.steps, "batch_size": cfg.batch_size,
                       "ldp": cfg.ldp_label, "n_batches": client.n_batches,
                       "failed_batches": cell.failed_batches}
                row.update(cell.metrics(cfg.leacc_complement))
                out.append(row)
        return out

    def aggregates(self):
        """Mean of each metric per attack over the clients that were not skipped."""
        agg = {}
        for name in self.config.attacks:
            rows = [r for r in self.rows() if r["attack"] == name and not isinstance(r["classacc"], str)]
            agg[name] = {m: (float(np.mean([r[m] for r in rows])) if rows else None)
                         for m in ("leacc", "lnacc", "classacc")}
        return agg

    def metric(self, attack, name="classacc"):
        return self.aggregates()[attack][name]


# -- building blocks ------------------------------------------------------------

def loso_partition(clients, held_out):
    """Split ``clients`` into the training pool and the held-out client."""
    ids = [c.client_id for c in clients]
    if held_out not in ids:
        raise LookupError(f"unknown client {held_out!r}")
    return [c for c in clients if c.client_id != held_out], clients[ids.index(held_out)]


def base_spec(cfg):
    s = cfg.stream
    return null_majority_spec(s.class_count, s.feature_dim, s.length, null_weight=s.null_weight,
                              mean_dwell_windows=s.mean_dwell_windows, null_dwell_windows=s.null_dwell_windows,
                              signal=s.signal, noise=s.noise, seed=derive_seed(cfg.seed, _SPEC),
                              samples_per_window=max(1, int(round(cfg.window_length * (1 - cfg.overlap)))))


def build_clients(cfg):
    """Per-client streams; synthetic clients get subject-specific class means."""
    if cfg.csv_paths:
        return [load_csv_stream(p, CsvSchema(label_column=cfg.csv_label_column)) for p in cfg.csv_paths]
    spec = base_spec(cfg)
    clients = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DwellWarning)
        for c in range(cfg.client_count):
            shift = np.random.default_rng(derive_seed(cfg.seed, _SHIFT, c)).standard_normal(spec.class_means.shape)
            client_spec = dataclasses.replace(spec, class_means=spec.class_means + cfg.stream.subject_shift * shift)
            clients.append(generate_stream(client_spec, derive_seed(cfg.seed, _STREAM, c), client_id=f"c{c:02d}"))
    if caught:
        log.info("%s", caught[0].message)
    return clients


def model_arch(cfg, input_dim, class_count):
    return ModelArch(input_dim, tuple(cfg.hidden_dims), class_count, cfg.final_layer_has_bias, cfg.init_gain)


def global_init(cfg, arch):
    return init_model(arch, derive_seed(cfg.seed, _INIT))


def loso_snapshot(cfg, windows_by_client, held_out, arch):
    """The model the server sends to ``held_out``: fresh, or trained on the
    other clients' windows."""
    if cfg.checkpoint_dir and cfg.trained:
        return load_checkpoint(os.path.join(cfg.checkpoint_dir, f"model_{held_out}.json"))
    model = global_init(cfg, arch)
    if not cfg.trained:
        return model
    pool = [w for cid, w in windows_by_client.items() if cid != held_out]
    if not pool:
        raise DomainError("a trained model needs at least one other client to train on")
    X = np.concatenate([w.flat() for w in pool])
    y = np.concatenate([w.labels for w in pool])
    idx = list(windows_by_client).index(held_out)
    log.info("training LOSO model for %s on %d windows", held_out, len(y))
    return sgd_train(model, (X, y), cfg.epochs, cfg.learning_rate, cfg.train_batch_size,
                     derive_seed(cfg.seed, _TRAIN, idx))


def client_update(cfg, model, X, y):
    if cfg.steps == 1:
        return last_layer_gradients(model, X, y)
    parts = np.split(np.arange(len(y)), cfg.steps)
    return multi_step_update(model, [(X[p], y[p]) for p in parts], cfg.learning_rate)


def _attackers(cfg, snapshot, client_index):
    out = {}
    for name in cfg.attacks:
        params = {}
        if name == "llg_star":
            params = {"probes": cfg.llg_star_probes, "random_state": derive_seed(cfg.seed, _PROBE, client_index)}
        out[name] = make_attack(name, **params).fit(snapshot)
    return out


def evaluate_client(cfg, windows, snapshot, client_index):
    """Run every attack on every batch of one client."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", EmptyClassWarning)
        batches = make_batches(windows, cfg.batch_size, cfg.sampling, derive_seed(cfg.seed, _BATCH, client_index),
                               allow_single_batch=cfg.allow_single_batch)
    notes = [str(w.message) for w in caught if issubclass(w.category, EmptyClassWarning)]
    for note in notes:
        log.info("%s: %s", windows.client_id, note)
    X_all, y_all = windows.flat(), windows.labels
    k = windows.class_count
    ldp = cfg.ldp_config()
    attackers = _attackers(cfg, snapshot, client_index)
    cells = {name: AttackCell(name) for name in cfg.attacks}
    for b_index, batch in enumerate(batches):
        idx = batch.window_indices
        update = client_update(cfg, snapshot, X_all[idx], y_all[idx])
        if ldp is not None:
            update = apply_ldp(update, ldp, derive_seed(cfg.seed, _LDP, client_index, b_index))
        gt = batch_histogram(y_all, batch, k)
        for name, attacker in attackers.items():
            cell = cells[name]
            if cell.skipped:
                continue
            try:
                rec = attacker.reconstruct(update).counts
            except CapabilityError as exc:
                cell.skipped = _reason(exc)
                continue
            except NumericError as exc:
                log.debug("%s failed on batch %d of %s: %s", name, b_index, windows.client_id, exc)
                cell.failed_batches += 1
                continue
            cell.evaluations.append(BatchEvaluation(gt, rec, len(batch)))
    return ClientReport(windows.client_id, len(batches), cells, notes)


def _reason(exc):
    return type(exc).__name__.replace("Error", "").lower() or "error"


def _snapshot_key(cfg, client_id):
    keys = ("stream", "csv_paths", "client_count", "window_length", "overlap", "hidden_dims",
            "final_layer_has_bias", "init_gain", "trained", "epochs", "learning_rate",
            "train_batch_size", "checkpoint_dir", "seed")
    d = cfg.to_dict()
    return json.dumps([client_id] + [d[k] for k in keys], sort_keys=True)


def client_windows(cfg):
    """Windowed data per client id (all sharing one class count) and the
    architecture they imply."""
    streams = build_clients(cfg)
    windows = {s.client_id: sliding_windows(s, cfg.window_length, cfg.overlap) for s in streams}
    if len(windows) != len(streams):
        raise DomainError("client ids must be unique")
    k = max(w.class_count for w in windows.values())
    for cid, w in windows.items():
        if w.class_count != k:
            windows[cid] = dataclasses.replace(w, class_count=k)
    input_dim = next(iter(windows.values())).flat().shape[1]
    return windows, model_arch(cfg, input_dim, k)


def train_checkpoints(cfg, directory):
    """Train the LOSO model of every client and save it as
    ``model_<client>.json``, the layout ``checkpoint_dir`` expects."""
    cfg.validate()
    windows, arch = client_windows(cfg)
    train_cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "trained": True, "checkpoint_dir": None})
    os.makedirs(directory, exist_ok=True)
    paths = []
    for cid in windows:
        model = loso_snapshot(train_cfg, windows, cid, arch)
        paths.append(save_checkpoint(model, os.path.join(directory, f"model_{cid}.json")))
    return paths


def run_experiment(cfg, snapshot_cache=None):
    """Evaluate every configured attack on every client. Deterministic per seed.

    ``snapshot_cache`` (a dict) lets runs that differ only in sampling, attacks
    or LDP share the LOSO-trained models instead of retraining them.
    """
    cfg.validate()
    t0 = time.perf_counter()
    windows, arch = client_windows(cfg)
    reports = []
    for i, (cid, w) in enumerate(windows.items()):
        key = _snapshot_key(cfg, cid)
        if snapshot_cache is not None and key in snapshot_cache:
            snapshot = snapshot_cache[key]
        else:
            snapshot = loso_snapshot(cfg, windows, cid, arch)
            if snapshot_cache is not None:
                snapshot_cache[key] = snapshot
        reports.append(evaluate_client(cfg, w, snapshot, i))
    runtime = {"seconds": time.perf_counter() - t0, "version": __version__,
               "python": platform.python_version(), "numpy": np.__version__}
    return ExperimentReport(cfg, reports, runtime)


# -- output ---------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def summary_csv(rows, columns=SUMMARY_COLUMNS):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def write_report(report, directory):
    """Write ``summary.csv``, ``config.json``, ``confusion_<client>_<attack>.csv``
    and ``runtime.json`` (timings only; excluded from the determinism contract)."""
    directory = os.fspath(directory)
    try:
        os.makedirs(directory, exist_ok=True)
        paths = {"summary": os.path.join(directory, "summary.csv"),
                 "config": os.path.join(directory, "config.json")}
        with open(paths["summary"], "w", encoding="utf-8", newline="") as fh:
            fh.write(summary_csv(report.rows()))
        report.config.save(paths["config"])
        for client in report.clients:
            for name, cell in client.cells.items():
                cm = cell.confusion()
                if cm is None:
                    continue
                p = os.path.join(directory, f"confusion_{client.client_id}_{name}.csv")
                with open(p, "w", encoding="utf-8", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(["true_class"] + [f"rec_{j}" for j in range(cm.shape[1])])
                    for j, row in enumerate(cm):
                        w.writerow([j] + [repr(float(v)) for v in row])
                paths[f"confusion_{client.client_id}_{name}"] = p
        paths["runtime"] = os.path.join(directory, "runtime.json")
        with open(paths["runtime"], "w", encoding="utf-8") as fh:
            json.dump(report.runtime, fh, indent=2)
    except OSError as exc:
        raise OSError(f"could not write report to {directory}: {exc}") from exc
    return paths


def sweep_configs(base, strategies=None, ldp_settings=None, model_states=None):
    """Cross product of sampling strategies, LDP settings and model states."""
    strategies = strategies or [base.sampling]
    ldp_settings = ldp_settings if ldp_settings is not None else [base.ldp]
    model_states = model_states if model_states is not None else [base.trained]
    out = []
    for trained in model_states:
        for strategy in strategies:
            for ldp in ldp_settings:
                cfg = ExperimentConfig.from_dict(base.to_dict())
                cfg.sampling, cfg.ldp, cfg.trained = strategy, ldp, trained
                out.append(cfg)
    return out


def run_sweep(base, strategies=None, ldp_settings=None, model_states=None, directory=None):
    """Run every configuration of the sweep; returns the reports and, when a
    directory is given, writes one sub-directory per run plus a combined
    ``summary.csv``."""
    reports = []
    rows = []
    cache = {}
    for i, cfg in enumerate(sweep_configs(base, strategies, ldp_settings, model_states)):
        report = run_experiment(cfg, snapshot_cache=cache)
        reports.append(report)
        rows.extend(report.rows())
        if directory:
            state = "trained" if cfg.trained else "untrained"
            write_report(report, os.path.join(directory, f"run{i:02d}_{cfg.sampling}_{state}_{cfg.ldp_label}"))
    if directory:
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "summary.csv"), "w", encoding="utf-8", newline="") as fh:
            fh.write(summary_csv(rows))
        base.save(os.path.join(directory, "config.json"))
    return reports


def aggregate_summaries(paths):
    """Mean LeAcc / LnAcc / ClassAcc per (attack, strategy, model_state, ldp)
    across one or more ``summary.csv`` files. Skipped cells are ignored."""
    groups = {}
    for p in paths:
        with open(p, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                key = (row["attack"], row["strategy"], row["model_state"], row["ldp"])
                g = groups.setdefault(key, {"leacc": [], "lnacc": [], "classacc": []})
                for m in g:
                    if not row[m].startswith("skipped"):
                        g[m].append(float(row[m]))
    out = []
    for key in sorted(groups):
        g = groups[key]
        out.append(dict(zip(("attack", "strategy", "model_state", "ldp"), key),
                        **{m: (float(np.mean(v)) if v else None) for m, v in g.items()},
                        clients=len(g["classacc"])))
    return out
