"""Experiment orchestration: the round loop, accounting, and result emission.

Every random draw comes from a sub-generator derived by hashing
(master_seed, purpose label), so runs are bit-reproducible and adding a
scheme never perturbs another scheme's randomness.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, fields, replace
from functools import lru_cache
from hashlib import blake2b

import numpy as np

from . import codec, protocols, secagg
from .accountant import AccountantParams, epsilon_for
from .bpdn import SolverOptions
from .config import ExperimentConfig
from .errors import NumericFailure
from .ml import data as mldata
from .ml.metrics import EvalReport, evaluate


def subseed(master_seed: int, label: str) -> int:
    """Stable 64-bit sub-seed for one labeled purpose."""
    digest = blake2b(f"{master_seed}|{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def subrng(master_seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(subseed(master_seed, label))


def bandwidth_cost(r: float, n: int, rounds: int, c: float) -> float:
    """Cumulative transmission in bits: r * n * 32 * rounds * c."""
    if r < 0 or n < 0 or rounds < 0 or c < 0:
        raise ValueError("bandwidth arguments must be nonnegative")
    return r * n * 32.0 * rounds * c


@dataclass(frozen=True)
class RoundRecord:
    """One evaluated round.  Field order fixes the CSV header.

    cost_1e6 repeats cumulative_cost_bits divided by 10^6 for side-by-side
    reading against published tables (whose 'Megabyte' label actually tracks
    bits/10^6; see the README note).
    """

    round: int
    scheme: str
    r: float
    epsilon: float | None
    cumulative_cost_bits: float
    cost_1e6: float
    accuracy: float
    balanced_accuracy: float | None
    auroc: float | None
    wallclock_ms: float
    solver_iterations: int | None


RECORD_FIELDS = tuple(f.name for f in fields(RoundRecord))
_INT_FIELDS = ("round", "solver_iterations")


def _format_value(name: str, value):
    if value is None:
        return None
    if name == "scheme":
        return value
    if name in _INT_FIELDS:
        return int(value)
    return float(f"{float(value):.6g}")


def _record_cells(rec: RoundRecord):
    return {name: _format_value(name, getattr(rec, name)) for name in RECORD_FIELDS}


class ResultWriter:
    """Incremental record writer so partial results survive an abort."""

    def __init__(self, path: str, fmt: str):
        if fmt not in ("csv", "jsonl"):
            raise ValueError(f"unknown output format {fmt!r}")
        self.fmt = fmt
        self._fh = open(path, "w", encoding="utf-8", newline="\n")
        if fmt == "csv":
            self._fh.write(",".join(RECORD_FIELDS) + "\n")

    def write(self, rec: RoundRecord):
        cells = _record_cells(rec)
        if self.fmt == "csv":
            row = ",".join(
                "" if cells[n] is None else f"{cells[n]:.6g}" if isinstance(cells[n], float) else str(cells[n])
                for n in RECORD_FIELDS
            )
            self._fh.write(row + "\n")
        else:
            self._fh.write(json.dumps(cells) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def emit_results(records, path: str, fmt: str = "csv") -> str:
    """Write the record list; returns the path."""
    with ResultWriter(path, fmt) as w:
        for rec in records:
            w.write(rec)
    return path


def parse_results(path: str, fmt: str = "csv"):
    """Read a result file back into dictionaries (for tests and tooling)."""
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        if fmt == "jsonl":
            return [json.loads(line) for line in f if line.strip()]
        header = f.readline().strip().split(",")
        for line in f:
            cells = line.rstrip("\n").split(",")
            row = {}
            for name, cell in zip(header, cells):
                if cell == "":
                    row[name] = None
                elif name == "scheme":
                    row[name] = cell
                elif name in _INT_FIELDS:
                    row[name] = int(cell)
                else:
                    row[name] = float(cell)
            rows.append(row)
    return rows


def early_stop(records, patience: int, metric: str):
    """(stop?, best record) once `metric` has not improved for `patience` evals."""
    if patience < 1:
        raise ValueError("patience must be positive")
    best_idx = None
    best_val = -np.inf
    for i, rec in enumerate(records):
        val = getattr(rec, metric) if isinstance(rec, RoundRecord) else rec[metric]
        if val is None:
            raise ValueError(f"metric {metric!r} not recorded")
        if val > best_val:
            best_val = val
            best_idx = i
    if best_idx is None:
        return False, None
    stop = (len(records) - 1 - best_idx) >= patience
    return stop, records[best_idx]


@lru_cache(maxsize=None)
def _epsilon_cached(sigma: float, q: float, steps: int, delta: float) -> float:
    return epsilon_for(AccountantParams(sigma=sigma, q=q, steps=steps, delta=delta)).epsilon


# ---------------------------------------------------------------------------
# experiment assembly


@dataclass
class _Bundle:
    """Everything the round loop needs, built once per run."""

    model: object
    w0: np.ndarray
    train: mldata.Dataset
    test: mldata.Dataset
    shards: list
    sizes: np.ndarray
    n: int
    m: int
    cfg_sensing: codec.SensingConfig | None
    perm: np.ndarray | None
    hyper: protocols.HyperParams
    solver: SolverOptions
    weighting: str


def _build_dataset(cfg: ExperimentConfig):
    d = cfg.data
    if d.source == "idx":
        train = mldata.load_idx_files(d.train_images, d.train_labels)
        test = mldata.load_idx_files(d.test_images, d.test_labels)
        return train, test
    rng = subrng(cfg.master_seed, "data")
    pool = mldata.synthetic_blobs(
        d.n_train + d.n_test,
        d.features,
        d.classes,
        rng,
        active_dims=d.active_dims,
        amplitude=d.amplitude,
        noise_std=d.noise_std,
        class_weights=d.class_weights,
    )
    train = mldata.Dataset(X=pool.X[: d.n_train], y=pool.y[: d.n_train])
    test = mldata.Dataset(X=pool.X[d.n_train :], y=pool.y[d.n_train :])
    return train, test


def _payload_m(cfg: ExperimentConfig, n: int):
    """Per-scheme payload length and, for fl-cs, the sensing configuration."""
    if not cfg.is_compressed:
        return n, None
    if cfg.scheme.startswith("fl-cs"):
        if cfg.m is not None:
            sensing = codec.SensingConfig(
                n=n, m=cfg.m, P=cfg.chunks, shuffle_seed=cfg.shuffle_seed
            )
        else:
            sensing = codec.SensingConfig.from_ratio(
                n, cfg.ratio, cfg.chunks, cfg.shuffle_seed
            )
        return sensing.m, sensing
    m = cfg.m if cfg.m is not None else int(round(cfg.ratio * n))
    return min(max(m, 1), n), None


def _calibrate(cfg: ExperimentConfig, bundle: _Bundle) -> float:
    """Initialization round: median payload norm over all clients."""
    norms = []
    calib_idx = None
    if bundle.cfg_sensing is None and cfg.scheme.startswith("fl-rnd"):
        calib_idx = protocols.round_index_set(
            bundle.n, bundle.m, subseed(cfg.master_seed, "rndidx|calibrate")
        )
    for k in range(cfg.partition.n_clients):
        rng = subrng(cfg.master_seed, f"calibrate|{k}")
        shard = bundle.shards[k]
        delta = protocols.local_delta(
            bundle.model,
            bundle.w0,
            bundle.train.X[shard],
            bundle.train.y[shard],
            bundle.hyper,
            rng,
        )
        if cfg.scheme.startswith("fl-cs"):
            payload = codec.compress(delta, bundle.cfg_sensing, perm=bundle.perm)
        elif cfg.scheme.startswith("fl-rnd"):
            payload = delta[calib_idx]
        elif cfg.scheme.startswith("fl-freq"):
            payload = codec.freq_compress(delta, bundle.m)
        else:
            payload = delta
        norms.append(float(np.linalg.norm(payload)))
    return protocols.calibrate_sensitivity(norms)


def _setup(cfg: ExperimentConfig) -> _Bundle:
    train, test = _build_dataset(cfg)
    n_clients = cfg.partition.n_clients
    shards = mldata.partition(
        train.y,
        n_clients,
        cfg.partition.mode,
        subrng(cfg.master_seed, "partition"),
        classes_per_client=cfg.partition.classes_per_client,
        ensure_minority=cfg.partition.ensure_minority,
    )
    if cfg.partition.downsample:
        ds_rng = subrng(cfg.master_seed, "downsample")
        shards = [mldata.downsample(train.y, s, ds_rng) for s in shards]
    sizes = np.array([len(s) for s in shards], dtype=np.float64)

    model = cfg.model
    w0 = model.init_weights(subrng(cfg.master_seed, "init"))
    n = model.n_params
    m, sensing = _payload_m(cfg, n)
    perm = sensing.permutation() if sensing is not None else None

    weighting = cfg.weighting or protocols.DEFAULT_WEIGHTING[cfg.scheme]
    bundle = _Bundle(
        model=model,
        w0=w0,
        train=train,
        test=test,
        shards=shards,
        sizes=sizes,
        n=n,
        m=m,
        cfg_sensing=sensing,
        perm=perm,
        hyper=cfg.hyper,
        solver=cfg.solver,
        weighting=weighting,
    )

    if cfg.is_private and cfg.hyper.s is None:
        s = _calibrate(cfg, bundle)
        bundle.hyper = replace(cfg.hyper, s=s)

    if (
        cfg.scheme == "fl-cs-dp"
        and cfg.solver.lam is None
        and (bundle.hyper.sigma or 0.0) > 0.0
    ):
        # universal-threshold default matched to the decoded noise floor
        k = protocols.cohort_size(n_clients, cfg.hyper.c)
        noise_std = bundle.hyper.s * bundle.hyper.sigma / k
        lam = noise_std * np.sqrt(2.0 * np.log(m))
        bundle.solver = replace(cfg.solver, lam=lam)
    return bundle


def iter_experiment(cfg: ExperimentConfig, on_round=None):
    """Yield a RoundRecord per evaluation; numeric failures carry round context.

    ``on_round(t, state)`` is invoked after every round (tests use it to
    watch weight trajectories).
    """
    bundle = _setup(cfg)
    hp = bundle.hyper
    model, train, test = bundle.model, bundle.train, bundle.test
    n, m = bundle.n, bundle.m
    sensing, perm = bundle.cfg_sensing, bundle.perm
    n_clients = cfg.partition.n_clients
    scheme = cfg.scheme
    ratio = cfg.effective_ratio
    state = protocols.ServerState.initial(
        bundle.w0, m=m if scheme.startswith("fl-cs") else 0
    )
    records = []

    for t in range(1, hp.t_cl + 1):
        tic = time.perf_counter() if cfg.record_timing else None
        cohort = protocols.sample_clients(n_clients, hp.c, subrng(cfg.master_seed, f"sample|{t}"))
        k_round = len(cohort)
        idx = None
        if scheme.startswith("fl-rnd"):
            idx = protocols.round_index_set(n, m, subseed(cfg.master_seed, f"rndidx|{t}"))

        ring = None
        masks = [None] * k_round
        if cfg.is_private and cfg.secure_aggregation:
            ring = secagg.derive_modulus(
                protocols.mask_headroom(hp, k_round), k_round, frac_bits=cfg.frac_bits
            )
            masks = secagg.gen_masks(k_round, m, ring, subseed(cfg.master_seed, f"mask|{t}"))

        solver_iters = None
        try:
            updates = []
            for pos, k in enumerate(cohort):
                shard = bundle.shards[k]
                X, y = train.X[shard], train.y[shard]
                rng = subrng(cfg.master_seed, f"client|{t}|{k}")
                nrng = subrng(cfg.master_seed, f"noise|{t}|{k}")
                if scheme == "fl-std":
                    upd = protocols.client_update_std(model, state.w, X, y, hp, rng)
                elif scheme == "fl-std-dp":
                    upd = protocols.client_update_std_dp(
                        model, state.w, X, y, hp, k_round, rng, nrng, masks[pos], ring
                    )
                elif scheme == "fl-cs":
                    upd = protocols.client_update_cs(model, state.w, X, y, hp, sensing, rng, perm=perm)
                elif scheme == "fl-cs-dp":
                    upd = protocols.client_update_cs_dp(
                        model, state.w, X, y, hp, sensing, k_round, rng, nrng, masks[pos], ring, perm=perm
                    )
                elif scheme == "fl-rnd":
                    upd = protocols.client_update_rnd(model, state.w, X, y, hp, idx, rng)
                elif scheme == "fl-rnd-dp":
                    upd = protocols.client_update_rnd_dp(
                        model, state.w, X, y, hp, idx, k_round, rng, nrng, masks[pos], ring
                    )
                elif scheme == "fl-freq":
                    upd = protocols.client_update_freq(model, state.w, X, y, hp, m, rng)
                elif scheme == "fl-freq-dp":
                    upd = protocols.client_update_freq_dp(
                        model, state.w, X, y, hp, m, k_round, rng, nrng, masks[pos], ring
                    )
                updates.append(upd)

            weights = protocols.make_weights(bundle.sizes[cohort], bundle.weighting)
            if scheme == "fl-std":
                state = protocols.server_round_std(state, updates, weights)
            elif scheme == "fl-std-dp":
                state = protocols.server_round_std_dp(state, updates, ring)
            elif scheme == "fl-cs":
                state, report = protocols.server_round_cs(
                    state, updates, hp, sensing, bundle.solver, weights, perm=perm
                )
                solver_iters = report.iterations
            elif scheme == "fl-cs-dp":
                state, report = protocols.server_round_cs_dp(
                    state, updates, hp, sensing, bundle.solver, ring, perm=perm
                )
                solver_iters = report.iterations
            elif scheme == "fl-rnd":
                state = protocols.server_round_rnd(state, updates, idx, weights)
            elif scheme == "fl-rnd-dp":
                state = protocols.server_round_rnd_dp(state, updates, idx, ring)
            elif scheme == "fl-freq":
                state = protocols.server_round_freq(state, updates, weights)
            elif scheme == "fl-freq-dp":
                state = protocols.server_round_freq_dp(state, updates, ring)
        except NumericFailure as exc:
            raise NumericFailure(f"round {t}: {exc}") from exc

        if on_round is not None:
            on_round(t, state)

        if t % cfg.eval_every == 0 or t == hp.t_cl:
            wallclock = (time.perf_counter() - tic) * 1e3 if tic is not None else 0.0
            report = evaluate(model, state.w, test.X, test.y)
            eps = None
            if cfg.is_private and (hp.sigma or 0.0) > 0.0:
                eps = _epsilon_cached(hp.sigma, hp.c, t, cfg.delta)
            cost = bandwidth_cost(ratio, n, t, hp.c)
            rec = RoundRecord(
                round=t,
                scheme=scheme,
                r=ratio,
                epsilon=eps,
                cumulative_cost_bits=cost,
                cost_1e6=cost / 1e6,
                accuracy=report.accuracy,
                balanced_accuracy=report.balanced_accuracy,
                auroc=report.auroc,
                wallclock_ms=wallclock,
                solver_iterations=solver_iters,
            )
            records.append(rec)
            yield rec
            if cfg.early_stop is not None:
                stop, _ = early_stop(records, cfg.early_stop.patience, cfg.early_stop.metric)
                if stop:
                    return


def run_experiment(cfg: ExperimentConfig, on_round=None):
    """Execute all rounds; returns the list of RoundRecords."""
    return list(iter_experiment(cfg, on_round=on_round))
