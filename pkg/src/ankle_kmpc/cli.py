"""Command-line pipeline: data generation, training, evaluation, closed-loop runs, report.

Every command reads one experiment config (TOML) and derives all randomness
from its root seed through named substreams, so reruns with the same config
and seed reproduce their outputs.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import config_hash, load_toml, packaged_path
from .errors import ConfigError, DataError, IOFailure, KmpcError, NumericsError
from .koopman import (DICTIONARY_NAMES, KoopmanModel, ObservableDictionary, evaluate_prediction,
                      fit_koopman, write_report_csv)
from .koopman.edmd import RankDeficiencyWarning
from .mpc import MpcConfig, closed_loop_run, read_run_csv, write_run_csv
from .plant import (PHASE_NAMES, AnkleState, GaitPhaseSchedule, PlantParams, ProtocolConfig,
                    ReferenceParams, TrajectoryDataset, generate_training_dataset,
                    read_dataset_csv, reference_trajectory, reference_values,
                    write_dataset_csv)

RUN_SUMMARY_HEADER = ("speed_m_s", "cycle_period_s", "trial", "rmse_deg", "cycle_rmse_mean_deg",
                      "cycle_rmse_sd_deg", "stance_rmse_deg", "swing_rmse_deg",
                      "input_violations", "angle_violations", "solve_ms_median",
                      "not_converged", "status", "log")


# ---------------------------------------------------------------------------
# experiment config
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    plant: PlantParams
    mpc: MpcConfig
    protocol: ProtocolConfig
    test_cycles: int
    dictionary: str
    embedding: int
    ridge: float
    eval_dictionaries: tuple
    eval_horizon: int
    emb_dictionary: str
    emb_lengths: tuple
    emb_cycles_per_episode: int
    emb_warmup_cycles: int
    reference: ReferenceParams
    speeds: tuple
    periods: tuple
    trials: int
    duration: float
    angle_jitter: float
    velocity_jitter: float
    source: str = ""


def _section(raw, name, path):
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"{path}: [{name}] must be a table")
    return dict(sec)


def _referenced(base, value, key, path):
    ref = Path(value)
    if not ref.is_absolute():
        ref = base / ref
    if not ref.is_file():
        raise ConfigError(f"{path}: {key} = {value!r} does not name an existing file")
    return ref


def load_experiment(path=None, seed=None) -> ExperimentConfig:
    """Parse an experiment config; the packaged default is used without ``path``."""
    path = Path(path) if path else packaged_path("experiment.toml")
    raw = load_toml(path)
    base = path.parent
    if seed is None:
        if "seed" not in raw:
            raise ConfigError(f"{path}: a root seed is required")
        seed = raw["seed"]
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"{path}: seed must be a non-negative integer, got {seed!r}")
    try:
        plant_raw = load_toml(_referenced(base, raw.get("plant", "plant.toml"), "plant", path))
        plant = PlantParams.from_dict(plant_raw.get("plant", plant_raw))
        mpc = MpcConfig.from_dict(load_toml(_referenced(base, raw.get("mpc", "mpc.toml"),
                                                        "mpc", path)))
        data = _section(raw, "data", path)
        test_cycles = int(data.pop("test_cycles", 30))
        protocol = ProtocolConfig.from_dict(data)
        model = _section(raw, "model", path)
        ev = _section(raw, "evaluation", path)
        emb = _section(raw, "embedding_study", path)
        runs = _section(raw, "runs", path)
        reference = ReferenceParams.from_dict(_section(raw, "reference", path))
        cfg = ExperimentConfig(
            seed=int(seed), plant=plant, mpc=mpc, protocol=protocol, test_cycles=test_cycles,
            dictionary=str(model.get("dictionary", "custom")),
            embedding=int(model.get("embedding", 1)), ridge=float(model.get("ridge", 0.0)),
            eval_dictionaries=tuple(ev.get("dictionaries", DICTIONARY_NAMES)),
            eval_horizon=int(ev.get("horizon_steps", protocol.samples_per_cycle - 1)),
            emb_dictionary=str(emb.get("dictionary", "trig")),
            emb_lengths=tuple(int(v) for v in emb.get("lengths", (1, 8, 50))),
            emb_cycles_per_episode=int(emb.get("cycles_per_episode", 5)),
            emb_warmup_cycles=int(emb.get("warmup_cycles", 1)),
            reference=reference,
            speeds=tuple(float(v) for v in runs.get("speeds_m_s", (0.1, 0.2, 0.3))),
            periods=tuple(float(v) for v in runs.get("cycle_periods_s", (4.0, 3.0, 2.0))),
            trials=int(runs.get("trials", 4)), duration=float(runs.get("duration_s", 60.0)),
            angle_jitter=float(runs.get("initial_angle_jitter_deg", 2.0)),
            velocity_jitter=float(runs.get("initial_velocity_jitter_deg_s", 10.0)),
            source=str(path))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for name in (cfg.dictionary, cfg.emb_dictionary, *cfg.eval_dictionaries):
        ObservableDictionary(name)
    if len(cfg.speeds) != len(cfg.periods):
        raise ConfigError(f"{path}: speeds_m_s and cycle_periods_s differ in length")
    if cfg.trials < 1 or cfg.duration <= 0 or cfg.test_cycles < 1:
        raise ConfigError(f"{path}: trials, duration_s and test_cycles must be positive")
    for period in cfg.periods:
        reference_trajectory(GaitPhaseSchedule.even(period), cfg.reference,
                             cfg.protocol.sample_rate)
    return cfg


def substream_seed(root, name):
    """Integer seed of the substream ``name`` under the root seed."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, np.uint32)[0])


# ---------------------------------------------------------------------------
# file helpers
# ---------------------------------------------------------------------------

def _write_json(path, obj):
    try:
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=1, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from None


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: {exc}") from None


def _mkdir(path):
    try:
        Path(path).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IOFailure(f"cannot create directory {path}: {exc}") from None
    return Path(path)


def _file_sha256(path):
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc}") from None


def _load_dataset(path, sample_rate):
    meta_path = Path(path).with_suffix(".json")
    meta = _read_json(meta_path) if meta_path.exists() else {}
    return read_dataset_csv(path, sample_rate, meta)


def _paths(out):
    out = Path(out)
    return {
        "data": out / "data", "models": out / "models", "evaluation": out / "evaluation",
        "runs": out / "runs", "report": out / "report",
    }


def _list(text, cast=str):
    return tuple(cast(v) for v in text.split(",") if v.strip()) if text else None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _write_dataset(ds: TrajectoryDataset, path, seed, role):
    write_dataset_csv(ds, path)
    meta = dict(ds.metadata, role=role, rows=ds.n_samples, episodes=len(ds.episodes),
                substream_seed=seed)
    _write_json(Path(path).with_suffix(".json"), meta)


def cmd_generate_data(cfg: ExperimentConfig, out, cycles=None, test_cycles=None):
    """Training, held-out and walking datasets for the configured plant."""
    d = _mkdir(_paths(out)["data"])
    proto = replace(cfg.protocol, cycles=int(cycles or cfg.protocol.cycles)).validate()
    n_test = int(test_cycles or cfg.test_cycles)
    cpe = cfg.emb_cycles_per_episode
    walk_train = max(cpe, proto.cycles - proto.cycles % cpe)
    walk_test = max(cpe, n_test - n_test % cpe)
    jobs = [
        ("train", proto, d / "train.csv"),
        ("test", replace(proto, cycles=n_test).validate(), d / "test.csv"),
        ("walk_train", replace(proto, cycles=walk_train, cycles_per_episode=cpe).validate(),
         d / "walk_train.csv"),
        ("walk_test", replace(proto, cycles=walk_test, cycles_per_episode=cpe).validate(),
         d / "walk_test.csv"),
    ]
    rows = {}
    for role, protocol, path in jobs:
        seed = substream_seed(cfg.seed, f"data/{role}")
        ds = generate_training_dataset(cfg.plant, None, protocol, seed)
        _write_dataset(ds, path, seed, role)
        rows[role] = ds.n_samples
        print(f"{role:11s} {ds.n_samples:6d} rows  {len(ds.episodes):4d} episodes  -> {path}")
    return rows


def _fit(train: TrajectoryDataset, name, L, ridge, chash=""):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RankDeficiencyWarning)
        model = fit_koopman(train, ObservableDictionary(name, L), ridge, chash)
    notes = sorted({str(w.message) for w in caught})
    return model, notes


def cmd_train(cfg: ExperimentConfig, out, dataset=None, test=None, dictionary=None,
              embedding=None, ridge=None, model_path=None):
    p = _paths(out)
    dataset = Path(dataset) if dataset else p["data"] / "train.csv"
    test = Path(test) if test else p["data"] / "test.csv"
    name = dictionary or cfg.dictionary
    L = int(embedding or cfg.embedding)
    lam = cfg.ridge if ridge is None else float(ridge)
    train = _load_dataset(dataset, cfg.protocol.sample_rate)
    chash = config_hash({"dictionary": name, "embedding": L, "ridge": lam,
                         "dataset_sha256": _file_sha256(dataset)})
    model, notes = _fit(train, name, L, lam, chash)
    _mkdir(p["models"])
    model_path = Path(model_path) if model_path else p["models"] / "model.json"
    model.save(model_path)
    print(f"model {name} L={L} P={model.dictionary.P} -> {model_path}")
    for s in PHASE_NAMES.values():
        d = model.diagnostics[s]
        print(f"  {s:7s} M={d['M']:6d} residual={d['residual']:.3e} cond(G)={d['condition_number']:.3e} "
              f"rank={d['rank']}")
    print(f"  recovery rmse {model.diagnostics['recovery_rmse']:.3e}")
    for note in notes:
        print(f"  note: {note}")
    if test.exists():
        ds = _load_dataset(test, cfg.protocol.sample_rate)
        one = evaluate_prediction(model, ds, 1)
        print(f"  held-out one-step angle RMSE {one.rmse['all']:.4f} deg")
    return model


def _sweep_dictionaries(cfg, train, test, names, horizons):
    reports = []
    for name in names:
        model, _ = _fit(train, name, 1, cfg.ridge)
        for H in horizons:
            reports.append(evaluate_prediction(model, test, H))
    return reports


def _sweep_embeddings(cfg, train, test, name, lengths, horizon):
    warm = cfg.emb_warmup_cycles * cfg.protocol.samples_per_cycle
    reports = []
    for L in lengths:
        model, _ = _fit(train, name, L, cfg.ridge)
        reports.append(evaluate_prediction(model, test, horizon, cfg.protocol.samples_per_cycle,
                                           warmup=warm))
    return reports


def _print_reports(title, reports):
    print(title)
    print(f"  {'model':12s} {'H':>4s} {'PF':>8s} {'DF':>8s} {'all':>8s}  (angle RMSE, deg)")
    for r in reports:
        label = r.dictionary if r.embedding == 1 else f"{r.dictionary}-L{r.embedding}"
        print(f"  {label:12s} {r.horizon:4d} {r.rmse['PF']:8.4f} {r.rmse['DF']:8.4f} "
              f"{r.rmse['all']:8.4f}")


def cmd_evaluate(cfg: ExperimentConfig, out, model_path=None, dataset=None, test=None,
                 dictionaries=None, embeddings=None, horizons=None):
    p = _paths(out)
    d = _mkdir(p["evaluation"])
    horizons = horizons or (cfg.eval_horizon,)
    test_path = Path(test) if test else p["data"] / "test.csv"
    test_ds = _load_dataset(test_path, cfg.protocol.sample_rate)
    if model_path:
        model = KoopmanModel.load(model_path)
        if dictionaries and model.dictionary.name not in dictionaries:
            raise DataError(f"model {model_path} uses dictionary {model.dictionary.name!r}, "
                            f"not one of {list(dictionaries)}")
        if abs(model.sample_rate - test_ds.sample_rate) > 1e-9:
            raise DataError(f"model sampled at {model.sample_rate} Hz, dataset at "
                            f"{test_ds.sample_rate} Hz")
        reports = [evaluate_prediction(model, test_ds, H) for H in horizons]
        write_report_csv(reports, d / "model.csv")
        _print_reports(f"model {model_path}", reports)
        return {"model": reports}
    train = _load_dataset(Path(dataset) if dataset else p["data"] / "train.csv",
                          cfg.protocol.sample_rate)
    names = dictionaries or cfg.eval_dictionaries
    dict_reports = _sweep_dictionaries(cfg, train, test_ds, names, horizons)
    write_report_csv(dict_reports, d / "dictionaries.csv")
    _print_reports("dictionary comparison", dict_reports)
    lengths = embeddings or cfg.emb_lengths
    walk_train = _load_dataset(p["data"] / "walk_train.csv", cfg.protocol.sample_rate)
    walk_test = _load_dataset(p["data"] / "walk_test.csv", cfg.protocol.sample_rate)
    emb_reports = _sweep_embeddings(cfg, walk_train, walk_test, cfg.emb_dictionary, lengths,
                                    horizons[0])
    write_report_csv(emb_reports, d / "embedding.csv")
    _print_reports(f"embedding study ({cfg.emb_dictionary}, walking episodes)", emb_reports)
    return {"dictionaries": dict_reports, "embedding": emb_reports}


def _run_task(task):
    """One closed-loop run; executed in worker processes."""
    model = KoopmanModel.load(task["model"])
    plant = PlantParams.from_dict(task["plant"])
    mpc = MpcConfig.from_dict(task["mpc"])
    ref = ReferenceParams.from_dict(task["reference"])
    sched = GaitPhaseSchedule.even(task["period"])
    x0 = AnkleState(task["theta0"], task["theta_dot0"], 0.0)
    row = {"speed_m_s": task["speed"], "cycle_period_s": task["period"], "trial": task["trial"],
           "log": Path(task["log"]).name}
    try:
        run = closed_loop_run(plant, model, mpc, sched, ref, task["duration"], x0)
    except KmpcError as exc:
        row.update(status=f"failed: {exc}")
        return row
    write_run_csv(run, task["log"])
    s = run.summary()
    row.update({k: s[k] for k in ("cycle_rmse_mean_deg", "cycle_rmse_sd_deg", "stance_rmse_deg",
                                  "swing_rmse_deg", "input_violations", "angle_violations",
                                  "solve_ms_median", "not_converged")})
    row.update(rmse_deg=s["rmse_deg"], status="ok")
    meta = {k: task[k] for k in ("speed", "period", "trial", "seed", "duration", "theta0",
                                 "theta_dot0")}
    meta.update(log=row["log"], model_config_hash=model.config_hash,
                controller_config_hash=config_hash(task["mpc"]), summary=s)
    _write_json(Path(task["log"]).with_suffix(".json"), meta)
    return row


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def cmd_run_mpc(cfg: ExperimentConfig, out, model_path=None, trials=None, duration=None,
                speeds=None, mode=None, jobs=1, record_timing=None):
    p = _paths(out)
    model_path = Path(model_path) if model_path else p["models"] / "model.json"
    model = KoopmanModel.load(model_path)
    mpc = cfg.mpc
    if mode:
        mpc = replace(mpc, state_constraints=mode, terminal_set=mode).validate()
    if record_timing is not None:
        mpc = replace(mpc, record_timing=bool(record_timing))
    if mpc.dictionary and model.dictionary.name != mpc.dictionary:
        raise DataError(f"controller config expects a {mpc.dictionary!r} model, "
                        f"{model_path} holds {model.dictionary.name!r}")
    if mpc.embedding and model.dictionary.embedding != mpc.embedding:
        raise DataError(f"controller config expects embedding {mpc.embedding}, "
                        f"{model_path} has {model.dictionary.embedding}")
    runs_dir = _mkdir(p["runs"])
    matrix = list(zip(cfg.speeds, cfg.periods))
    if speeds:
        lookup = dict(matrix)
        missing = [s for s in speeds if s not in lookup]
        if missing:
            raise ConfigError(f"speeds {missing} are not in the run matrix {sorted(lookup)}")
        matrix = [(s, lookup[s]) for s in speeds]
    n_trials = int(trials or cfg.trials)
    tasks = []
    for speed, period in matrix:
        th_d, thd_d = reference_values(0.0, GaitPhaseSchedule.even(period), cfg.reference)
        for trial in range(1, n_trials + 1):
            seed = substream_seed(cfg.seed, f"run/{speed:g}/{trial}")
            rng = np.random.default_rng(seed)
            tasks.append({
                "model": str(model_path), "plant": cfg.plant.to_dict(), "mpc": mpc.to_dict(),
                "reference": cfg.reference.to_dict(), "speed": speed, "period": period,
                "trial": trial, "seed": seed, "duration": float(duration or cfg.duration),
                "theta0": float(th_d) + float(rng.uniform(-1, 1) * cfg.angle_jitter),
                "theta_dot0": float(thd_d) + float(rng.uniform(-1, 1) * cfg.velocity_jitter),
                "log": str(runs_dir / f"run_v{speed:g}_trial{trial}.csv"),
            })
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_task, tasks))
    else:
        rows = [_run_task(t) for t in tasks]
    try:
        with open(runs_dir / "summary.csv", "w", newline="") as fh:
            fh.write(",".join(RUN_SUMMARY_HEADER) + "\n")
            for r in rows:
                fh.write(",".join(_fmt(r.get(k, "")) for k in RUN_SUMMARY_HEADER) + "\n")
    except OSError as exc:
        raise IOFailure(f"cannot write run summary: {exc}") from None
    print(f"{'speed':>6s} {'period':>6s}  angle RMSE mean +- SD over trials (deg)")
    for speed, period in matrix:
        vals = np.array([r["rmse_deg"] for r in rows
                         if r["speed_m_s"] == speed and r.get("status") == "ok"])
        if vals.size:
            print(f"{speed:6.2f} {period:6.1f}  {vals.mean():.3f} +- {vals.std():.3f}  "
                  f"({vals.size} trials)")
    failed = [r for r in rows if r.get("status") != "ok"]
    for r in failed:
        print(f"run {r['log']}: {r['status']}", file=sys.stderr)
    if failed:
        raise NumericsError(f"{len(failed)} of {len(rows)} runs failed; "
                            "completed runs were kept")
    return rows


FATIGUE_NOTE = ("Fatigue trials are not reproduced: the simulated plant has no muscle "
                "fatigue model, so no degradation is reported.")


def cmd_report(cfg: ExperimentConfig, out, runs=None):
    p = _paths(out)
    runs_dir = Path(runs) if runs else p["runs"]
    metas = sorted(runs_dir.glob("*.json")) if runs_dir.is_dir() else []
    loaded, problems = [], []
    for mpath in metas:
        try:
            meta = _read_json(mpath)
            run = read_run_csv(runs_dir / meta["log"], meta["period"])
        except (KmpcError, KeyError, TypeError) as exc:
            problems.append(f"{mpath.name}: {exc}")
            continue
        loaded.append((meta, run))
    for msg in problems:
        print(f"skipped {msg}", file=sys.stderr)
    if not loaded:
        raise DataError(f"no runs found in {runs_dir}")
    rep = _mkdir(p["report"])
    speeds = sorted({m["speed"] for m, _ in loaded})
    lines = []

    def table(path, header, rows):
        try:
            with open(path, "w", newline="") as fh:
                fh.write(",".join(header) + "\n")
                for r in rows:
                    fh.write(",".join(_fmt(v) for v in r) + "\n")
        except OSError as exc:
            raise IOFailure(f"cannot write {path}: {exc}") from None

    track, solve, long_rows = [], [], []
    for speed in speeds:
        group = sorted(((m, r) for m, r in loaded if m["speed"] == speed),
                       key=lambda mr: mr[0]["trial"])
        rmse = np.array([r.rmse for _, r in group])
        st = np.array([r.phase_rmse(0) for _, r in group])
        sw = np.array([r.phase_rmse(1) for _, r in group])
        ms = np.concatenate([r.solve_ms for _, r in group])
        src = ";".join(m["log"] for m, _ in group)
        track.append((speed, group[0][0]["period"], len(group), float(rmse.mean()),
                      float(rmse.std()), float(st.mean()), float(sw.mean()),
                      sum(r.input_violations for _, r in group),
                      sum(r.angle_violations for _, r in group), src))
        solve.append((speed, len(ms), *(float(np.percentile(ms, q)) for q in (50, 95, 99)),
                      float(ms.max()), src))
        for m, r in group:
            for c, v in enumerate(r.cycle_rmse()):
                long_rows.append((speed, m["trial"], c + 1, float(v), m["log"]))
        lines.append(f"speed {speed:.2f} m/s (cycle {group[0][0]['period']:g} s): angle RMSE "
                     f"{rmse.mean():.3f} +- {rmse.std():.3f} deg over {len(group)} trials; "
                     f"stance {st.mean():.3f}, swing {sw.mean():.3f}; violations "
                     f"u={track[-1][7]} theta={track[-1][8]}; median solve "
                     f"{solve[-1][2]:.3f} ms")
    table(rep / "tracking.csv", ("speed_m_s", "cycle_period_s", "trials", "rmse_mean_deg",
                                 "rmse_sd_deg", "stance_rmse_deg", "swing_rmse_deg",
                                 "input_violations", "angle_violations", "sources"), track)
    table(rep / "solve_times.csv", ("speed_m_s", "steps", "p50_ms", "p95_ms", "p99_ms",
                                    "max_ms", "sources"), solve)
    table(rep / "cycle_rmse_long.csv", ("speed_m_s", "trial", "cycle", "rmse_deg", "source"),
          long_rows)
    for name in ("dictionaries", "embedding"):
        src = p["evaluation"] / f"{name}.csv"
        if src.exists():
            text = src.read_text()
            (rep / f"{name}.csv").write_text(text)
            lines.append(f"{name} table copied from {src.name}")
    lines.append(FATIGUE_NOTE)
    if problems:
        lines.append("skipped logs: " + "; ".join(problems))
    (rep / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return track


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _global_flags(parser, suppress):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=d, help="experiment config (TOML)")
    parser.add_argument("--seed", type=int, default=d, help="root seed, overrides the config")
    parser.add_argument("--out", default=argparse.SUPPRESS if suppress else "out",
                        help="output directory (default: out)")
    parser.add_argument("--jobs", type=int, default=argparse.SUPPRESS if suppress else 1,
                        help="worker processes for the run matrix")


def build_parser():
    ap = argparse.ArgumentParser(prog="ankle-kmpc", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(ap, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", parents=[common], help="simulate identification data")
    g.add_argument("--cycles", type=int, help="training gait cycles")
    g.add_argument("--test-cycles", type=int, help="held-out gait cycles")

    t = sub.add_parser("train", parents=[common], help="fit the switched Koopman model")
    t.add_argument("--dataset")
    t.add_argument("--test")
    t.add_argument("--dictionary", choices=DICTIONARY_NAMES)
    t.add_argument("--embedding", type=int)
    t.add_argument("--ridge", type=float)
    t.add_argument("--model", help="output model file")

    e = sub.add_parser("evaluate", parents=[common], help="prediction accuracy tables")
    e.add_argument("--model", help="evaluate this model file instead of sweeping")
    e.add_argument("--dataset")
    e.add_argument("--test")
    e.add_argument("--dictionaries", help="comma-separated dictionary names")
    e.add_argument("--embeddings", help="comma-separated embedding lengths")
    e.add_argument("--horizons", help="comma-separated rollout horizons (steps)")

    r = sub.add_parser("run-mpc", parents=[common], help="closed-loop run matrix")
    r.add_argument("--model")
    r.add_argument("--trials", type=int)
    r.add_argument("--duration", type=float, help="seconds per run")
    r.add_argument("--speeds", help="comma-separated subset of the configured speeds")
    r.add_argument("--mode", choices=("soft", "hard"), help="constraint handling")
    r.add_argument("--no-timing", action="store_const", const=False, dest="record_timing",
                   help="log solve times as 0 so reruns are byte-identical")

    rp = sub.add_parser("report", parents=[common], help="aggregate run logs")
    rp.add_argument("--runs", help="directory of run logs")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = load_experiment(args.config, args.seed)
        out = args.out
        if args.command == "generate-data":
            cmd_generate_data(cfg, out, args.cycles, args.test_cycles)
        elif args.command == "train":
            cmd_train(cfg, out, args.dataset, args.test, args.dictionary, args.embedding,
                      args.ridge, args.model)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, out, args.model, args.dataset, args.test,
                         _list(args.dictionaries), _list(args.embeddings, int),
                         _list(args.horizons, int))
        elif args.command == "run-mpc":
            cmd_run_mpc(cfg, out, args.model, args.trials, args.duration,
                        _list(args.speeds, float), args.mode, args.jobs, args.record_timing)
        elif args.command == "report":
            cmd_report(cfg, out, args.runs)
    except KmpcError as exc:
        print(f"ankle-kmpc: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
