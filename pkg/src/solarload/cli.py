"""``solarload`` command line.

Every subcommand prints an aligned table and, with ``--json``, the same
report as versioned JSON.  Stochastic subcommands require ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import io, pipeline, stats
from .radiometry import RadiometricScene, melanin_index_from_mu
from .scene import ConfigError, Schedule, SensorNoise, SunConfig, ThermalFrame, make_face, render_sequence
from .transient import InsufficientData, correct_core, fit_cooling

REPORT_SCHEMA = "solarload.report/1"
SWEEP_RANGE = (500.0, 8000.0)


class CliError(Exception):
    pass


def _emit(args, report, table):
    report = {"schema": REPORT_SCHEMA, **report}
    if getattr(args, "out_json", None):
        io.write_json(args.out_json, report)
    if args.json:
        print(json.dumps(report, indent=2, sort_keys=True, default=_plain))
    else:
        print(table)


def _plain(x):
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x).__name__)


def _kv_table(d):
    return stats.format_table(["field", "value"], [[k, v] for k, v in d.items()])


def _writable_dir(path):
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {p}: {exc}") from None
    probe = p / ".write_probe"
    try:
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise CliError(f"output directory {p} is not writable: {exc}") from None
    return p


def _dataset(path):
    try:
        return io.Dataset(path)
    except (OSError, io.FormatError) as exc:
        raise CliError(str(exc)) from None


# ------------------------------------------------------------ simulate

def cmd_simulate(args):
    out = _writable_dir(args.out)
    schedule = Schedule(load_s=args.load_s, cool_s=args.cool_s, steady_s=args.steady_s, fps=args.fps_hz)
    sun = SunConfig(args.e_sun_wm2)
    if args.no_noise:
        noise = SensorNoise.off(args.seed)
    else:
        noise = SensorNoise(read_sigma=args.read_noise_c, drift_step_sigma=args.drift_step_c,
                            recalib_period=args.recalib_period_frames, recalib_spike=args.recalib_spike_c,
                            seed=args.seed)
    if args.melanin_sweep:
        if args.melanin_sweep < 2:
            raise CliError("--melanin-sweep needs at least 2 levels")
        levels = np.geomspace(*SWEEP_RANGE, args.melanin_sweep)
        targets = [(out / f"mu_{i:02d}", float(mu)) for i, mu in enumerate(levels)]
    else:
        targets = [(out, args.melanin_mu_1m)]
    scene = RadiometricScene.from_celsius(args.ambient_c, args.ambient_c, args.emissivity, args.tau_atm)
    rows = []
    for path, mu in targets:
        face = make_face(args.preset, melanin_mu=mu, core_temp=args.core_temp_c, seed=args.seed,
                         width=args.width_px, height=args.height_px, heterogeneity_c=args.heterogeneity_c,
                         ambient_c=args.ambient_c, mesh_path=args.mesh_path)
        seq, truth = render_sequence(face, sun, noise, schedule, scene=scene)
        io.write_dataset(path, face, seq, truth, schedule=schedule, sun=sun, noise=noise, seed=args.seed,
                         radiometry={"emissivity": scene.emissivity, "tau_atm": scene.tau_atm,
                                     "t_amb_k": scene.t_amb, "t_atm_k": scene.t_atm})
        rows.append({"path": str(path), "melanin_mu_1_m": mu, "melanin_index": melanin_index_from_mu(mu),
                     "frames": len(seq), "peak_bias_c": float(truth.bias.max())})
    table = stats.format_table(["path", "mu_1_m", "mi", "frames", "peak_bias_c"],
                               [[r["path"], r["melanin_mu_1_m"], r["melanin_index"], r["frames"], r["peak_bias_c"]]
                                for r in rows])
    _emit(args, {"command": "simulate", "datasets": rows}, table)


# ------------------------------------------------------------ fit-transient

def cmd_fit_transient(args):
    try:
        trace = io.read_trace(args.trace)
    except OSError as exc:
        raise CliError(f"cannot read trace: {exc}") from None
    if args.window_s is not None:
        trace = trace.truncate(args.window_s)
    fit = fit_cooling(trace, branch=args.branch, min_window_s=args.min_window_s)
    report = fit.as_dict()
    report["t_core_star_c"] = correct_core(fit)
    report["effective_window_s"] = trace.effective_window()
    _emit(args, {"command": "fit-transient", "fit": report}, _kv_table(report))


# ------------------------------------------------------------ correct

def cmd_correct(args):
    ds = _dataset(args.dataset)
    face = ds.face()
    model = None
    if args.method == "learned":
        if not args.model:
            raise ConfigError("--method learned needs --model")
        from .regressor import load_model
        model = load_model(args.model)
    try:
        temps = ds.frame(args.frame)
    except IndexError as exc:
        raise CliError(str(exc)) from None
    frame = ThermalFrame(temps, float(ds.times[args.frame]), background_mask=face.background_mask)
    reference = face.ambient_c if args.background_reference else None
    from .spatial import correct_frame

    # warm-up call so imports and allocator effects do not count
    correct_frame(frame, face, model, args.method, reference_c=reference)
    t0 = time.perf_counter()
    res = correct_frame(frame, face, model, args.method, reference_c=reference)
    kernel_ms = 1e3 * (time.perf_counter() - t0)

    baseline, _ = ds.truth
    fg = face.foreground
    report = {"frame": args.frame, "method": args.method, "beta_f_hat_c": res.beta_f,
              "facial_bias_c": res.facial_bias, "mean_before_c": res.mean_before, "mean_after_c": res.mean_after,
              "baseline_mean_c": float(baseline[fg].mean()), "offset_c": res.offset, "clamped": res.clamped,
              "kernel_ms": kernel_ms}
    if args.out:
        out = _writable_dir(args.out)
        io.write_frame(out / "corrected.bin", res.corrected)
        io.write_json(out / "report.json", {"schema": REPORT_SCHEMA, **report})
    _emit(args, {"command": "correct", **report}, _kv_table(report))


# ------------------------------------------------------------ train

def cmd_train(args):
    from .regressor import build_crop_dataset, save_model, train_regressor

    if args.dataset:
        data = pipeline.crops_from_datasets([_dataset(p) for p in args.dataset], args.frames_per_identity,
                                            args.seed)
    else:
        data = build_crop_dataset(args.identities, args.frames_per_identity, args.seed)
    ids = data.identities
    if len(ids) <= args.val_identities:
        raise CliError(f"need more than {args.val_identities} identities, got {len(ids)}")
    rng = np.random.default_rng(args.seed)
    val = set(rng.choice(ids, size=args.val_identities, replace=False).tolist())
    train_ids = [i for i in ids if i not in val]
    log = (lambda s: print(s, file=sys.stderr)) if args.verbose else None
    model, rep = train_regressor(data.where_identity(train_ids), data.where_identity(val), epochs=args.epochs,
                                 seed=args.seed, lr=args.lr, batch_size=args.batch_size, log=log)
    if args.out:
        save_model(model, args.out)
    report = {"model": args.out, "epochs": rep.epochs, "best_epoch": rep.best_epoch,
              "val_mae_c": model.metadata["val_mae_c"], "train_samples": int(np.isin(data.identity, train_ids).sum()),
              "val_identities": sorted(int(i) for i in val)}
    table = stats.format_table(["epoch", "train_mse", "val_mae_c"],
                               [[i + 1, a, b] for i, (a, b) in enumerate(zip(rep.train_loss, rep.val_mae))])
    _emit(args, {"command": "train", **report, "history": {"train_mse": rep.train_loss, "val_mae_c": rep.val_mae}},
          table + "\n\n" + _kv_table({k: v for k, v in report.items() if k != "val_identities"}))


# ------------------------------------------------------------ evaluate

def cmd_evaluate(args):
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in pipeline.METHODS]
    if bad:
        raise CliError(f"unknown method(s) {bad}; choose from {', '.join(pipeline.METHODS)}")
    model = None
    if "learned" in methods:
        if not args.model:
            raise ConfigError("method 'learned' needs --model")
        from .regressor import load_model
        model = load_model(args.model)
    datasets = [_dataset(p) for p in args.dataset]

    preds = {m: [] for m in methods}
    truths, phases, error_rows = [], [], []
    transient_pred, transient_truth = [], []
    for ds in datasets:
        face = ds.face()
        frames = ds.frames
        baseline, _ = ds.truth
        truth = float(baseline[face.foreground].mean())
        mi = melanin_index_from_mu(ds.meta["face"]["melanin_mu"])
        sid = ds.path.name
        for m in methods:
            if m == "transient":
                continue
            est, _ = pipeline.facial_estimates(face, frames, m, model,
                                               reference_c=face.ambient_c if args.background_reference else None)
            preds[m].append(est)
            for ph in ("steady", "loading", "cooling"):
                sel = ds.phases == ph
                if sel.any():
                    error_rows.append((sid, mi, float(np.mean(est[sel] - truth)), f"{m}:{ph}"))
        truths.append(np.full(len(frames), truth))
        phases.append(ds.phases)
        if "transient" in methods:
            schedule = Schedule(**ds.meta["schedule"])
            seq = _SeqView(frames, ds.times)
            try:
                fit, (r, c) = pipeline.transient_estimate(seq, face, schedule, args.window_s)
            except InsufficientData as exc:
                raise CliError(f"{ds.path}: {exc}") from None
            transient_pred.append(fit.t_skin_star)
            transient_truth.append(float(baseline[r, c]))
            error_rows.append((sid, mi, fit.t_skin_star - float(baseline[r, c]), "transient:cooling"))

    rows = []
    truth_all, phase_all = np.concatenate(truths), np.concatenate(phases)
    for m in methods:
        if m == "transient":
            rows += pipeline.score(transient_pred, transient_truth, m, ["cooling"] * len(transient_pred))[:1]
        else:
            rows += pipeline.score(np.concatenate(preds[m]), truth_all, m, phase_all)
    if args.errors_csv:
        io.write_error_table(args.errors_csv, error_rows)

    equity = stats.EquityReport(threshold=args.mi_threshold)
    err = {m: np.array([r[2] for r in error_rows if r[3].startswith(m + ":")]) for m in methods}
    mis = {m: np.array([r[1] for r in error_rows if r[3].startswith(m + ":")]) for m in methods}
    for m in methods:
        if len(err[m]):
            equity.add_stage(m, err[m], mis[m])

    report = {"command": "evaluate", "datasets": [str(d.path) for d in datasets],
              "rows": [dict(zip(pipeline.ROW_HEADER, r.as_list())) for r in rows],
              "equity": json.loads(equity.to_json())}
    table = stats.format_table(pipeline.ROW_HEADER, [r.as_list() for r in rows]) + "\n\n" + equity.to_table()
    _emit(args, report, table)


class _SeqView:
    def __init__(self, temps, times):
        self.temps, self.times = temps, times


# ------------------------------------------------------------ equity

def cmd_equity(args):
    if args.errors_csv:
        table = io.read_error_table(args.errors_csv)
        report = stats.EquityReport(threshold=args.mi_threshold)
        stages = sorted(set(table["phase"])) if args.phase is None else [args.phase]
        for stage in stages:
            sel = table["phase"] == stage
            if not sel.any():
                raise CliError(f"no rows with phase {stage!r}")
            report.add_stage(stage, table["error_c"][sel], table["mi"][sel])
        source = {"errors_csv": args.errors_csv}
    else:
        if args.seed is None:
            raise CliError("simulated cohort needs --seed")
        res = pipeline.equity_cohort(n_pairs=args.cohort_pairs, seed=args.seed, irradiance=args.e_sun_wm2)
        report = res.report
        source = {"cohort_pairs": args.cohort_pairs, "seed": args.seed, "e_sun_wm2": args.e_sun_wm2}
    _emit(args, {"command": "equity", **source, "equity": json.loads(report.to_json())}, report.to_table())


# ------------------------------------------------------------ parser

def build_parser():
    p = argparse.ArgumentParser(prog="solarload", description="Solar-loading bias simulation and correction "
                                "for thermal skin-temperature measurements.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--json", action="store_true", help="print the report as JSON instead of a table")
        sp.add_argument("--out-json", metavar="PATH", help="also write the JSON report to PATH")

    s = sub.add_parser("simulate", help="render a synthetic loading/cooling session to a dataset directory")
    s.add_argument("--out", required=True, help="output dataset directory")
    s.add_argument("--seed", type=int, required=True, help="seed for face texture and sensor noise")
    s.add_argument("--preset", choices=("ellipsoid", "mesh"), default="ellipsoid", help="face geometry")
    s.add_argument("--mesh-path", help="OBJ mesh for --preset mesh")
    s.add_argument("--melanin-mu-1m", type=float, default=1500.0, help="epidermal melanin absorption (1/m)")
    s.add_argument("--melanin-sweep", type=int, default=0, metavar="N",
                   help="write N datasets with melanin log-spaced over 500-8000 1/m")
    s.add_argument("--core-temp-c", type=float, default=37.0, help="core temperature (degC)")
    s.add_argument("--e-sun-wm2", type=float, default=1000.0, help="solar irradiance (W/m^2)")
    s.add_argument("--load-s", type=float, default=300.0, help="sun exposure duration (s)")
    s.add_argument("--cool-s", type=float, default=300.0, help="shade/cooling duration (s)")
    s.add_argument("--steady-s", type=float, default=0.0, help="unloaded lead-in before exposure (s)")
    s.add_argument("--fps-hz", type=float, default=1.0, help="frame rate (Hz)")
    s.add_argument("--width-px", type=int, default=160, help="frame width (px)")
    s.add_argument("--height-px", type=int, default=120, help="frame height (px)")
    s.add_argument("--ambient-c", type=float, default=22.0, help="ambient/background temperature (degC)")
    s.add_argument("--heterogeneity-c", type=float, default=0.2, help="baseline skin texture std (degC)")
    s.add_argument("--emissivity", type=float, default=0.98, help="skin emissivity (dimensionless)")
    s.add_argument("--tau-atm", type=float, default=1.0, help="atmospheric transmittance (dimensionless)")
    s.add_argument("--read-noise-c", type=float, default=0.1, help="per-pixel read noise std (degC)")
    s.add_argument("--drift-step-c", type=float, default=0.01, help="offset random-walk step std (degC/frame)")
    s.add_argument("--recalib-period-frames", type=int, default=120, help="frames between recalibrations")
    s.add_argument("--recalib-spike-c", type=float, default=1.0, help="offset spike after recalibration (degC)")
    s.add_argument("--no-noise", action="store_true", help="render noiseless frames")
    common(s)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit-transient", help="transient correction: fit a cooling trace CSV (time_s,temp_c[,weight])")
    f.add_argument("--trace", required=True, help="trace CSV path")
    f.add_argument("--window-s", type=float, help="fit only the first WINDOW seconds (s)")
    f.add_argument("--min-window-s", type=float, default=30.0, help="minimum effective window (s)")
    f.add_argument("--branch", choices=("cooling", "heating"), default="cooling", help="exponential branch")
    common(f)
    f.set_defaults(func=cmd_fit_transient)

    c = sub.add_parser("correct", help="single-frame correction: correct one frame without temporal context")
    c.add_argument("--dataset", required=True, help="dataset directory")
    c.add_argument("--frame", type=int, required=True, help="frame index")
    c.add_argument("--method", choices=("linear", "learned"), default="linear", help="correction method")
    c.add_argument("--model", help="regressor model file (for --method learned)")
    c.add_argument("--background-reference", action="store_true",
                   help="remove the common offset measured on the background wall (known ambient degC)")
    c.add_argument("--out", help="directory for corrected.bin (float32 LE degC) and report.json")
    common(c)
    c.set_defaults(func=cmd_correct)

    t = sub.add_parser("train", help="train the single-shot bias regressor")
    t.add_argument("--seed", type=int, required=True, help="seed for splits, initialisation and augmentation")
    t.add_argument("--dataset", nargs="*", help="dataset directories, one identity each")
    t.add_argument("--identities", type=int, default=16, help="simulated identities when no --dataset is given")
    t.add_argument("--frames-per-identity", type=int, default=30, help="crops sampled per identity")
    t.add_argument("--val-identities", type=int, default=4, help="identities held out for model selection")
    t.add_argument("--epochs", type=int, default=20, help="training epochs")
    t.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
    t.add_argument("--batch-size", type=int, default=32, help="minibatch size (crops)")
    t.add_argument("--out", help="model file to write")
    t.add_argument("--verbose", action="store_true", help="log per-epoch progress to stderr")
    common(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="MAE/RMSE/MAPE per phase and method, plus the equity split")
    e.add_argument("--dataset", nargs="+", required=True, help="dataset directories")
    e.add_argument("--methods", default="uncorrected,linear,transient",
                   help="comma list from uncorrected, linear, learned, transient")
    e.add_argument("--model", help="regressor model file (for learned)")
    e.add_argument("--window-s", type=float, help="cooling window for the transient method (s)")
    e.add_argument("--background-reference", action="store_true", help="use the background wall as reference")
    e.add_argument("--mi-threshold", type=float, default=45.0, help="dark/light melanin index split")
    e.add_argument("--errors-csv", help="write per-subject signed errors (subject_id,mi,error_c,phase)")
    e.add_argument("--seed", type=int, help="recorded for reproducibility; evaluation itself is deterministic")
    common(e)
    e.set_defaults(func=cmd_evaluate)

    q = sub.add_parser("equity", help="dark/light bias comparison with KS and paired t tests")
    q.add_argument("--errors-csv", help="error table CSV (subject_id,mi,error_c,phase)")
    q.add_argument("--phase", help="only use rows with this phase label")
    q.add_argument("--mi-threshold", type=float, default=45.0, help="dark/light melanin index split")
    q.add_argument("--cohort-pairs", type=int, default=12, help="simulated dark/light pairs without --errors-csv")
    q.add_argument("--e-sun-wm2", type=float, default=1000.0, help="solar irradiance for the cohort (W/m^2)")
    q.add_argument("--seed", type=int, help="cohort seed (required when simulating)")
    common(q)
    q.set_defaults(func=cmd_equity)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (CliError, ValueError, OSError, RuntimeError) as exc:
        print(f"solarload {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
