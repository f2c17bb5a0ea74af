"""Command-line toolkit: simulate, fit, train, reconstruct, evaluate.

Exit codes: 0 success, 1 usage error, 2 data error, 3 solver non-convergence
(frames are still written).  Set TENSERECON_LOG=DEBUG|INFO|WARNING to change
log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import harness, lstm, pipeline, reconstruction, sensors, simulator, topology
from .errors import TenseReconError

log = logging.getLogger("tenserecon")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NOCONV = 3


def _setup_logging():
    level = os.environ.get("TENSERECON_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _resolve_topology(args, cfg) -> topology.Topology:
    path = getattr(args, "topology", None) or cfg.get("topology")
    if path:
        return topology.load_topology(path)
    return topology.build_canonical(cfg.get("strut_length_m", 0.30))


def _resolve_calibration(args, cfg) -> sensors.BendCalibration:
    path = getattr(args, "calibration", None) or cfg.get("bend_calibration")
    return sensors.load_calibration(path) if path else sensors.BendCalibration()


def _resolve_stretch_table(args, cfg) -> sensors.StretchTable:
    path = getattr(args, "stretch_table", None) or cfg.get("stretch_table")
    return sensors.load_stretch_table(path) if path else sensors.default_stretch_table()


def cmd_topology(args, cfg) -> int:
    if args.validate:
        topo = topology.load_topology(args.validate)
        violations = topology.validate(topo)
        if violations:
            for v in violations:
                print(f"violation: {v}")
            return EXIT_DATA
        print("ok")
        return EXIT_OK
    topo = topology.build_canonical(args.strut_length)
    if args.out:
        topology.save_topology(topo, args.out)
        print(f"wrote {args.out}")
    else:
        print(json.dumps(topology.to_json_dict(topo), indent=1))
    return EXIT_OK


def cmd_fit_bend(args, cfg) -> int:
    samples = []
    with open(args.data, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "dr_ratio,strain":
            raise harness.DataFormatError(
                f"bad header {header!r}; expected 'dr_ratio,strain'", line=1)
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != 2:
                raise harness.DataFormatError("expected 2 columns", line=lineno)
            try:
                samples.append((float(cells[0]), float(cells[1])))
            except ValueError as exc:
                raise harness.DataFormatError(f"non-numeric cell: {exc}",
                                              line=lineno) from exc
    cal, r2 = sensors.fit_bending_polynomial(samples)
    names = ["c5", "c4", "c3", "c2", "c1", "c0"]
    for name, c in zip(names, cal.coefficients):
        print(f"{name} = {c!r}")
    print(f"R^2 = {r2!r}")
    if args.out:
        sensors.save_calibration(cal, args.out)
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_train_lstm(args, cfg) -> int:
    data = lstm.make_stretch_dataset(
        seed=args.seed,
        noise_band=tuple(args.noise_band) if args.noise_band else None,
        window=args.window,
    )
    model, report = lstm.train(data, learning_rate=args.learning_rate,
                               epochs=args.epochs, seed=args.seed,
                               hidden_size=args.hidden_size)
    lstm.save_model(model, args.out)
    print("epoch,train_loss,val_loss")
    for ep, (tl, vl) in enumerate(zip(report.train_losses, report.val_losses)):
        print(f"{ep},{tl!r},{vl!r}")
    print(f"best epoch: {report.best_epoch}")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_simulate(args, cfg) -> int:
    topo = _resolve_topology(args, cfg)
    cal = _resolve_calibration(args, cfg)
    table = _resolve_stretch_table(args, cfg)
    scenario_path = args.scenario or cfg.get("scenario")
    if scenario_path:
        sc = simulator.load_scenario(scenario_path)
    else:
        noise = simulator.NoiseModel(seed=args.seed) if not args.no_noise \
            else simulator.NoiseModel(kind="none", seed=args.seed)
        sc = simulator.press_scenario(topo, seed=args.seed, noise=noise)
    truth, sensed = simulator.generate_session(sc, topo, cal, table)
    harness.write_sensor_csv(sensed, args.sensors_out)
    harness.export_frames(truth, args.truth_out)
    print(f"wrote {args.sensors_out} ({len(sensed)} frames)")
    print(f"wrote {args.truth_out} ({len(truth)} frames)")
    return EXIT_OK


def cmd_reconstruct(args, cfg) -> int:
    topo = _resolve_topology(args, cfg)
    cal = _resolve_calibration(args, cfg)
    model_path = args.model or cfg.get("lstm_model")
    if not model_path:
        print("error: no model given (--model or config lstm_model)", file=sys.stderr)
        return EXIT_USAGE
    model = lstm.load_model(model_path)
    frames = harness.parse_sensor_csv(args.sensors)
    opts = reconstruction.SolveOptions(prior_weight=args.prior_weight,
                                       max_iterations=args.max_iterations)
    results = pipeline.reconstruct_session(frames, topo, cal, model, opts,
                                           clamp=args.clamp)
    harness.export_frames(results, args.out)
    n_conv = sum(r.converged for r in results)
    print(f"wrote {args.out} ({len(results)} frames, {n_conv} converged)")
    if results and n_conv < len(results):
        return EXIT_NOCONV
    return EXIT_OK


def cmd_evaluate(args, cfg) -> int:
    topo = _resolve_topology(args, cfg)
    est = harness.load_frames(args.est, anchored=topo.anchored)
    truth = harness.load_frames(args.truth, anchored=topo.anchored)
    report = harness.evaluate([d["state"] for d in est],
                              [d["state"] for d in truth], topo,
                              converged_flags=[d["converged"] for d in est])
    doc = report.to_json_dict()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
        print(f"wrote {args.out}")
    print(f"node height RMSE: {report.rmse_node_height_mm:.3f} mm")
    print(f"face height RMSE: {report.rmse_face_height_mm:.3f} mm")
    print(f"system RMSE:      {report.rmse_system_mm:.3f} mm")
    print(f"converged:        {report.converged_fraction * 100.0:.1f}%")
    return EXIT_OK


def cmd_run_all(args, cfg) -> int:
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    topo = _resolve_topology(args, cfg)
    cal = _resolve_calibration(args, cfg)
    table = _resolve_stretch_table(args, cfg)

    topology.save_topology(topo, outdir / "topology.json")

    if cfg.get("scenario"):
        sc = simulator.load_scenario(cfg["scenario"])
    else:
        noise = simulator.NoiseModel(seed=args.seed) if not args.no_noise \
            else simulator.NoiseModel(kind="none", seed=args.seed)
        sc = simulator.press_scenario(topo, seed=args.seed, noise=noise)
    simulator.save_scenario(sc, outdir / "scenario.json")
    truth, sensed = simulator.generate_session(sc, topo, cal, table)
    harness.write_sensor_csv(sensed, outdir / "sensors.csv")
    harness.export_frames(truth, outdir / "truth.jsonl")
    log.info("simulated %d frames", len(sensed))

    noisy = sc.noise.kind != "none"
    model_path = outdir / "lstm.json"
    if args.model or cfg.get("lstm_model"):
        model = lstm.load_model(args.model or cfg["lstm_model"])
    else:
        noise_band = sc.noise.band if noisy else None
        data = lstm.make_stretch_dataset(seed=args.seed, noise_band=noise_band)
        model, _ = lstm.train(data, epochs=args.epochs, seed=args.seed)
    lstm.save_model(model, model_path)

    # the stretch model is learned, so its bias rides the near-unobservable
    # flex direction unless a warm-start prior bounds it; clamping is always
    # on because regime crossings overshoot the bending domain by a frame
    opts = reconstruction.SolveOptions(prior_weight=1.0)
    results = pipeline.reconstruct_session(sensed, topo, cal, model, opts,
                                           clamp=True)
    harness.export_frames(results, outdir / "frames.jsonl")
    harness.write_length_series_csv([r.state for r in results], topo,
                                    outdir / "tendon_lengths.csv")

    report = pipeline.evaluate_session(results, truth, topo)
    with open(outdir / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=1)
        fh.write("\n")
    print(f"node height RMSE: {report.rmse_node_height_mm:.3f} mm")
    print(f"face height RMSE: {report.rmse_face_height_mm:.3f} mm")
    print(f"system RMSE:      {report.rmse_system_mm:.3f} mm")
    print(f"converged:        {report.converged_fraction * 100.0:.1f}%")
    print(f"outputs in {outdir}")
    if report.converged_fraction < 1.0:
        return EXIT_NOCONV
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="tenserecon",
        description="Tensegrity shape reconstruction from tendon strain sensors.")
    p.add_argument("--config", help="JSON config referencing topology/model files")
    p.add_argument("--seed", type=int, default=0, help="global random seed")
    p.add_argument("--clamp", action="store_true",
                   help="clamp out-of-domain sensor values instead of failing")
    # the same globals are accepted after the subcommand; SUPPRESS keeps the
    # subparser from clobbering values given before it
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--clamp", action="store_true", default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command")

    sp = sub.add_parser("topology", parents=[common], help="emit or validate a topology JSON")
    sp.add_argument("--strut-length", type=float, default=0.30)
    sp.add_argument("--out")
    sp.add_argument("--validate", metavar="FILE")

    sp = sub.add_parser("fit-bend", parents=[common], help="fit the bending polynomial from CSV")
    sp.add_argument("data", help="CSV with header dr_ratio,strain")
    sp.add_argument("--out")

    sp = sub.add_parser("train-lstm", parents=[common], help="train the stretching model")
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int, default=150)
    sp.add_argument("--learning-rate", type=float, default=0.1)
    sp.add_argument("--hidden-size", type=int, default=32)
    sp.add_argument("--window", type=int, default=20)
    sp.add_argument("--noise-band", type=float, nargs=2, metavar=("LO", "HI"))

    sp = sub.add_parser("simulate", parents=[common], help="generate sensor CSV + ground truth")
    sp.add_argument("--scenario", help="scenario JSON (default: press demo)")
    sp.add_argument("--topology")
    sp.add_argument("--calibration")
    sp.add_argument("--stretch-table")
    sp.add_argument("--no-noise", action="store_true")
    sp.add_argument("--sensors-out", default="sensors.csv")
    sp.add_argument("--truth-out", default="truth.jsonl")

    sp = sub.add_parser("reconstruct", parents=[common], help="sensor CSV -> frames JSONL")
    sp.add_argument("sensors", help="sensor CSV file")
    sp.add_argument("--model", help="trained model JSON (or config lstm_model)")
    sp.add_argument("--topology")
    sp.add_argument("--calibration")
    sp.add_argument("--prior-weight", type=float, default=0.0,
                    help="warm-start prior weight for noisy streams")
    sp.add_argument("--max-iterations", type=int, default=100)
    sp.add_argument("--out", default="frames.jsonl")

    sp = sub.add_parser("evaluate", parents=[common], help="frames + truth -> metrics report")
    sp.add_argument("--est", required=True)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--topology")
    sp.add_argument("--out")

    sp = sub.add_parser("run-all", parents=[common], help="simulate + train + reconstruct + evaluate")
    sp.add_argument("--outdir", default="runall_out")
    sp.add_argument("--topology")
    sp.add_argument("--calibration")
    sp.add_argument("--stretch-table")
    sp.add_argument("--model", help="reuse a trained model instead of training")
    sp.add_argument("--epochs", type=int, default=60)
    sp.add_argument("--no-noise", action="store_true")
    return p


_COMMANDS = {
    "topology": cmd_topology,
    "fit-bend": cmd_fit_bend,
    "train-lstm": cmd_train_lstm,
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "evaluate": cmd_evaluate,
    "run-all": cmd_run_all,
}


def cli(argv=None) -> int:
    """Parse argv and run; returns the process exit code."""
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors; remap
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if not args.command:
        parser.print_help()
        return EXIT_USAGE
    cfg = {}
    try:
        cfg = _load_config(args.config)
        return _COMMANDS[args.command](args, cfg)
    except TenseReconError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except json.JSONDecodeError as exc:
        print(f"error: bad JSON: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
