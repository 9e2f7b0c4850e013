"""Command-line interface.

Subcommands: gen-scene, gen-data, fit, predict, eval, relay, plus replay
(re-run a command from its manifest).  Failures exit nonzero with a JSON
error object on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .io import (FormatError, dumps_json, read_map, read_measurements, read_model,
                 write_manifest, write_map, write_measurements, write_model, write_radio_map,
                 _write_text)
from .propagation import (Measurement, RadioMapModel, evaluate, generate_measurements,
                          measurements_to_arrays, predict_batch)
from .reconstruction import FitDivergenceError, fit_model, init_cluster, init_obstacle_map
from .relay import RelayError, RelayQuery, exhaustive_search, place_relay
from .scene import random_block_scene

DEMO_USERS = ((45.0, 155.0, 1.5), (275.0, 165.0, 1.5))


def demo_scene_path() -> Path:
    return Path(str(resources.files("vomap") / "data" / "demo_scene.txt"))


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="run configuration JSON")
    p.add_argument("--seed", type=int, help="override the configured seed")


def _point(s: Sequence[str]) -> List[float]:
    return [float(v) for v in s]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vomap", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="procedural obstacle map")
    _common(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gen-data", help="synthetic measurements over a scene")
    _common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, help="number of samples (default from config)")
    p.add_argument("--noise", type=float, help="noise sigma in dB (default from config)")

    p = sub.add_parser("fit", help="learn a model from measurements")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="model JSON")
    p.add_argument("--map-out", help="fitted obstacle map (default: <out stem>.map.txt)")
    p.add_argument("--grid-from", help="take the grid from this obstacle-map file")

    p = sub.add_parser("predict", help="attenuation over an RX lattice or a link list")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--tx", nargs=3, metavar=("X", "Y", "Z"))
    g.add_argument("--data", help="measurement CSV whose links are predicted")
    p.add_argument("--rx-height", type=float, help="lattice RX height (default from config)")

    p = sub.add_parser("eval", help="MAE/NMAE of a model on measurements")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("relay", help="place a UAV relay between two users")
    _common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model")
    src.add_argument("--scene", help="obstacle map; path loss from config")
    src.add_argument("--demo", action="store_true", help="packaged demo scene and users")
    p.add_argument("--p1", nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("--p2", nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("--exhaustive", choices=("2D", "3D"), help="lattice scan instead")
    p.add_argument("--out", required=True)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    return ap


def _config(args) -> RunConfig:
    return load_config(args.config).with_seed(args.seed)


def _manifest(args, argv, cfg: RunConfig, inputs, outputs):
    for out in outputs:
        write_manifest(out, args.command, {"argv": list(argv), "config": cfg.to_dict()},
                       cfg.seed, inputs, outputs)


def cmd_gen_scene(args, argv):
    cfg = _config(args)
    H = random_block_scene(cfg.grid, cfg.scene, cfg.seed)
    write_map(args.out, H)
    _manifest(args, argv, cfg, [], [args.out])
    return {"out": args.out, "coverage": float(np.mean(H.heights > 0))}


def cmd_gen_data(args, argv):
    cfg = _config(args)
    H = read_map(args.scene)
    n = args.n if args.n is not None else cfg.n_samples
    noise = args.noise if args.noise is not None else cfg.noise_sigma
    model = RadioMapModel(H, cfg.path_loss, cfg.vogler, eccentricity=cfg.eccentricity)
    data = generate_measurements(H, cfg.path_loss, cfg.vogler, n, noise, cfg.seed,
                                 cfg.sampling, model)
    write_measurements(args.out, data)
    _manifest(args, argv, cfg, [args.scene], [args.out])
    return {"out": args.out, "count": len(data)}


def cmd_fit(args, argv):
    cfg = _config(args)
    data = read_measurements(args.data)
    grid = read_map(args.grid_from).grid if args.grid_from else cfg.grid
    fcfg = cfg.fit
    if fcfg.seed != cfg.seed:
        import dataclasses
        fcfg = dataclasses.replace(fcfg, seed=cfg.seed)
    links, _ = measurements_to_arrays(data)
    clusters = init_cluster(data, fcfg.cluster_iterations)
    H0 = init_obstacle_map((links, clusters.labels), grid, fcfg)
    try:
        res = fit_model(data, H0, fcfg, cfg.vogler)
    except FitDivergenceError as exc:
        raise RuntimeError(str(exc)) from None
    map_out = args.map_out or str(Path(args.out).with_suffix("")) + ".map.txt"
    training = {"loss": res.loss, "epochs": res.epochs_run, "optimizer": res.optimizer,
                "samples": len(data)}
    write_model(args.out, res.model, map_out, training)
    inputs = [args.data] + ([args.grid_from] if args.grid_from else [])
    _manifest(args, argv, cfg, inputs, [args.out, map_out])
    return {"out": args.out, "map": map_out, "loss": res.loss}


def cmd_predict(args, argv):
    cfg = _config(args)
    model = read_model(args.model)
    if args.data:
        data = read_measurements(args.data)
        links, _ = measurements_to_arrays(data)
        pred = predict_batch(links, model)
        write_measurements(args.out, [Measurement(m.link, float(v)) for m, v in zip(data, pred)])
        _manifest(args, argv, cfg, [args.model, args.data], [args.out])
        return {"out": args.out, "count": len(data)}
    tx = np.array(_point(args.tx))
    rx_h = args.rx_height if args.rx_height is not None else cfg.sampling.rx_height
    grid = model.H.grid
    X, Y = grid.cell_centers()
    rx = np.column_stack([X.ravel(), Y.ravel(), np.full(X.size, rx_h)])
    ok = np.hypot(*(rx[:, :2] - tx[:2]).T) > 0
    values = np.full(X.size, np.nan)
    links = np.column_stack([np.tile(tx, (ok.sum(), 1)), rx[ok]])
    values[ok] = predict_batch(links, model)
    meta = {"quantity": "attenuation_db", "tx": tx.tolist(), "rx_height": rx_h,
            "indicator_mode": model.indicator_mode}
    write_radio_map(args.out, grid, values.reshape(grid.shape), meta)
    _manifest(args, argv, cfg, [args.model], [args.out])
    return {"out": args.out}


def cmd_eval(args, argv):
    cfg = _config(args)
    model = read_model(args.model)
    m = evaluate(model, read_measurements(args.data))
    _write_text(args.out, dumps_json(m.as_dict()))
    _manifest(args, argv, cfg, [args.model, args.data], [args.out])
    return m.as_dict()


def cmd_relay(args, argv):
    cfg = _config(args)
    inputs = []
    if args.model:
        model = read_model(args.model)
        inputs.append(args.model)
    else:
        path = demo_scene_path() if args.demo else Path(args.scene)
        model = RadioMapModel(read_map(path), cfg.path_loss, cfg.vogler,
                              eccentricity=cfg.eccentricity)
        inputs.append(path)
    if args.p1 is None or args.p2 is None:
        if not args.demo:
            raise RelayError("--p1 and --p2 are required unless --demo is given")
        p1, p2 = DEMO_USERS
    else:
        p1, p2 = _point(args.p1), _point(args.p2)
    r = cfg.relay
    q = RelayQuery(p1, p2, r.z_min, r.z_max, r.step_v, r.step_h, r.angle_step_deg,
                   r.fixed_altitude)
    res = exhaustive_search(q, model, args.exhaustive) if args.exhaustive else place_relay(q, model)
    doc = {"method": f"exhaustive-{args.exhaustive}" if args.exhaustive else "guided",
           "position": [float(v) for v in res.position], "min_gain_db": res.min_gain,
           "channel_gain_db": res.channel_gain_db, "search_distance_m": res.search_distance,
           "double_los": res.double_los, "evaluated": res.evaluated,
           "users": [list(map(float, p1)), list(map(float, p2))]}
    _write_text(args.out, dumps_json(doc))
    _manifest(args, argv, cfg, inputs, [args.out])
    return doc


def cmd_replay(args, argv):
    doc = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    try:
        recorded = doc["config"]["argv"]
    except (KeyError, TypeError):
        raise FormatError(args.manifest, "manifest has no recorded command line") from None
    code = main(recorded)
    if code:
        raise RuntimeError(f"replayed command exited with {code}")
    return {"replayed": recorded}


COMMANDS = {"gen-scene": cmd_gen_scene, "gen-data": cmd_gen_data, "fit": cmd_fit,
            "predict": cmd_predict, "eval": cmd_eval, "relay": cmd_relay, "replay": cmd_replay}


def _error(kind: str, message: str, **extra) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, **extra}) + "\n")
    return 2 if kind in ("format", "config", "usage") else 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return 0
        return _error("usage", "invalid command line (see usage above)")
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = COMMANDS[args.command](args, argv)
    except FormatError as exc:
        return _error("format", str(exc), path=exc.path, line=exc.line, column=exc.column)
    except ConfigError as exc:
        return _error("config", str(exc))
    except FileNotFoundError as exc:
        return _error("io", f"{exc.filename}: file not found")
    except OSError as exc:
        return _error("io", str(exc))
    except (ValueError, RuntimeError) as exc:
        return _error(type(exc).__name__, str(exc))
    sys.stdout.write(json.dumps(result, sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
