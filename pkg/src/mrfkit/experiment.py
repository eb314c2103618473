"""End-to-end experiment: simulate, acquire, reconstruct with each method,
estimate maps, and score them against the ground truth.

The configuration is one JSON document validated against EXPERIMENT_SCHEMA
(unknown keys are rejected). Every stage writes its artifact into the output
directory, so re-running any stage through the CLI on those files gives the
same results.
"""

import csv
import json
from pathlib import Path

import jsonschema
import numpy as np

from . import bundle
from . import forward_model as fm
from . import inference, phantom, solver, subspace
from .epg import GridRange, GridSpec, build_dictionary, default_schedule, save_dictionary
from .tvprox import TvConfig

METHODS = ("bpi", "lr", "lrtv")

EXPERIMENT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "size": {
            "type": "array",
            "items": {"type": "integer", "minimum": 8},
            "minItems": 2,
            "maxItems": 2,
        },
        "frames": {"type": "integer", "minimum": 1},
        "rank": {"type": "integer", "minimum": 1},
        "coils": {"type": "integer", "minimum": 1},
        "coil_kind": {"type": "string", "enum": ["uniform", "gaussian-ring"]},
        "accel": {"type": "number", "minimum": 1},
        "kspace_noise": {"type": "number", "minimum": 0},
        "k_max": {"type": ["integer", "null"], "minimum": 1},
        "dict": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "t1": {"type": "string"},
                "t2": {"type": "string"},
            },
            "required": ["t1", "t2"],
        },
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "alpha_max_deg": {"type": "number", "exclusiveMinimum": 0},
                "period": {"type": "integer", "minimum": 1},
                "tr_ms": {"type": "number", "exclusiveMinimum": 0},
                "te_ms": {"type": "number", "exclusiveMinimum": 0},
                "tinv_ms": {"type": "number", "minimum": 0},
            },
        },
        "phantom": {
            "oneOf": [
                {"type": "string", "enum": ["default", "offgrid"]},
                {"type": "array", "items": {"type": "object"}},
            ]
        },
        "recon": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lambda": {"type": "number", "minimum": 0},
                "iters": {"type": "integer", "minimum": 1},
                "stop_rel_change": {"type": "number", "minimum": 0},
                "tv_variant": {"type": "string", "enum": ["isotropic", "anisotropic"]},
                "tv_iters": {"type": "integer", "minimum": 1},
                "tv_tol": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sigma": {"type": "number", "minimum": 0},
                "augment": {"type": "integer", "minimum": 1},
                "epochs": {"type": "integer", "minimum": 0},
                "batch_size": {"type": "integer", "minimum": 1},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "hidden": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 1},
                    "minItems": 2,
                    "maxItems": 2,
                },
                "output_relu": {"type": "boolean"},
            },
        },
    },
}

DEFAULT_EXPERIMENT = {
    "seed": 1234,
    "size": [64, 64],
    "frames": 200,
    "rank": 5,
    "coils": 4,
    "coil_kind": "gaussian-ring",
    "accel": 8.0,
    "kspace_noise": 0.005,
    "k_max": None,
    "dict": {"t1": "100:50:4000", "t2": "20:10:600"},
    "schedule": {
        "alpha_max_deg": 70.0,
        "period": 250,
        "tr_ms": 10.0,
        "te_ms": 1.908,
        "tinv_ms": 18.0,
    },
    "phantom": "default",
    "recon": {
        "lambda": 1e-3,
        "iters": 50,
        "stop_rel_change": 1e-4,
        "tv_variant": "isotropic",
        "tv_iters": 50,
        "tv_tol": 1e-6,
    },
    "train": {
        "sigma": 0.002,
        "augment": 100,
        "epochs": 30,
        "batch_size": 512,
        "learning_rate": 0.05,
        "hidden": [300, 300],
        "output_relu": False,
    },
}


def _merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            merged[key] = _merge(base[key], value)
        else:
            merged[key] = value
    return merged


def resolve_config(config: dict | None) -> dict:
    """Validate a (partial) configuration and fill in the shipped defaults."""
    config = config or {}
    jsonschema.validate(config, EXPERIMENT_SCHEMA)
    merged = _merge(DEFAULT_EXPERIMENT, config)
    jsonschema.validate(merged, EXPERIMENT_SCHEMA)
    return merged


def write_pgm16(path, img: np.ndarray, vmax: float) -> None:
    """16-bit binary PGM preview, values clipped to [0, vmax]."""
    scaled = np.clip(np.asarray(img, dtype=np.float64) / vmax, 0.0, 1.0)
    data = np.round(scaled * 65535).astype(">u2")
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())


def write_metrics_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "param", "rmse", "mae", "nrmse"])
        for row in rows:
            writer.writerow(
                [
                    row["method"],
                    row["param"],
                    repr(row["rmse"]),
                    repr(row["mae"]),
                    repr(row["nrmse"]),
                ]
            )


def run_experiment(config: dict | None, out_dir) -> dict:
    """Run the full three-method comparison; returns {method: score dict}."""
    cfg = resolve_config(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "exp_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")

    h, w = cfg["size"]
    seed = cfg["seed"]
    sched_cfg = cfg["schedule"]
    schedule = default_schedule(
        cfg["frames"],
        alpha_max_deg=sched_cfg["alpha_max_deg"],
        period=sched_cfg["period"],
        tr_ms=sched_cfg["tr_ms"],
        te_ms=sched_cfg["te_ms"],
        tinv_ms=sched_cfg["tinv_ms"],
    )

    grid = GridSpec(
        t1=GridRange.parse(cfg["dict"]["t1"]), t2=GridRange.parse(cfg["dict"]["t2"])
    )
    dictionary = build_dictionary(grid, schedule, k_max=cfg["k_max"])
    save_dictionary(dictionary, out / "dict.mrfb")

    basis = subspace.learn_subspace(dictionary, cfg["rank"])
    subspace.save_basis(basis, out / "basis.mrfb")

    if cfg["phantom"] == "default":
        spec = phantom.default_head_spec()
    elif cfg["phantom"] == "offgrid":
        spec = phantom.offgrid_head_spec()
    else:
        spec = cfg["phantom"]
    gt = phantom.make_phantom(h, w, spec)
    phantom.save_ground_truth(gt, out / "gt.mrfb")

    series = phantom.synthesize_timeseries(gt, schedule, k_max=cfg["k_max"])
    pattern = fm.make_vd_cartesian_masks(h, w, cfg["frames"], cfg["accel"], seed)
    coils = fm.make_coil_maps(h, w, cfg["coils"], kind=cfg["coil_kind"])
    frames = series.T.reshape(cfg["frames"], h, w).astype(np.complex128)
    data = fm.apply_frames(frames, coils, pattern)
    if cfg["kspace_noise"] > 0:
        rng = np.random.default_rng(seed + 1)
        noise = rng.normal(0.0, cfg["kspace_noise"], (2,) + data.y.shape)
        data.y += (noise[0] + 1j * noise[1]) * pattern.masks[:, None, :, :]
    fm.save_kspace(data, coils, out / "kspace.mrfb", extra_meta={"kspace_noise": cfg["kspace_noise"]})

    recon_cfg = cfg["recon"]
    tv = TvConfig(
        variant=recon_cfg["tv_variant"],
        max_iters=recon_cfg["tv_iters"],
        dual_gap_tol=recon_cfg["tv_tol"],
    )
    recons = {}
    for mode in METHODS:
        solver_cfg = solver.SolverConfig(
            mode=mode,
            lam=recon_cfg["lambda"] if mode == "lrtv" else 0.0,
            max_outer_iters=recon_cfg["iters"],
            stop_rel_change=recon_cfg["stop_rel_change"],
            tv=tv,
        )
        x, trace = solver.solve(data, basis, coils, pattern, solver_cfg)
        recons[mode] = x
        solver.save_reconstruction(x, basis, (h, w), out / f"x_{mode}.mrfb")
        trace.write_csv(out / f"trace_{mode}.csv")

    train_cfg_in = cfg["train"]
    train_cfg = inference.TrainConfig(
        noise_sigma=train_cfg_in["sigma"],
        augment_factor=train_cfg_in["augment"],
        epochs=train_cfg_in["epochs"],
        batch_size=train_cfg_in["batch_size"],
        learning_rate=train_cfg_in["learning_rate"],
        seed=seed,
    )
    t1_range = (float(dictionary.t1_ms.min()), float(dictionary.t1_ms.max()))
    t2_range = (float(dictionary.t2_ms.min()), float(dictionary.t2_ms.max()))
    net = inference.MrfNet.initialize(
        cfg["rank"],
        t1_range,
        t2_range,
        hidden=tuple(train_cfg_in["hidden"]),
        seed=seed,
        output_relu=train_cfg_in["output_relu"],
    )
    training_data = inference.make_training_set(dictionary, basis, train_cfg)
    net, _history = inference.train(net, training_data, train_cfg)
    inference.save_net(net, train_cfg, out / "net.mrfb")

    rows = []
    scores = {}
    for mode in METHODS:
        aligned = subspace.phase_align(recons[mode])
        maps = inference.infer(net, aligned)
        t1_map = maps[:, 0].reshape(h, w)
        t2_map = maps[:, 1].reshape(h, w)
        bundle.write_bundle(
            out / f"maps_{mode}.mrfb",
            {"t1": t1_map.astype(np.float32), "t2": t2_map.astype(np.float32)},
            meta={"kind": "maps", "method": mode, "estimator": "net"},
        )
        write_pgm16(out / f"t1_{mode}.pgm", t1_map, vmax=t1_range[1])
        write_pgm16(out / f"t2_{mode}.pgm", t2_map, vmax=t2_range[1])

        score = phantom.score_maps(t1_map, t2_map, gt)
        scores[mode] = score
        for param in ("t1", "t2"):
            rows.append(
                {
                    "method": mode,
                    "param": param.upper(),
                    "rmse": score[param]["rmse"],
                    "mae": score[param]["mae"],
                    "nrmse": score[param]["nrmse"],
                }
            )

    write_metrics_csv(out / "metrics.csv", rows)
    return scores
