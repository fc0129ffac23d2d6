"""Command-line entry point: ``irmen <command> [options]``.

Every command writes CSV/JSON into ``io.output_dir`` atomically and exits 0
only when all outputs were written and all in-run checks passed. Failures
write ``error-<command>.json`` and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

import numpy as np
import yaml

from . import config as cfgmod
from .errors import CheckFailed, ConfigError, IrmenError, StructuralError
from .io_utils import atomic_write_json, atomic_write_text

log = logging.getLogger("irmen")

COMMANDS = ("demo-memory", "transfer-curve", "mc-error", "classify", "train", "sweep",
            "energy-report")
EXIT_CHECK = 1
EXIT_ERROR = 2


class Outputs:
    """Tracks files written by one command."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.files = []

    def text(self, name, text):
        path = self.dir / name
        atomic_write_text(path, text)
        self.files.append(str(path))
        return path

    def json(self, name, obj):
        path = self.dir / name
        atomic_write_json(path, _jsonable(obj))
        self.files.append(str(path))
        return path


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    return o


def _check(ok, message, failures):
    if not ok:
        failures.append(message)


# ---------------------------------------------------------------- commands


def cmd_demo_memory(rc, out: Outputs):
    from .experiments import memory_demo

    mc = rc.memory_config()
    trace = memory_demo(mc, rc.device_settings())
    tag = f"{rc.seed}"
    out.text(f"demo_memory-trace-{tag}.csv", trace.to_csv())
    out.text(f"demo_memory-reads-{tag}.csv", trace.reads_csv())
    summary = trace.summary()
    failures = []
    _check(trace.v_cap_preserved(), "capacitor voltage changed during a read", failures)
    if mc.temperature == 0:
        for k, d in trace.drift().items():
            _check(d < 1e-3, f"hold level {k} drifted by {d:.2e} at T=0", failures)
        tau = trace.fitted_tau()
        _check(abs(tau / trace.readout_tau - 1) < 0.01,
               f"readout time constant {tau:.3e} s vs {trace.readout_tau:.3e} s", failures)
    summary["checks_failed"] = failures
    out.json(f"demo_memory-summary-{tag}.json", summary)
    print(f"{len(trace.reads)} reads; spread per level: "
          + ", ".join(f"{k}: {v:.2e}" for k, v in trace.spreads().items()))
    return failures


def cmd_transfer_curve(rc, out: Outputs):
    from .experiments import transfer_sweep

    t = rc.experiment.transfer
    x = np.linspace(-t.max_input, t.max_input, t.points)
    sweep = transfer_sweep(t.ratios, x, temperature=t.temperature, seed=rc.seed,
                           settings=rc.device_settings())
    out.text(f"transfer_curve-ratio-{rc.seed}.csv", sweep.to_csv())
    s = sweep.summary()
    failures = []
    if t.temperature == 0:
        for r, mono in zip(t.ratios, s["monotone"]):
            _check(mono, f"transfer curve for ratio {r} is not monotone", failures)
        if t.max_input >= 1.2:
            for r, (lo, hi) in zip(t.ratios, s["endpoints"]):
                _check(abs(lo + 1) < 1e-3 and abs(hi - 1) < 1e-3,
                       f"ratio {r} endpoints {lo:.4f}, {hi:.4f} not saturated", failures)
    s["checks_failed"] = failures
    out.json(f"transfer_curve-summary-{rc.seed}.json", s)
    for r, p, e in zip(t.ratios, s["sharpness"], s["rms_residual"]):
        print(f"ratio {r:g}: soft-clamp sharpness {p:.2f}, rms residual {e:.2e}")
    return failures


def _mc_point(args):
    from .experiments import transfer_error_mc

    length, seed, iters, temp, settings = args
    return transfer_error_mc(length, iters, seed, temperature=temp, settings=settings)


def cmd_mc_error(rc, out: Outputs):
    from .experiments import nonincreasing_within

    m = rc.experiment.mc
    settings = rc.device_settings()
    work = [(float(L), int(s), m.iterations, m.temperature, settings)
            for L in m.lengths for s in m.seeds]
    results = _pool_map(_mc_point, work, rc.jobs)
    points = []
    for r in results:
        out.text(f"mc_error-L{r.length:g}-{r.seed}.csv", r.to_csv())
        points.append(r.summary())
    lengths = sorted({float(L) for L in m.lengths})
    means, sds = [], []
    for L in lengths:
        v = np.array([r.mean_abs_error for r in results if r.length == L])
        means.append(float(v.mean()))
        sds.append(float(v.std(ddof=1)) if v.size > 1 else 0.0)
    # with lengths ascending, mean error may not rise by more than 1 sd
    trend = nonincreasing_within(means, sds)
    summary = {"lengths_nm": lengths, "mean_abs_error": means, "sd_over_seeds": sds,
               "nonincreasing_in_length": trend, "points": points}
    out.json(f"mc_error-summary-{rc.seed}.json", summary)
    for L, mu, sd in zip(lengths, means, sds):
        print(f"{L:5.1f} nm: mean |error| {mu:.4f} +/- {sd:.4f}")
    return []


def _pool_map(fn, work, jobs):
    if jobs > 1 and len(work) > 1:
        from multiprocessing import get_context

        with get_context("fork").Pool(min(jobs, len(work))) as pool:
            return pool.map(fn, work, chunksize=1)
    return [fn(w) for w in work]


def _weights(rc):
    from .conn_pipeline import bundled_weights_path, import_weights

    path = rc.io.weights or bundled_weights_path()
    if not Path(path).exists():
        raise FileNotFoundError(f"weights file {path} not found; train one with 'irmen train' "
                                "or set io.weights")
    return import_weights(path)


def _dataset(rc):
    from .conn_pipeline import load_mnist

    return load_mnist(rc.io.data_dir, prefix=rc.io.data_prefix)


def cmd_classify(rc, out: Outputs):
    from .conn_pipeline import compile_network, predict

    spec = rc.network_spec()
    weights = _weights(rc)
    c = rc.experiment.classify
    data = _dataset(rc).subset(c.subset_size, c.subset_start)
    if len(data) == 0:
        raise ConfigError("classification subset is empty; check experiment.classify")
    sched = compile_network(spec, weights, bits=rc.bits())
    mode = rc.network.mode
    device = None
    if mode == "device":
        device = rc.device_settings().model(rc.device.length, rc.device.temperature)
    scores = predict(data, sched, weights, mode, device=device, timing=rc.stage_timing(),
                     seed=rc.seed, jobs=rc.jobs, offset=c.subset_start)
    pred = np.argmax(scores, axis=1)
    acc = float(np.mean(pred == data.labels))
    res = {
        "mode": mode, "n_images": len(data), "accuracy": acc,
        "bits": rc.network.bits or "unlimited",
        "length_nm": rc.device.length if mode == "device" else None,
        "temperature_K": rc.device.temperature if mode == "device" else None,
        "predictions": pred, "labels": data.labels, "scores": scores,
    }
    out.json(f"classify-{mode}-{rc.seed}.json", res)
    print(f"accuracy {acc:.4f} on {len(data)} images ({mode} mode)")
    return []


def cmd_train(rc, out: Outputs):
    from .conn_pipeline import (
        TrainConfig, compile_network, evaluate, export_weights, load_mnist, train_surrogate,
    )

    t = rc.train
    spec = rc.network_spec()
    ds = load_mnist(rc.io.data_dir, prefix=rc.io.data_prefix)
    c = rc.experiment.classify
    # images before the held-out block train the network
    train = ds.subset(c.subset_start, 0) if c.subset_start else ds
    cfg = TrainConfig(epochs=t.epochs, batch_size=t.batch_size, lr=t.lr,
                      weight_decay=t.weight_decay, seed=rc.seed, sharpness=t.sharpness,
                      limit=t.limit)
    weights = train_surrogate(spec, train, cfg,
                              on_epoch=lambda e, l: print(f"epoch {e}: loss {l:.4f}"))
    path = Path(rc.io.weights_out)
    if not path.is_absolute():
        path = out.dir / path
    export_weights(weights, path)
    out.files.append(str(path))
    held = ds.subset(c.subset_size, c.subset_start) if c.subset_start else None
    acc = None
    if held is not None and len(held):
        acc = evaluate(held, compile_network(spec, weights), weights)
        print(f"held-out ideal accuracy {acc:.4f} on {len(held)} images")
    out.json(f"train-summary-{rc.seed}.json",
              {"weights": _display_path(path, out.dir), "loss_history": weights.metadata["train"]["loss_history"],
               "heldout_accuracy": acc, "train_images": len(train) if t.limit is None
               else min(t.limit, len(train))})
    return []


def _display_path(path: Path, base: Path) -> str:
    """Path relative to the output directory when inside it, so reruns compare equal."""
    try:
        return str(path.resolve().relative_to(base.resolve()))
    except ValueError:
        return str(path)


def cmd_sweep(rc, out: Outputs):
    from .experiments import accuracy_sweep

    sc = rc.sweep_config()
    spec = rc.network_spec()
    weights = _weights(rc)
    table = accuracy_sweep(sc, spec, weights, _dataset(rc), jobs=rc.jobs,
                           settings=rc.device_settings())
    for s in sc.seeds:
        out.text(f"sweep-{sc.variable}-{s}.csv", table.to_csv(seed=s))
    out.json(f"sweep-{sc.variable}-summary.json", table.summary())
    for p in table.aggregate():
        print(f"{sc.variable}={p['value']}: accuracy {p['accuracy_mean']:.4f} "
              f"+/- {p['accuracy_sd']:.4f}, energy {p['energy_J'] * 1e12:.1f} pJ, "
              f"transfer error {p['mean_transfer_error']:.4f}")
    return []


def cmd_energy_report(rc, out: Outputs):
    from .conn_pipeline import _placeholder_weights, compile_network
    from .energy_delay import image_energy

    spec = rc.network_spec()
    try:
        weights = _weights(rc)
        weights.check(spec)
        source = "trained"
    except StructuralError:
        # no matching weights: count every OTA of every template as active
        weights = _placeholder_weights(spec, fill=1.0)
        source = "all-active"
    sched = compile_network(spec, weights, bits=rc.bits())
    models = rc.device_settings().energy_models(rc.device.length, ota=rc.ota_model(),
                                                timing=rc.stage_timing())
    rep = image_energy(sched, models)
    rep.metadata.update({"length_nm": rc.device.length, "spec": spec.to_strings(),
                         "weights": source})
    stem = f"energy_report-L{rc.device.length:g}-{rc.seed}"
    out.text(stem + ".csv", rep.to_csv())
    out.json(stem + ".json", json.loads(rep.to_json()))
    print(f"{rep.n_stages} stages, delay {rep.delay * 1e9:.1f} ns, energy "
          f"{rep.total * 1e12:.1f} pJ/image (baseline {rep.baseline_energy * 1e9:.0f} nJ, "
          f"{rep.baseline_delay * 1e9:.1f} ns; ratio {rep.energy_ratio:.0f}x)")
    return []


HANDLERS = {
    "demo-memory": cmd_demo_memory,
    "transfer-curve": cmd_transfer_curve,
    "mc-error": cmd_mc_error,
    "classify": cmd_classify,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "energy-report": cmd_energy_report,
}


# ---------------------------------------------------------------- plumbing


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="irmen", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("-c", "--config", help="YAML run configuration")
    ap.add_argument("--seed", type=int, help="master seed (overrides config)")
    ap.add_argument("--jobs", type=int, help="worker processes (overrides config)")
    ap.add_argument("-o", "--output-dir", help="output directory (overrides io.output_dir)")
    ap.add_argument("--data-dir", help="MNIST IDX directory (overrides io.data_dir)")
    ap.add_argument("--weights", help="weight bundle (overrides io.weights)")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override any config key, e.g. --set device.length=40")
    ap.add_argument("--print-config", action="store_true",
                    help="print the fully resolved configuration and exit")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve_config(args) -> cfgmod.RunConfig:
    data = {}
    if args.config:
        text = Path(args.config).read_text()
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{args.config}: not valid YAML ({e})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{args.config}: top level must be a mapping")
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        cfgmod.apply_override(data, key.strip(), value)
    flags = {"seed": args.seed, "jobs": args.jobs, "io.output_dir": args.output_dir,
             "io.data_dir": args.data_dir, "io.weights": args.weights}
    for key, value in flags.items():
        if value is not None:
            cfgmod.apply_override(data, key, json.dumps(value))
    return cfgmod.from_dict(data)


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out_dir = Path(args.output_dir or "out")
    try:
        rc = resolve_config(args)
        out_dir = Path(rc.io.output_dir)
        if args.print_config:
            sys.stdout.write(rc.dump())
            return 0
        out = Outputs(out_dir)
        failures = HANDLERS[args.command](rc, out)
        if failures:
            raise CheckFailed("; ".join(failures))
        return 0
    except Exception as e:  # noqa: BLE001 - every failure becomes an error record
        code = EXIT_CHECK if isinstance(e, CheckFailed) else EXIT_ERROR
        record = {
            "command": args.command,
            "error": type(e).__name__,
            "message": str(e),
            "exit_code": code,
        }
        if not isinstance(e, (IrmenError, FileNotFoundError)):
            record["traceback"] = traceback.format_exc().splitlines()[-6:]
        try:
            atomic_write_json(out_dir / f"error-{args.command}.json", record)
        except OSError:
            pass
        sys.stderr.write(json.dumps(record) + "\n")
        return code


if __name__ == "__main__":
    sys.exit(main())
