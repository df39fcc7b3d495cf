"""Command-line interface: ``evhdr {render,synth,train,eval,infer,ablate}``.

Exit codes: 0 success, 1 usage error (nothing is written), 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import contextmanager
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from evhdr import io
from evhdr.errors import CorruptFileError, InvalidInputError, TrainingError
from evhdr.event_sim import HDRFrameSequence, SimulatorConfig

log = logging.getLogger("evhdr")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
CONFIG_SECTIONS = ("simulator", "exposure", "train", "model")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="evhdr", description="HDR reconstruction from bracketed exposures and events.")
    p.add_argument("--config", type=Path, help="YAML/JSON file with simulator/exposure/train/model sections")
    p.add_argument("--seed", type=int, help="overrides every seed in the config")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    s = sub.add_parser("render", help="write a procedural HDR sequence as PFM frames")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--frames", type=int, default=8)
    s.add_argument("--size", type=int, nargs=2, default=(64, 64), metavar=("H", "W"))
    s.add_argument("--fps", type=float, default=25.0)

    s = sub.add_parser("synth", help="HDR frames -> bracketed LDRs + events dataset")
    s.add_argument("--in", dest="inp", type=Path, required=True,
                   help="directory of PFM frames (sorted by name) with timestamps.txt, or use --fps")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--contrast", type=float, help="contrast threshold C")
    s.add_argument("--fps", type=float, help="frame rate when timestamps.txt is absent")
    s.add_argument("--step", type=int, default=1, help="stride between samples")
    s.add_argument("--no-noise", action="store_true")

    s = sub.add_parser("train", help="train a model on a synthesized dataset")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    _train_options(s)

    s = sub.add_parser("eval", help="PSNR-L / PSNR-mu of a checkpoint on a dataset")
    s.add_argument("--checkpoint", type=Path, required=True)
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--out", type=Path, help="JSON report path (default: next to the checkpoint)")
    s.add_argument("--ablation", choices=_ablation_names(), help="refuse checkpoints of another variant")
    s.add_argument("--plot", action="store_true", help="also write a per-sample PSNR figure")

    s = sub.add_parser("infer", help="3 LDRs + events -> HDR PFM and tonemapped PNG preview")
    s.add_argument("--checkpoint", type=Path, required=True)
    s.add_argument("--sample", type=Path, help="sample directory (ldr_1..3.png, events.evt, meta.json)")
    s.add_argument("--ldr", type=Path, nargs=3, metavar=("SHORT", "MEDIUM", "LONG"))
    s.add_argument("--events", type=Path)
    s.add_argument("--timestamps", type=float, nargs=4, metavar="T")
    s.add_argument("--exposures", type=float, nargs=3, metavar="T")
    s.add_argument("--out", type=Path, required=True, help="output PFM")
    s.add_argument("--preview", type=Path, help="tonemapped PNG (default: OUT with .png)")

    s = sub.add_parser("ablate", help="train and evaluate the four ablation variants")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--eval-data", type=Path)
    _train_options(s, ablation=False)
    return p


def _ablation_names():
    from evhdr.network import ABLATIONS
    return list(ABLATIONS)


def _train_options(s, ablation=True):
    s.add_argument("--steps", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--crop", type=int)
    s.add_argument("--batch", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--channels", type=int)
    s.add_argument("--preset", choices=("desk", "paper"), default="desk")
    s.add_argument("--no-augment", action="store_true")
    if ablation:
        s.add_argument("--ablation", choices=_ablation_names(), default="+ Event-to-image distill.")


# -- configuration ----------------------------------------------------------

@contextmanager
def _as_usage():
    """Invalid option values are usage errors, raised before any file is written."""
    try:
        yield
    except (InvalidInputError, TypeError) as exc:
        raise UsageError(str(exc)) from exc


def _section(cfg: dict, name: str, cls, overrides: dict):
    values = dict(cfg.get(name) or {})
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise UsageError(f"unknown {name} config keys: {sorted(unknown)}")
    values.update({k: v for k, v in overrides.items() if v is not None})
    return values


def load_settings(args) -> dict:
    cfg = {}
    if args.config is not None:
        if not args.config.exists():
            raise UsageError(f"config file {args.config} does not exist")
        cfg = io.load_config(args.config)
        unknown = set(cfg) - set(CONFIG_SECTIONS) - {"seed"}
        if unknown:
            raise UsageError(f"unknown config sections: {sorted(unknown)}")
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    return {"cfg": cfg, "seed": int(seed)}


def simulator_config(settings, args) -> SimulatorConfig:
    return SimulatorConfig(**_section(settings["cfg"], "simulator", SimulatorConfig,
                                      {"contrast_threshold": getattr(args, "contrast", None)}))


def exposure_config(settings):
    from evhdr.ldr_sim import ExposureConfig
    return ExposureConfig(**_section(settings["cfg"], "exposure", ExposureConfig, {}))


def model_config(settings, args, ablation=None):
    from evhdr.network import ABLATIONS, AblationConfig, ModelConfig
    values = _section(settings["cfg"], "model", ModelConfig, {"channels": getattr(args, "channels", None)})
    if "ablation" in values and isinstance(values["ablation"], dict):
        values["ablation"] = AblationConfig(**values["ablation"])
    if ablation is not None:
        values["ablation"] = ABLATIONS[ablation]
    return ModelConfig(**values)


def train_config(settings, args, mcfg):
    from evhdr.training import DESK, PAPER, TrainConfig
    base = PAPER if args.preset == "paper" else DESK
    values = _section(settings["cfg"], "train", TrainConfig, {
        "steps": args.steps, "epochs": args.epochs, "crop": args.crop,
        "batch": args.batch, "lr": args.lr,
    })
    if args.epochs is not None and args.steps is None:
        values["steps"] = None
    if args.no_augment:
        values["augment"] = False
    values["seed"] = settings["seed"]
    values["ablation"] = mcfg.ablation
    return replace(base, **values)


# -- commands --------------------------------------------------------------

def read_frames(directory: Path, fps=None) -> HDRFrameSequence:
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory} is not a directory")
    paths = sorted(directory.glob("*.pfm"))
    if len(paths) < 4:
        raise InvalidInputError(f"{directory}: need at least 4 PFM frames, found {len(paths)}")
    frames = []
    for p in paths:
        img = io.read_pfm(p).astype(np.float64)
        frames.append(img if img.ndim == 3 else np.repeat(img[..., None], 3, axis=2))
    ts_file = directory / "timestamps.txt"
    if ts_file.exists():
        ts = np.loadtxt(ts_file, dtype=np.float64, ndmin=1)
        if len(ts) != len(paths):
            raise InvalidInputError(f"{ts_file}: {len(ts)} timestamps for {len(paths)} frames")
    elif fps is not None:
        ts = np.arange(len(paths)) / fps
    else:
        raise InvalidInputError(f"{directory}: no timestamps.txt and no --fps given")
    return HDRFrameSequence(np.stack(frames), ts)


def cmd_render(args, settings):
    from evhdr.scenes import render_scene
    if args.frames < 2 or min(args.size) < 1:
        raise UsageError("--frames must be >= 2 and --size positive")
    seq = render_scene(args.frames, *args.size, fps=args.fps, seed=settings["seed"])
    args.out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames):
        io.write_pfm(args.out / f"frame_{i:04d}.pfm", frame)
    np.savetxt(args.out / "timestamps.txt", seq.timestamps, fmt="%.9f")
    print(json.dumps({"frames": len(seq), "out": str(args.out)}))


def cmd_synth(args, settings):
    from evhdr.data import save_dataset, synthesize_samples
    with _as_usage():
        sim, exposure = simulator_config(settings, args), exposure_config(settings)
    if args.step < 1:
        raise UsageError("--step must be >= 1")
    seq = read_frames(args.inp, args.fps)
    samples = synthesize_samples(seq, exposure, sim, seed=settings["seed"], step=args.step,
                                 name=args.inp.resolve().name, add_noise=not args.no_noise)
    path = save_dataset(samples, args.out, exposure, extra={
        "contrast_threshold": sim.contrast_threshold, "seed": settings["seed"]})
    n_events = sum(len(s.events.merged()) for s in samples)
    print(json.dumps({"samples": len(samples), "events": n_events, "manifest": str(path)}))


def _arrays(data_path, mcfg):
    from evhdr.data import load_dataset, to_arrays
    return [to_arrays(s, mcfg.bins, mcfg.stride) for s in load_dataset(data_path)]


def cmd_train(args, settings):
    from evhdr.plots import plot_loss_curve
    from evhdr.training import train
    with _as_usage():
        mcfg = model_config(settings, args, args.ablation)
        cfg = train_config(settings, args, mcfg)
    dataset = _arrays(args.data, mcfg)
    every = max(1, (cfg.steps or 100) // 10)

    def progress(row):
        if row["step"] % every == 0:
            log.info("step %d  l_hdr %.5f  l_distill %.5f  lr %.1e",
                     row["step"], row["l_hdr"], row["l_distill"], row["lr"])

    result = train(dataset, cfg, mcfg, out_dir=args.out, progress=progress)
    plot_loss_curve(result.curve, args.out / "loss.png", mcfg.ablation.label)
    io.write_json(args.out / "train_config.json", {"train": cfg.to_dict(), "model": mcfg.to_dict()})
    print(json.dumps({"checkpoint": str(result.checkpoint), "steps": len(result.curve),
                      "initial_loss": result.curve[0]["l_total"],
                      "final_loss": result.curve[-1]["l_total"]}))


def cmd_eval(args, settings):
    from evhdr.network import ABLATIONS
    from evhdr.plots import plot_metrics
    from evhdr.training import evaluate, load_model
    model = load_model(args.checkpoint, ABLATIONS[args.ablation] if args.ablation else None)
    report = evaluate(model, _arrays(args.data, model.config))
    out = args.out or args.checkpoint.with_suffix(".metrics.json")
    io.write_json(out, report.to_dict())
    if args.plot:
        plot_metrics(report, out.with_suffix(".png"))
    print(json.dumps(report.to_dict(), indent=2))


def cmd_infer(args, settings):
    from evhdr.data import load_sample_files, to_arrays
    from evhdr.losses import tonemap
    from evhdr.training import load_model, predict
    if args.sample is not None:
        ldrs = [args.sample / f"ldr_{i}.png" for i in (1, 2, 3)]
        events = args.sample / "events.evt"
        meta = io.read_json(args.sample / "meta.json")
    elif args.ldr and args.events and args.timestamps and args.exposures:
        ldrs, events = args.ldr, args.events
        meta = {"timestamps": args.timestamps, "exposure_times": args.exposures}
    else:
        raise UsageError("infer needs --sample DIR or all of --ldr/--events/--timestamps/--exposures")
    model = load_model(args.checkpoint)
    sample = load_sample_files(ldrs, events, meta)
    hdr = predict(model, to_arrays(sample, model.config.bins, model.config.stride))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    io.write_pfm(args.out, hdr)
    preview = args.preview or args.out.with_suffix(".png")
    peak = float(hdr.max()) or 1.0
    io.write_png(preview, tonemap(hdr / peak))
    print(json.dumps({"hdr": str(args.out), "preview": str(preview),
                      "min": float(hdr.min()), "max": float(hdr.max())}))


def cmd_ablate(args, settings):
    from evhdr.plots import plot_ablation
    from evhdr.training import run_ablation
    with _as_usage():
        mcfg = model_config(settings, args)
        cfg = train_config(settings, args, mcfg)
    dataset = _arrays(args.data, mcfg)
    eval_dataset = _arrays(args.eval_data, mcfg) if args.eval_data else None
    rows = run_ablation(dataset, cfg, mcfg, out_dir=args.out, eval_dataset=eval_dataset)
    plot_ablation(rows, args.out / "ablation.png")
    table = [{"method": r.label, "params": r.n_params, "psnr_l": r.report.psnr_l,
              "psnr_mu": r.report.psnr_mu, "final_loss": r.curve[-1]["l_total"]} for r in rows]
    io.write_json(args.out / "ablation.json", table)
    print(json.dumps(table, indent=2))


COMMANDS = {"render": cmd_render, "synth": cmd_synth, "train": cmd_train,
            "eval": cmd_eval, "infer": cmd_infer, "ablate": cmd_ablate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        settings = load_settings(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except CorruptFileError as exc:
        print(f"evhdr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        COMMANDS[args.command](args, settings)
    except UsageError as exc:
        print(f"evhdr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InvalidInputError, CorruptFileError, FileNotFoundError, TrainingError) as exc:
        print(f"evhdr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
