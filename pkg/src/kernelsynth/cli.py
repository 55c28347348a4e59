"""Command-line front end.

Subcommands: ``gen-phantom``, ``simulate-dataset``, ``train``,
``synthesize``, ``estimate-mtf`` and ``eval``. Global flags ``--seed``,
``--threads`` and ``--config`` go before the subcommand. A ``--config`` JSON
file supplies defaults keyed by flag name (dashes as underscores); flags on
the command line win. Every command that writes files also writes
``<output>.json`` with the effective configuration, which can be fed back
through ``--config`` to reproduce the run.

Exit codes: 0 success, 2 usage or validation error, 3 data error (missing or
malformed files, no wire peak, empty dataset), 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import FrequencyGrid, Image, read_ksim, write_ksim
from .denoiser import init_params, load_checkpoint
from .errors import (BandOutOfRange, DfovMismatch, DivisionBlowup, EmptyDataset, FormatError,
                     NonRealResult, NoPeak, RoiOutOfBounds, SingularSystem, TapeMismatch,
                     TrainingDiverged)
from .evaluation import (estimate_mtf, image_metrics, mtf_fidelity, profile_curve, read_curve_csv,
                         roi_half_width_for, write_curve_csv)
from .forward import direct_ratio_synthesis, make_operator, tikhonov_init
from .mtf import (DEFAULT_EPS, KernelMtfProfile, flat_profile, load_profile, ratio_filter,
                  sharp_boosted, smooth_gaussian)
from .phantoms import (NoiseModel, kernel_filtered, shepp_logan, simulate_pairs, water_phantom,
                       wire_phantom, write_manifest, read_manifest)
from .training import MODES, OperatorFactory, TrainConfig, predict, train
from .unrolled import UnrollConfig, synthesize

NUMERIC_ERRORS = (TrainingDiverged, SingularSystem, DivisionBlowup, NonRealResult, FloatingPointError)
DATA_ERRORS = (NoPeak, FormatError, EmptyDataset, RoiOutOfBounds, BandOutOfRange, TapeMismatch, OSError)

NAMED_PROFILES = {"smooth": smooth_gaussian, "sharp": sharp_boosted, "flat": flat_profile}


def resolve_profile(spec) -> KernelMtfProfile:
    """``smooth``, ``sharp``, ``flat``, a path to a JSON/CSV profile file, or
    an inline ``{"family", "params"}`` dict as written to sidecars."""
    if isinstance(spec, dict):
        return KernelMtfProfile(spec["family"], spec.get("params", {}))
    if spec in NAMED_PROFILES:
        return NAMED_PROFILES[spec]()
    if not Path(spec).exists():
        raise FormatError(f"profile {spec!r} is neither a known name nor an existing file")
    return load_profile(spec)


def profile_arg(spec) -> dict:
    # sidecars record the resolved profile so runs survive edits to profile files
    return resolve_profile(spec).to_dict() if isinstance(spec, str) else spec


def dfov_list(text: str) -> list:
    vals = [float(v) for v in str(text).split(",") if v.strip()]
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("DFOV list must hold positive numbers")
    return vals


def positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def write_sidecar(out, args, extra: dict | None = None) -> None:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "config") and v is not None}
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in cfg.items()}
    cfg["kernelsynth_version"] = __version__
    cfg.update(extra or {})
    Path(str(out) + ".json").write_text(json.dumps(cfg, indent=2, sort_keys=True))


def write_png(path, image: Image) -> None:
    """16-bit grayscale preview windowed to the image's min and max."""
    from PIL import Image as PILImage

    px = image.pixels
    lo, hi = float(px.min()), float(px.max())
    scaled = np.zeros(px.shape) if hi == lo else (px - lo) / (hi - lo)
    PILImage.fromarray(np.round(scaled * 65535).astype(np.uint16)).save(path)


def _noise_model(args) -> NoiseModel:
    return NoiseModel(args.sigma, resolve_profile(args.noise_profile), args.ramp_exponent)


def cmd_gen_phantom(args) -> int:
    n, dfov = args.n, args.dfov
    if args.kind == "shepp-logan":
        img = shepp_logan(n, dfov)
    elif args.kind == "wire":
        img = wire_phantom(n, dfov, args.amplitude)
    else:
        img = water_phantom(n, dfov, _noise_model(args), args.seed)
    if args.filter_profile:
        img = kernel_filtered(img, resolve_profile(args.filter_profile))
    write_ksim(args.out, img)
    if args.png:
        write_png(args.png, img)
    write_sidecar(args.out, args)
    return 0


def cmd_simulate_dataset(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = simulate_pairs(args.count, args.n, args.dfov_list, resolve_profile(args.input_profile),
                           resolve_profile(args.target_profile), _noise_model(args), args.seed,
                           args.phantom, workers=args.threads)
    rows = []
    for p in pairs:
        stem = f"pair_{p['index']:05d}"
        write_ksim(out / f"{stem}_input.ksim", p["input"])
        write_ksim(out / f"{stem}_target.ksim", p["target"])
        rows.append({"input_path": str(out / f"{stem}_input.ksim"),
                     "target_path": str(out / f"{stem}_target.ksim"),
                     "dfov_cm": p["dfov_cm"], "seed": [args.seed, p["index"]]})
    manifest = out / "manifest.json"
    write_manifest(manifest, rows, {"n": args.n})
    write_sidecar(manifest, args, {"input_profile": profile_arg(args.input_profile),
                                   "target_profile": profile_arg(args.target_profile)})
    print(f"wrote {len(rows)} pairs to {manifest}")
    return 0


def _unroll_config(args, meta: dict | None = None) -> UnrollConfig:
    meta = meta or {}

    def pick(name, default):
        v = getattr(args, name, None)
        return v if v is not None else meta.get(name, default)

    return UnrollConfig(unrolls=int(pick("unrolls", 5)), lambda0=float(pick("lambda0", 0.5)),
                        decay=float(pick("decay", 0.9)), init=pick("init", "tikhonov"),
                        decay_per=pick("decay_per", "unroll"), epoch=int(meta.get("epoch", 0)))


def cmd_train(args) -> int:
    data = read_manifest(args.manifest)
    mode = args.mode.replace("-", "_")
    tcfg = TrainConfig(epochs=args.epochs, learning_rate=args.learning_rate,
                       batch_size=args.batch_size, w_ssim=args.w_ssim, mode=mode,
                       backprop_through_dc=not args.stop_gradient_dc,
                       checkpoint_every=args.checkpoint_every)
    ucfg = _unroll_config(args)
    input_mtf = resolve_profile(args.input_profile)
    target_mtf = resolve_profile(args.target_profile)
    factory = OperatorFactory(input_mtf, target_mtf, args.eps)
    init, start = None, 0
    if args.resume:
        init = load_checkpoint(args.resume)
        start = int(init.meta.get("epoch", -1)) + 1
    else:
        init = init_params(seed=args.seed)
    init.meta.update({
        "mode": mode, "unrolls": ucfg.unrolls, "lambda0": ucfg.lambda0, "decay": ucfg.decay,
        "init": ucfg.init, "decay_per": ucfg.decay_per, "eps": args.eps,
        "input_profile": input_mtf.to_dict(), "target_profile": target_mtf.to_dict(),
    })
    log_path = args.log or str(args.out) + ".log.csv"
    train(data, factory, tcfg, ucfg, seed=args.seed, init=init, start_epoch=start,
          checkpoint_path=args.out, log_path=log_path,
          progress=lambda r: print(f"epoch {r['epoch']}: loss {r['mean_loss']:.6g}", flush=True))
    write_sidecar(args.out, args, {"input_profile": input_mtf.to_dict(),
                                   "target_profile": target_mtf.to_dict(), "start_epoch": start})
    return 0


def _profiles_for(args, meta: dict):
    def get(flag, key, default):
        spec = getattr(args, flag)
        if spec is not None:
            return resolve_profile(spec)
        if key in meta:
            d = meta[key]
            return KernelMtfProfile(d["family"], d["params"])
        return default()

    return get("input_profile", "input_profile", smooth_gaussian), get("target_profile", "target_profile", sharp_boosted)


def cmd_synthesize(args) -> int:
    y = read_ksim(args.input)
    if args.dfov is not None and args.dfov != y.dfov_cm:
        raise DfovMismatch(f"--dfov {args.dfov} disagrees with the input header ({y.dfov_cm} cm)")
    method = args.method
    params, meta = None, {}
    if method in ("modl", "direct-learning"):
        if not args.checkpoint:
            raise FormatError(f"method {method} needs --checkpoint")
        params = load_checkpoint(args.checkpoint)
        meta = params.meta
    input_mtf, target_mtf = _profiles_for(args, meta)
    eps = args.eps if args.eps is not None else float(meta.get("eps", DEFAULT_EPS))
    grid = FrequencyGrid(y.size, y.dfov_cm)
    if method == "direct":
        out = direct_ratio_synthesis(y, ratio_filter(input_mtf, target_mtf, grid, eps))
    elif method == "tikhonov":
        op = make_operator(input_mtf, target_mtf, grid, eps)
        out = tikhonov_init(op, y, _unroll_config(args, meta).lambda0)
    elif method == "modl":
        op = make_operator(input_mtf, target_mtf, grid, eps)
        out = synthesize(y, op, params, _unroll_config(args, meta))
    else:
        out = predict(y, params, "direct_learning")
    write_ksim(args.out, out)
    if args.png:
        write_png(args.png, out)
    extra = {"input_profile": input_mtf.to_dict(), "target_profile": target_mtf.to_dict(), "eps": eps}
    if args.reference:
        metrics = image_metrics(out, read_ksim(args.reference))
        print(json.dumps(metrics))
        extra["metrics"] = metrics
    write_sidecar(args.out, args, extra)
    return 0


def cmd_estimate_mtf(args) -> int:
    img = read_ksim(args.image)
    h = args.roi_half_width if args.roi_half_width is not None else roi_half_width_for(img, args.roi_cm)
    curve = estimate_mtf(img, h, args.window)
    write_curve_csv(args.out, curve)
    extra = {"roi_half_width_px": h}
    if args.reference_profile:
        ref = profile_curve(resolve_profile(args.reference_profile), img.dfov_cm, curve.freqs[-1])
        nyq = img.grid.nyquist
        rmse = mtf_fidelity(curve, ref, (0.0, min(args.band * nyq, curve.freqs[-1])))
        print(json.dumps({"rmse": rmse}))
        extra["rmse"] = rmse
    write_sidecar(args.out, args, extra)
    return 0


def cmd_eval(args) -> int:
    if args.pred and args.target:
        result = image_metrics(read_ksim(args.pred), read_ksim(args.target))
    elif args.curve and (args.reference_curve or args.reference_profile):
        est = read_curve_csv(args.curve)
        if args.reference_curve:
            ref = read_curve_csv(args.reference_curve, source="target")
        else:
            ref = profile_curve(resolve_profile(args.reference_profile), est.dfov_cm, est.freqs[-1])
        hi = args.band_hi if args.band_hi is not None else min(est.freqs[-1], ref.freqs[-1])
        result = {"rmse": mtf_fidelity(est, ref, (args.band_lo, hi))}
    else:
        raise ValueError("eval needs --pred/--target or --curve with a reference")
    print(json.dumps(result))
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=2))
        write_sidecar(args.out, args)
    return 0


def _add_profiles(p, required_defaults: bool = True):
    d_in, d_tg = ("smooth", "sharp") if required_defaults else (None, None)
    p.add_argument("--input-profile", default=d_in, help="smooth, sharp, flat or a profile file")
    p.add_argument("--target-profile", default=d_tg, help="smooth, sharp, flat or a profile file")


def _add_noise(p):
    p.add_argument("--sigma", type=float, default=0.0, help="noise std for the shaping kernel")
    p.add_argument("--noise-profile", default="smooth", help="kernel that sets the noise scale")
    p.add_argument("--ramp-exponent", type=float, default=1.0)


def _add_unrolls(p, defaults: bool):
    p.add_argument("--unrolls", type=int, default=5 if defaults else None)
    p.add_argument("--lambda0", type=positive, default=0.5 if defaults else None)
    p.add_argument("--decay", type=float, default=0.9 if defaults else None)
    p.add_argument("--init", choices=("tikhonov", "input"), default="tikhonov" if defaults else None)
    p.add_argument("--decay-per", choices=("unroll", "epoch"), default="unroll" if defaults else None)


def build_parser():
    parser = argparse.ArgumentParser(prog="kernelsynth",
                                     description="DFOV-agnostic CT kernel synthesis")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1, help="worker pool size")
    parser.add_argument("--config", help="JSON file of flag defaults")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = sub.add_parser("gen-phantom", help="write a phantom image")
    p.add_argument("kind", choices=("shepp-logan", "wire", "water"))
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--dfov", type=positive, default=10.0)
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--filter-profile", help="optionally filter the phantom by a kernel MTF")
    p.add_argument("--out", required=True)
    p.add_argument("--png")
    _add_noise(p)
    p.set_defaults(func=cmd_gen_phantom)
    subs["gen-phantom"] = p

    p = sub.add_parser("simulate-dataset", help="simulate training pairs and a manifest")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--dfov-list", type=dfov_list, default=[5.0, 10.0, 15.0, 20.0])
    p.add_argument("--phantom", choices=("random", "shepp-logan"), default="random")
    p.add_argument("--out-dir", required=True)
    _add_profiles(p)
    _add_noise(p)
    p.set_defaults(func=cmd_simulate_dataset)
    subs["simulate-dataset"] = p

    p = sub.add_parser("train", help="train the projection network")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=("model-based", "direct-learning"), default="model-based")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--learning-rate", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--w-ssim", type=float, default=0.1)
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.add_argument("--stop-gradient-dc", action="store_true",
                   help="treat the data-consistency step as identity when backpropagating")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--log", help="training log CSV (default <out>.log.csv)")
    p.add_argument("--out", required=True)
    _add_profiles(p)
    _add_unrolls(p, defaults=True)
    p.set_defaults(func=cmd_train)
    subs["train"] = p

    p = sub.add_parser("synthesize", help="convert an input-kernel image")
    p.add_argument("--input", required=True)
    p.add_argument("--method", choices=("direct", "tikhonov", "modl", "direct-learning"), default="modl")
    p.add_argument("--checkpoint")
    p.add_argument("--dfov", type=positive, help="expected DFOV; checked against the image header")
    p.add_argument("--eps", type=float)
    p.add_argument("--reference", help="target image for metrics")
    p.add_argument("--out", required=True)
    p.add_argument("--png")
    _add_profiles(p, required_defaults=False)
    _add_unrolls(p, defaults=False)
    p.set_defaults(func=cmd_synthesize)
    subs["synthesize"] = p

    p = sub.add_parser("estimate-mtf", help="MTF of a wire image as CSV")
    p.add_argument("--image", required=True)
    p.add_argument("--roi-half-width", type=int, help="ROI half width in pixels")
    p.add_argument("--roi-cm", type=positive, default=0.6, help="ROI half width in cm if pixels not given")
    p.add_argument("--window", choices=("none", "hann"), default="none")
    p.add_argument("--reference-profile", help="profile to report RMSE against")
    p.add_argument("--band", type=float, default=0.8, help="RMSE band as a fraction of Nyquist")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate_mtf)
    subs["estimate-mtf"] = p

    p = sub.add_parser("eval", help="image metrics or MTF fidelity")
    p.add_argument("--pred")
    p.add_argument("--target")
    p.add_argument("--curve")
    p.add_argument("--reference-curve")
    p.add_argument("--reference-profile")
    p.add_argument("--band-lo", type=float, default=0.0)
    p.add_argument("--band-hi", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)
    subs["eval"] = p
    return parser, subs


def parse_args(argv=None):
    parser, subs = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        try:
            cfg = json.loads(Path(known.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {known.config}: {exc}")
        top = {k: cfg[k] for k in ("seed", "threads") if k in cfg}
        parser.set_defaults(**top)
        for p in subs.values():
            for action in p._actions:
                if action.dest in cfg and action.dest != "kind" and action.option_strings:
                    action.default = cfg[action.dest]
                    action.required = False
    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except NUMERIC_ERRORS as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
