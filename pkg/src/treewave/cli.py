"""Command-line interface: denoise, inpaint, selftest subcommands.

Flags override an optional plain key=value config file; the effective
configuration is echoed into the output directory by the harness.
"""

import argparse
import sys
from pathlib import Path

from .engine import MODEL_IDS
from .harness import ExperimentSpec, bundled_corpus_paths, run_experiment

_MODE_CHOICES = ("vb", "map", "both")


def _add_common(parser):
    parser.add_argument("--model", default=None,
                        help="model id(s): comma list from "
                             f"{{{','.join(MODEL_IDS)}}} or 'all' (default lap-tree)")
    parser.add_argument("--mode", default=None, choices=_MODE_CHOICES,
                        help="estimator: vb, map, or both (default vb)")
    parser.add_argument("--learn-hypers", action="store_true", default=None,
                        help="learn hyperparameters during inference")
    parser.add_argument("--learned-and-init", action="store_true", default=None,
                        help="run each method twice: learned and initial hyperparameters")
    parser.add_argument("--levels", type=int, default=None, help="transform depth (default 8)")
    parser.add_argument("--sigma2", type=float, default=None,
                        help="noise variance (default 0.01 denoise, 1e-5 inpaint)")
    parser.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
    parser.add_argument("--outer", type=int, default=None, help="outer iterations (default 15)")
    parser.add_argument("--inner-rounds", type=int, default=None,
                        help="inner rounds per outer iteration (default 3)")
    parser.add_argument("--pls-iters", type=int, default=None,
                        help="penalized least squares iteration cap (default 150)")
    parser.add_argument("--pm-samples", type=int, default=None,
                        help="variance-estimation sample count (default 30)")
    parser.add_argument("--pm-cg-iters", type=int, default=None,
                        help="conjugate gradient iterations per sample (default 70)")
    parser.add_argument("--variance-source", default=None, choices=("auto", "exact", "pm"),
                        help="variance refit source (default auto)")
    parser.add_argument("--out-dir", default=None, help="output directory (default ./out)")
    parser.add_argument("--images", nargs="*", default=None,
                        help="image files or directories; default: bundled corpus")
    parser.add_argument("--config", default=None, help="key=value config file")
    parser.add_argument("--dump-f32", action="store_true", default=None,
                        help="also write raw float32 reconstructions")
    parser.add_argument("--no-marginals", action="store_true", default=None,
                        help="skip state-marginal heatmap dumps")


def _parse_config_file(path):
    values = {}
    for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SystemExit(f"{path}:{line_no}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _coerce(value, like):
    if isinstance(like, bool):
        return value.lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def _effective(args, key, default, file_values):
    cli_value = getattr(args, key, None)
    if cli_value is not None:
        return cli_value
    if key in file_values:
        return _coerce(file_values[key], default)
    return default


def _collect_images(entries):
    if not entries:
        paths = bundled_corpus_paths()
        if not paths:
            raise SystemExit("no bundled corpus found; pass --images")
        return [str(p) for p in paths]
    out = []
    for entry in entries:
        p = Path(entry)
        if p.is_dir():
            found = sorted(list(p.glob("*.pgm")) + list(p.glob("*.png")))
            if not found:
                raise SystemExit(f"no .pgm/.png images in directory {entry!r}")
            out.extend(str(f) for f in found)
        elif p.is_file():
            out.append(str(p))
        else:
            raise SystemExit(f"image path {entry!r} does not exist")
    return out


def _methods(args, file_values):
    model_arg = _effective(args, "model", "lap-tree", file_values)
    models = MODEL_IDS if model_arg == "all" else tuple(m.strip() for m in model_arg.split(","))
    for m in models:
        if m not in MODEL_IDS:
            raise SystemExit(f"unknown model {m!r}; choose from {MODEL_IDS}")
    mode_arg = _effective(args, "mode", "vb", file_values)
    modes = ("vb", "map") if mode_arg == "both" else (mode_arg,)
    if _effective(args, "learned_and_init", False, file_values):
        learned_flags = (True, False)
    else:
        learned_flags = (bool(_effective(args, "learn_hypers", False, file_values)),)
    return [(m, mode, lr) for m in models for mode in modes for lr in learned_flags]


def _build_spec(args, task):
    file_values = _parse_config_file(args.config) if args.config else {}
    spec = ExperimentSpec(
        task=task,
        sigma2=_effective(args, "sigma2", None, file_values),
        mask_fraction=_effective(args, "mask_frac", 0.75, file_values),
        methods=_methods(args, file_values),
        seed=_effective(args, "seed", 0, file_values),
        image_paths=_collect_images(_effective(args, "images", None, file_values)),
        out_dir=_effective(args, "out_dir", "out", file_values),
        levels=_effective(args, "levels", 8, file_values),
        outer=_effective(args, "outer", 15, file_values),
        inner_rounds=_effective(args, "inner_rounds", 3, file_values),
        pls_iters=_effective(args, "pls_iters", 150, file_values),
        pm_samples=_effective(args, "pm_samples", 30, file_values),
        pm_cg_iters=_effective(args, "pm_cg_iters", 70, file_values),
        variance_source=_effective(args, "variance_source", "auto", file_values),
        dump_f32=bool(_effective(args, "dump_f32", False, file_values)),
        dump_marginals=not _effective(args, "no_marginals", False, file_values),
    )
    return spec


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="treewave",
        description="Bayesian image reconstruction with latent-tree wavelet priors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_den = sub.add_parser("denoise", help="denoising experiment")
    _add_common(p_den)

    p_inp = sub.add_parser("inpaint", help="inpainting experiment")
    _add_common(p_inp)
    p_inp.add_argument("--mask-frac", type=float, default=None,
                       help="fraction of pixels removed (default 0.75)")

    p_self = sub.add_parser("selftest", help="run the built-in verification battery")
    p_self.add_argument("--quick", action="store_true", help="smaller problem sizes")

    args = parser.parse_args(argv)

    if args.command == "selftest":
        from .selftest import run_selftest

        return run_selftest(quick=args.quick)

    task = "denoise" if args.command == "denoise" else "inpaint"
    if task == "denoise":
        args.mask_frac = None
    spec = _build_spec(args, task)
    rows, summary = run_experiment(spec)
    n_fail = sum(1 for r in rows if r["psnr_db"] == "nan")
    print(f"wrote {len(rows)} rows to {spec.out_dir}/report.csv ({n_fail} failures)")
    for (model, mode, learned), (mean, std, count) in summary.items():
        tag = "learned" if learned else "init"
        print(f"  {mode}-{model}-{tag}: {mean:.2f} +/- {std:.2f} dB over {count} images")
    return 1 if n_fail else 0


if __name__ == "__main__":
    sys.exit(main())
