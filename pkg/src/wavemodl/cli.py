"""Command-line interface.

Subcommands: phantom, acquire, recon, train, fit-qalas, synth, gfactor,
metrics. Exit codes: 0 success, 2 configuration or argument problems,
3 numerical failure, 4 file input/output problems.
"""

import argparse
import sys

from . import pipeline
from .config import load_config
from .errors import (
    ConfigError,
    CorruptFileError,
    InvalidInputError,
    NumericalFailureError,
    PipelineError,
)
from .presets import preset_path, preset_names
from .qalas import SYNTH_DEFAULTS, SynthSequence

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def _add_config_arg(parser):
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--config", help="path to a JSON experiment config")
    group.add_argument(
        "--preset", choices=sorted(preset_names()),
        help="name of a bundled experiment config",
    )


def _load(args):
    path = args.config if args.config else preset_path(args.preset)
    return load_config(path)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="wavemodl",
        description="Wave-encoded acquisition simulation, unrolled "
                    "reconstruction, and quantitative mapping.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="rasterize the phantom and write truth volumes")
    _add_config_arg(p)
    p.add_argument("--output-dir", required=True)

    p = sub.add_parser("acquire", help="simulate the wave-encoded acquisition")
    _add_config_arg(p)
    p.add_argument("--output-dir", required=True)

    p = sub.add_parser("recon", help="reconstruct acquired k-space")
    _add_config_arg(p)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--method", choices=["cg", "modl"], default=None,
                   help="override the configured method")
    p.add_argument("--lambda", dest="lambda_total", type=float, default=None,
                   help="override the Tikhonov weight for cg")
    p.add_argument("--checkpoint", default=None,
                   help="model checkpoint for the modl method")

    p = sub.add_parser("train", help="train the unrolled model on phantom slabs")
    _add_config_arg(p)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--steps", type=int, default=None,
                   help="override the configured step count")

    p = sub.add_parser("fit-qalas", help="fit T1/T2/PD maps from reconstructions")
    _add_config_arg(p)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--method", choices=["cg", "modl"], default=None)
    p.add_argument("--checkpoint", default=None)

    p = sub.add_parser("synth", help="synthesize a weighted contrast from maps")
    p.add_argument("--maps-dir", required=True,
                   help="directory holding t1_fit/t2_fit/pd_fit volumes")
    p.add_argument("--kind", required=True, choices=sorted(SYNTH_DEFAULTS))
    p.add_argument("--output-dir", required=True)
    p.add_argument("--tr", type=float, default=None, help="repetition time (ms)")
    p.add_argument("--te", type=float, default=None, help="echo time (ms)")
    p.add_argument("--ti", type=float, default=None, help="inversion time (ms)")
    p.add_argument("--ti2", type=float, default=None,
                   help="second inversion time (ms), dir only")

    p = sub.add_parser("gfactor", help="Monte-Carlo noise amplification map")
    _add_config_arg(p)
    p.add_argument("--output-dir", required=True)

    p = sub.add_parser("metrics", help="NRMSE between two stored volumes")
    p.add_argument("--volume", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--roi", default=None, help="volume file; nonzero voxels form the ROI")
    p.add_argument("--out", default=None, help="also write the metrics to this file")

    return parser


def _run(args):
    if args.command == "phantom":
        cfg, text = _load(args)
        pipeline.stage_phantom(cfg, text, args.output_dir)
        print(f"phantom written to {args.output_dir}")
    elif args.command == "acquire":
        cfg, text = _load(args)
        pipeline.stage_acquire(cfg, text, args.output_dir)
        print(f"k-space written to {args.output_dir}")
    elif args.command == "recon":
        cfg, text = _load(args)
        pipeline.stage_recon(
            cfg, text, args.output_dir, method=args.method,
            lambda_total=args.lambda_total, checkpoint=args.checkpoint,
        )
        print(f"reconstruction written to {args.output_dir}")
    elif args.command == "train":
        cfg, text = _load(args)
        _, history = pipeline.stage_train(cfg, text, args.output_dir, steps=args.steps)
        print(
            f"trained {len(history)} steps, final loss {history[-1]:.6e}, "
            f"checkpoint in {args.output_dir}"
        )
    elif args.command == "fit-qalas":
        cfg, text = _load(args)
        pipeline.stage_fit_qalas(
            cfg, text, args.output_dir, method=args.method,
            checkpoint=args.checkpoint,
        )
        print(f"parameter maps written to {args.output_dir}")
    elif args.command == "synth":
        sequence = None
        overrides = {
            "tr_ms": args.tr, "te_ms": args.te, "ti_ms": args.ti, "ti2_ms": args.ti2,
        }
        if any(v is not None for v in overrides.values()):
            base = SYNTH_DEFAULTS[args.kind]
            sequence = SynthSequence(**{
                key: (value if value is not None else getattr(base, key))
                for key, value in overrides.items()
            })
        pipeline.stage_synth(args.maps_dir, args.kind, args.output_dir, sequence)
        print(f"synthesized {args.kind} written to {args.output_dir}")
    elif args.command == "gfactor":
        cfg, text = _load(args)
        result = pipeline.stage_gfactor(cfg, text, args.output_dir)
        print(
            f"g-factor map written to {args.output_dir} "
            f"(R={result.accel}, {cfg.gfactor.n_replicas} replicas)"
        )
    elif args.command == "metrics":
        lines = pipeline.stage_metrics(
            args.volume, args.reference, args.roi, args.out
        )
        for line in lines:
            print(line)
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _run(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        cause = exc.cause
        if isinstance(cause, (ConfigError, InvalidInputError)):
            return EXIT_CONFIG
        if isinstance(cause, NumericalFailureError):
            return EXIT_NUMERICAL
        if isinstance(cause, (CorruptFileError, OSError)):
            return EXIT_IO
        raise
    except (ConfigError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (CorruptFileError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
