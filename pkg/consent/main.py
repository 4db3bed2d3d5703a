import argparse
import json
import logging
import os
import sys
from datetime import datetime

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from shared import config
from shared.exceptions import ConsentError
from shared.models import RunConfig
from consent.bold_classifier import BoldWordClassifier
from consent.services import storage


def _int_list(text):
    try:
        return tuple(int(v) for v in text.split(',') if v.strip())
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, help='seed for every random stream of the command')
    common.add_argument('--config', help='JSON config file with model/synth/train/morphology/eval sections')
    common.add_argument('--out', help='output directory')
    common.add_argument('--quiet', action='store_true', help='only log warnings and errors')

    parser = argparse.ArgumentParser(prog='consent', description='Context-dependent bold word classification')
    sub = parser.add_subparsers(dest='command', required=True)

    gen = sub.add_parser('gen', parents=[common], help='generate a synthetic dataset')
    gen.add_argument('--images', type=int, help='number of images (or games with --rps)')
    gen.add_argument('--rps', action='store_true', help='generate rock-paper-scissors games instead')
    gen.add_argument('--games', type=int, help=f'number of games for --rps (default: --images, else {config.RPS_GAMES})')

    tr = sub.add_parser('train', parents=[common], help='train a CONSENT model')
    tr.add_argument('--data', required=True)
    tr.add_argument('--epochs', type=int)
    tr.add_argument('--rps', action='store_true', help='train on a rock-paper-scissors dataset')

    for name in ('eval', 'baseline-vote'):
        ev = sub.add_parser(name, parents=[common], help='score predictions against a dataset split')
        ev.add_argument('--data', required=True)
        ev.add_argument('--model')
        ev.add_argument('--baseline-vote', dest='baseline_vote', action='store_true', default=name != 'eval')
        ev.add_argument('--alpha', type=float, help='voting threshold; validated on the val split when omitted')
        ev.add_argument('--report', help='write the report JSON here')
        ev.add_argument('--split', choices=('test', 'val', 'train'), default='test')
        ev.add_argument('--truth-as-predictions', action='store_true', help=argparse.SUPPRESS)

    pr = sub.add_parser('predict', parents=[common], help='label the boxed words of one image')
    pr.add_argument('--model', required=True)
    pr.add_argument('--image', required=True)
    pr.add_argument('--boxes', required=True)
    pr.add_argument('--annotate', help='write an annotated PPM here')

    ab = sub.add_parser('ablate', parents=[common], help='embed size x stacks F1 grid')
    ab.add_argument('--data', required=True)
    ab.add_argument('--embed-dims', type=_int_list)
    ab.add_argument('--stacks', type=_int_list)
    ab.add_argument('--report')

    rps = sub.add_parser('eval-rps', parents=[common], help='score a model on rock-paper-scissors games')
    rps.add_argument('--model', required=True)
    rps.add_argument('--data', required=True)
    rps.add_argument('--split', choices=('test', 'val', 'train'), default='test')
    rps.add_argument('--report')
    return parser


def resolve_config(args):
    run_config = RunConfig.from_file(args.config)
    seed = args.seed
    if args.command == 'gen':
        count = args.games if args.rps and args.games is not None else args.images
        if args.rps and count is None:
            count = config.RPS_GAMES
        run_config = run_config.override('synth', seed=seed, images=count)
    if args.command in ('train', 'ablate'):
        run_config = run_config.override('train', seed=seed, epochs=getattr(args, 'epochs', None))
        run_config = run_config.override('model', seed=seed)
    return run_config


def _emit(payload, report_path=None):
    if report_path:
        storage.write_json(report_path, payload)
        logging.info(f"Report written to {report_path}")
    print(json.dumps(payload, indent=2, sort_keys=True, allow_nan=False))


def manifest_location(args):
    """
    Where a command that has no output directory of its own records its run manifest:
    --out, else a sidecar of --report/--annotate, else next to its input.
    """
    if args.out:
        return args.out, config.RUN_MANIFEST_NAME
    artifact = getattr(args, 'report', None) or getattr(args, 'annotate', None)
    if artifact:
        stem = os.path.splitext(os.path.basename(artifact))[0]
        return os.path.dirname(artifact) or '.', f"{stem}.{config.RUN_MANIFEST_NAME}"
    if getattr(args, 'data', None):
        return args.data, f"{args.command}.{config.RUN_MANIFEST_NAME}"
    stem = os.path.splitext(os.path.basename(args.image))[0]
    return os.path.dirname(args.image) or '.', f"{stem}.{config.RUN_MANIFEST_NAME}"


def run(args):
    classifier = BoldWordClassifier(resolve_config(args))
    out = args.out

    if args.command == 'gen':
        out = out or 'data'
        path, summary = classifier.generate(out, rps=args.rps)
        print(path)
        print(summary.to_string())
        return 0
    if args.command == 'train':
        out = out or 'model'
        trainer = classifier.train_rps if args.rps else classifier.train
        path, log = trainer(args.data, out)
        print(path)
        logging.info(f"\n{log.to_frame().to_string(index=False)}")
        return 0

    if args.command in ('eval', 'baseline-vote'):
        report = classifier.evaluate(args.data, args.model, args.baseline_vote, args.alpha, args.split,
                                     args.truth_as_predictions)
        logging.info(f"\n{report.to_table()}")
        _emit(report.to_json(), args.report)
        extra = {'data': args.data, 'model': args.model, 'split': args.split}
    elif args.command == 'predict':
        _emit(classifier.predict(args.model, args.image, args.boxes, args.annotate))
        extra = {'model': args.model, 'image': args.image, 'boxes': args.boxes}
    elif args.command == 'ablate':
        result = classifier.ablate(args.data, args.embed_dims, args.stacks)
        logging.info(f"\n{result.grid.to_string(float_format=lambda v: f'{v:.4f}', na_rep='failed')}")
        _emit(result.to_json(), args.report)
        extra = {'data': args.data}
    else:
        _emit(classifier.evaluate_rps(args.data, args.model, args.split), args.report)
        extra = {'data': args.data, 'model': args.model, 'split': args.split}
    directory, name = manifest_location(args)
    classifier.write_run_manifest(directory, args.command, extra, name)
    return 0


def main(argv=None):
    """Entry point of the ``consent`` command; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[logging.StreamHandler(sys.stderr)],
        force=True,
    )
    start_time = datetime.now()
    logging.info(f"--- Starting '{args.command}' ---")
    try:
        code = run(args)
        logging.info(f"--- '{args.command}' completed in {datetime.now() - start_time} ---")
        return code
    except ConsentError as e:
        logging.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except OSError as e:
        logging.error(f"I/O failure: {e}")
        return 3
    except Exception as e:
        logging.critical(f"Job Failed: {e}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
