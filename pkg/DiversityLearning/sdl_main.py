"""
Command-line entry point: synth, train, eval, rank, retrieve, gradcheck, report, ablate.

JSON goes to --out or stdout; logs and human-readable summaries go to stderr.
Exit codes: 0 success, 1 validation error, 2 numeric or runtime failure.
"""

import argparse
import logging
import os
import sys
from dataclasses import asdict, fields

import yaml

from DiversityLearning.sdl_core import VARIANTS
from DiversityLearning.sdl_data import Dataset, dataset_summary, load_features, load_labels, load_split
from DiversityLearning.sdl_errors import SDLNumericError, SDLValidationError
from DiversityLearning.sdl_eval import (
    TASKS, diverse_subset_eval, evaluate_model, export_scores, ground_truth, retrieve,
    row_attribution_report, score_all, tag_list_for_task, top_k_tags, write_attribution_report,
)
from DiversityLearning.sdl_model import load_checkpoint, save_checkpoint
from DiversityLearning.sdl_optim import TrainConfig, train, write_training_log
from DiversityLearning.sdl_tracking import RunTracker
from DiversityLearning.sdl_wordvec import parse_vec_file
from utility.json_io import write_json, write_jsonl
from utility.print_summary import print_summary

logger = logging.getLogger(__name__)

DEFAULT_KS = [3, 5]


class _ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with the validation code"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ==================== SHARED HELPERS ====================

def _configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else os.getenv('SDL_LOG_LEVEL', 'INFO').upper()
    logging.basicConfig(level=level, format='%(asctime)s - %(levelname)s - %(message)s', force=True)


def _threads(args) -> int:
    if args.threads is not None:
        threads = args.threads
    else:
        raw = os.getenv('SDL_THREADS', '1')
        try:
            threads = int(raw)
        except ValueError:
            raise SDLValidationError(f"SDL_THREADS must be an integer, got {raw!r}") from None
    if threads < 1:
        raise SDLValidationError(f"threads must be >= 1, got {threads}")
    return threads


def _emit_json(data, path) -> None:
    text = write_json(data, path)
    if path is None:
        sys.stdout.write(text)
    else:
        logger.info(f"✓ Wrote {path}")


def _emit_jsonl(records, path) -> None:
    text = write_jsonl(records, path)
    if path is None:
        sys.stdout.write(text)
    else:
        logger.info(f"✓ Wrote {len(records)} records to {path}")


def _load_dataset(args, need_labels: bool = True) -> Dataset:
    ids, matrix = load_features(args.features)
    if args.labels:
        labels = load_labels(args.labels, ids)
    elif need_labels:
        raise SDLValidationError("--labels is required for this command")
    else:
        labels = [frozenset()] * len(ids)
    seen, unseen = load_split(args.seen, args.unseen)
    return Dataset(features=matrix, ids=ids, labels=labels, seen=seen, unseen=unseen)


def _load_model(args, wordvecs, dataset):
    params = load_checkpoint(args.checkpoint, variant=args.variant)
    if params.d_w != wordvecs.dim:
        raise SDLValidationError(f"checkpoint d_w={params.d_w} but word vectors have d_w={wordvecs.dim}")
    if params.d_f != dataset.d_f:
        raise SDLValidationError(f"checkpoint d_f={params.d_f} but features have d_f={dataset.d_f}")
    if args.variant == "fast0tag" and params.M != 1:
        raise SDLValidationError(f"fast0tag scoring needs an M=1 checkpoint, got M={params.M}")
    return params


def _inference_inputs(args, need_labels: bool):
    wordvecs = parse_vec_file(args.wordvecs)
    dataset = _load_dataset(args, need_labels=need_labels)
    return wordvecs, dataset, _load_model(args, wordvecs, dataset)


def _resolve_rows(variant: str, m):
    """fast0tag pins M to 1; everything else defaults to 7"""
    if variant == "fast0tag":
        if m is not None and m != 1:
            raise SDLValidationError(f"--variant fast0tag requires --m 1, got --m {m}")
        return 1
    return m


def train_config_from_args(args) -> TrainConfig:
    """Dataclass defaults < YAML --config < explicit flags"""
    values = {}
    if args.config:
        with open(args.config, 'r', encoding='utf-8') as f:
            loaded = yaml.safe_load(f) or {}
        if not isinstance(loaded, dict):
            raise SDLValidationError(f"{args.config}: expected a mapping of training settings")
        values.update(loaded)

    flags = {
        'epochs': args.epochs, 'batch_size': args.batch_size, 'max_lr': args.lr,
        'weight_decay': args.wd, 'lam': args.lam, 'M': args.m,
        'variant': args.variant, 'seed': args.seed,
    }
    values.update({k: v for k, v in flags.items() if v is not None})
    if args.no_sdw:
        values['use_sdw'] = False

    variant = values.get('variant', 'max')
    rows = _resolve_rows(variant, values.get('M'))
    if rows is not None:
        values['M'] = rows
    known = {f.name for f in fields(TrainConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise SDLValidationError(f"unknown training config keys: {unknown}")
    return TrainConfig(**values)


# ==================== SUBCOMMANDS ====================

def cmd_synth(args) -> int:
    from data.fixtures import fixtures
    from DiversityLearning.sdl_synth import SynthConfig, config_summary, generate, synth_statistics, write_world

    values = dict(fixtures[args.fixture]) if args.fixture else {}
    overrides = {
        'd_w': args.d_w, 'd_f': args.d_f, 'groups': args.groups,
        'labels_per_group': args.labels_per_group, 'unseen_per_group': args.unseen_per_group,
        'n_images': args.n_images, 'diversity_mix': args.diversity_mix,
        'noise_sigma': args.noise_sigma,
        'labels_per_image': tuple(args.labels_per_image) if args.labels_per_image else None,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = SynthConfig(**values, seed=args.seed if args.seed is not None else 0)

    table, dataset = generate(cfg)
    paths = write_world(table, dataset, args.out, n_test=args.n_test, seed=cfg.seed)
    stats = synth_statistics(table, dataset)
    print_summary(stats, "Synthetic World", stream=sys.stderr)
    _emit_json({'config': config_summary(cfg), 'statistics': stats, 'paths': paths},
               os.path.join(args.out, 'world.json'))
    return 0


def cmd_train(args) -> int:
    cfg = train_config_from_args(args)
    threads = _threads(args)
    wordvecs = parse_vec_file(args.wordvecs)
    dataset = _load_dataset(args)
    print_summary(dataset_summary(dataset, args.features), "Training Data", stream=sys.stderr)

    with RunTracker(enabled=args.track, run_name=os.path.basename(args.out)) as tracker:
        tracker.log_params(asdict(cfg))
        params, log = train(dataset, wordvecs, cfg, threads=threads, progress=args.progress,
                            on_epoch=tracker.log_epoch)
        save_checkpoint(params, args.out)
        log_path = args.log or os.path.splitext(args.out)[0] + "_log.jsonl"
        write_training_log(log, log_path)
        logger.info(f"✓ Training log written to {log_path}")
        tracker.log_artifact(args.out)

    print_summary(log[-1], "Final Epoch", stream=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    wordvecs, dataset, params = _inference_inputs(args, need_labels=True)
    report, S = evaluate_model(params, dataset, wordvecs, args.task, args.k or DEFAULT_KS,
                               variant=args.variant, threads=_threads(args))
    print_summary(report.summary(), f"{args.task.upper()} Evaluation", stream=sys.stderr)
    result = report.to_dict()
    if args.diverse:
        diverse = diverse_subset_eval(S, ground_truth(dataset, S), args.min_labels, args.diverse_k, task=args.task)
        result['diverse_subset'] = diverse.to_dict()
        print_summary(diverse.summary(), "Diverse Subset", stream=sys.stderr)
    if args.scores_out:
        export_scores(S, args.scores_out)
    _emit_json(result, args.out)
    return 0


def cmd_rank(args) -> int:
    wordvecs, dataset, params = _inference_inputs(args, need_labels=False)
    tags = tag_list_for_task(dataset.seen, dataset.unseen, args.task)
    S = score_all(params, dataset, wordvecs, tags, variant=args.variant, threads=_threads(args))
    records = [
        {'image_id': image_id, 'tags': [{'tag': t, 'score': s, 'row': r} for t, s, r in ranked]}
        for image_id, ranked in zip(S.ids, top_k_tags(S, args.top_k))
    ]
    _emit_jsonl(records, args.out)
    return 0


def cmd_retrieve(args) -> int:
    wordvecs, dataset, params = _inference_inputs(args, need_labels=False)
    S = score_all(params, dataset, wordvecs, [args.tag], variant=args.variant, threads=_threads(args))
    position = {image_id: i for i, image_id in enumerate(S.ids)}
    ranked = retrieve(S, args.tag, args.top_n)
    _emit_json({
        'tag': args.tag,
        'results': [{'image_id': i, 'score': float(S.scores[position[i], 0])} for i in ranked],
    }, args.out)
    return 0


def cmd_report(args) -> int:
    wordvecs, dataset, params = _inference_inputs(args, need_labels=False)
    tags = tag_list_for_task(dataset.seen, dataset.unseen, args.task)
    S = score_all(params, dataset, wordvecs, tags, variant=args.variant, threads=_threads(args))
    gt = ground_truth(dataset, S) if args.labels else None
    records = row_attribution_report(S, gt, top_k=args.top_k)
    if args.out:
        write_attribution_report(records, args.out)
        logger.info(f"✓ Attribution report for {len(records)} images written to {args.out}")
    else:
        sys.stdout.write(write_attribution_report(records, None))
    return 0


def cmd_gradcheck(args) -> int:
    from DiversityLearning.sdl_gradcheck import GradcheckConfig, gradcheck_summary, run_gradcheck

    cfg = GradcheckConfig(
        n_instances=args.instances,
        seed=args.seed if args.seed is not None else 0,
        variants=tuple(args.variant) if args.variant else VARIANTS,
    )
    corrupt = (lambda g: -g) if args.inject_sign_flip else None
    result = run_gradcheck(cfg, corrupt=corrupt, progress=args.progress)
    print_summary(gradcheck_summary(result), "Gradient Check", stream=sys.stderr)
    _emit_json(result, args.out)
    if not result['passed']:
        logger.error(f"✗ Gradient check failed: max relative error {result['max_rel_err']:.3e}")
        return 2
    logger.info(f"✓ Gradient check passed: max relative error {result['max_rel_err']:.3e}")
    return 0


def cmd_ablate(args) -> int:
    from DiversityLearning.sdl_ablation import AblationConfig, format_table, run_ablation

    values = {
        'mode': args.mode, 'fixture': args.fixture, 'seeds': args.seeds,
        'base_seed': args.seed if args.seed is not None else 0,
        'threads': _threads(args), 'ks': tuple(args.k or DEFAULT_KS),
        'cells': tuple(args.cells or ()),
    }
    optional = {
        'epochs': args.epochs, 'batch_size': args.batch_size, 'max_lr': args.lr,
        'weight_decay': args.wd, 'm': args.m, 'lam': args.lam,
    }
    values.update({k: v for k, v in optional.items() if v is not None})
    if args.n_images is not None:
        values['overrides'] = {'n_images': args.n_images}
    cfg = AblationConfig(**values)

    with RunTracker(enabled=args.track, run_name=f"ablate-{cfg.mode}") as tracker:
        tracker.log_params({k: v for k, v in asdict(cfg).items() if k != 'overrides'})
        result, table = run_ablation(cfg, tracker=tracker, progress=args.progress)

    print(format_table(table), file=sys.stderr)
    result['table'] = format_table(table)
    _emit_json(result, args.out)
    return 0


# ==================== PARSER ====================

def _common(parser, seed=True):
    parser.add_argument('--verbose', action='store_true', help='DEBUG logging')
    parser.add_argument('--threads', type=int, default=None, help='worker threads (default: $SDL_THREADS or 1)')
    parser.add_argument('--progress', action='store_true', help='show progress bars')
    if seed:
        parser.add_argument('--seed', type=int, default=None, help='random seed (default 0)')


def _data_inputs(parser, labels_required: bool):
    parser.add_argument('--features', required=True, help='SDLF feature file')
    parser.add_argument('--labels', required=labels_required, help='TSV image_id<TAB>labels')
    parser.add_argument('--seen', required=True, help='seen tag list')
    parser.add_argument('--unseen', required=True, help='unseen tag list')
    parser.add_argument('--wordvecs', required=True, help='FastText .vec file')


def _inference(parser, labels_required: bool, tasks: bool = True):
    _data_inputs(parser, labels_required)
    parser.add_argument('--checkpoint', required=True, help='SDLM checkpoint')
    parser.add_argument('--variant', choices=VARIANTS, default='max', help='scoring rule')
    if tasks:
        parser.add_argument('--task', choices=TASKS, default='zsl', help='zsl: unseen tags, gzsl: all tags')
    parser.add_argument('--out', default=None, help='output file (default stdout)')


def _training_flags(parser):
    parser.add_argument('--m', type=int, default=None, help='rows of A (default 7; fast0tag forces 1)')
    parser.add_argument('--lambda', dest='lam', type=float, default=None, help='regularization λ (default 0.3)')
    parser.add_argument('--epochs', type=int, default=None)
    parser.add_argument('--batch-size', type=int, default=None)
    parser.add_argument('--lr', type=float, default=None, help='peak learning rate')
    parser.add_argument('--wd', type=float, default=None, help='decoupled weight decay')
    parser.add_argument('--track', action='store_true', help='log to MLflow')


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog='sdl', description='Zero-shot multi-label tag ranking with semantic diversity')
    sub = parser.add_subparsers(dest='command', required=True, parser_class=_ArgumentParser)

    p = sub.add_parser('synth', help='generate a synthetic world')
    _common(p)
    p.add_argument('--out', required=True, help='output directory')
    p.add_argument('--fixture', choices=('standard', 'diverse'), default=None, help='start from a preset')
    p.add_argument('--n-images', type=int, default=None)
    p.add_argument('--n-test', type=int, default=0, help='images held out into test files')
    p.add_argument('--groups', type=int, default=None)
    p.add_argument('--labels-per-group', type=int, default=None)
    p.add_argument('--unseen-per-group', type=int, default=None)
    p.add_argument('--labels-per-image', type=int, nargs=2, metavar=('MIN', 'MAX'), default=None)
    p.add_argument('--d-w', type=int, default=None)
    p.add_argument('--d-f', type=int, default=None)
    p.add_argument('--diversity-mix', type=float, default=None)
    p.add_argument('--noise-sigma', type=float, default=None)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser('train', help='train the head')
    _common(p)
    _data_inputs(p, labels_required=True)
    _training_flags(p)
    p.add_argument('--variant', choices=VARIANTS, default=None, help='scoring rule (default max)')
    p.add_argument('--no-sdw', action='store_true', help='disable the semantic diversity weight')
    p.add_argument('--config', default=None, help='YAML file of training settings')
    p.add_argument('--out', required=True, help='checkpoint path')
    p.add_argument('--log', default=None, help='JSON-lines training log (default <out>_log.jsonl)')
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser('eval', help='mAP and P/R/F1@K report')
    _common(p)
    _inference(p, labels_required=True)
    p.add_argument('--k', type=int, action='append', default=None, help='cutoff, repeatable (default 3 and 5)')
    p.add_argument('--diverse', action='store_true', help='add the many-label subset evaluation')
    p.add_argument('--min-labels', type=int, default=6)
    p.add_argument('--diverse-k', type=int, default=10)
    p.add_argument('--scores-out', default=None, help='Parquet export of the score matrix')
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser('rank', help='top-K tags per image')
    _common(p)
    _inference(p, labels_required=False)
    p.add_argument('--top-k', type=int, default=5)
    p.set_defaults(handler=cmd_rank)

    p = sub.add_parser('retrieve', help='ranked images for a query tag')
    _common(p)
    _inference(p, labels_required=False, tasks=False)
    p.add_argument('--tag', required=True)
    p.add_argument('--top-n', type=int, default=10)
    p.set_defaults(handler=cmd_retrieve)

    p = sub.add_parser('report', help='per-row attribution of each image\'s top tags')
    _common(p)
    _inference(p, labels_required=False)
    p.add_argument('--top-k', type=int, default=10)
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser('gradcheck', help='finite-difference gradient verification')
    _common(p)
    p.add_argument('--instances', type=int, default=100, help='instances per variant')
    p.add_argument('--variant', choices=VARIANTS, action='append', default=None, help='repeatable (default all)')
    p.add_argument('--inject-sign-flip', action='store_true', help='negate analytic gradients (must fail)')
    p.add_argument('--out', default=None)
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser('ablate', help='ablation grids on a synthetic fixture')
    _common(p)
    _training_flags(p)
    p.add_argument('--mode', choices=('table', 'm-sweep', 'lambda-sweep', 'diverse'), default='table')
    p.add_argument('--fixture', choices=('standard', 'diverse'), default='standard')
    p.add_argument('--seeds', type=int, default=5)
    p.add_argument('--n-images', type=int, default=None, help='override the fixture size')
    p.add_argument('--cell', dest='cells', action='append', default=None, help='train only this cell, repeatable')
    p.add_argument('--k', type=int, action='append', default=None)
    p.add_argument('--out', default=None)
    p.set_defaults(handler=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)

    try:
        return args.handler(args)
    except SDLValidationError as e:
        logger.error(f"✗ {e}")
        return 1
    except FileNotFoundError as e:
        logger.error(f"✗ {e}")
        return 1
    except SDLNumericError as e:
        logger.error(f"✗ {e}")
        return 2
    except Exception as e:
        logger.exception(f"✗ {args.command} failed: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
