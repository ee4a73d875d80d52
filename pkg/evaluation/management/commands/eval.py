import logging
from pathlib import Path

from django.conf import settings
from django.db import DatabaseError

from cometflows.exceptions import ShapeError
from datasets.services.tabular import load_csv
from evaluation.models import EvaluationRecord
from evaluation.services.report import evaluate, write_plot_csv, write_report
from flows.cli import CliConfig, CometCommand, command_rng
from flows.services.serialization import load_model

logger = logging.getLogger(__name__)


def plot_csv_path(report_path):
    report_path = Path(report_path)
    return report_path.with_name(report_path.stem + '.plot.csv')


class Command(CometCommand):
    help = 'Evaluate a model on a held-out CSV: NLL, tail dependence, PIT uniformity'

    def add_arguments(self, parser):
        parser.add_argument('--model', required=True, help='Model file written by train')
        parser.add_argument('--test', required=True, help='Held-out CSV (with header)')
        parser.add_argument('--out', required=True, help='Report JSON path')
        parser.add_argument('--plot', help='Tail-dependence CSV (default: <report stem>.plot.csv)')
        parser.add_argument('--samples', type=int, help='Model samples to draw (default COMET_EVAL_SAMPLES)')
        parser.add_argument('--seed', type=int, default=0)

    def run(self, **options):
        report_path = Path(options['out'])
        plot_path = Path(options['plot']) if options.get('plot') else plot_csv_path(report_path)
        cli = CliConfig(
            'eval',
            inputs={'model': options['model'], 'test': options['test']},
            outputs={'report': report_path, 'plot': plot_path},
            seed=options['seed'],
        )
        cli.check_inputs()
        cli.check_outputs()
        sample_count = options.get('samples') or settings.COMET_CONFIG['EVAL_SAMPLES']

        model = load_model(cli.inputs['model'])
        test = load_csv(cli.inputs['test'])
        if test.d != model.d:
            raise ShapeError(f"model has {model.d} columns, {cli.inputs['test']} has {test.d}")

        report = evaluate(model, test, sample_count, rng=command_rng(cli.seed), seed=cli.seed)
        write_report(report, cli.outputs['report'])
        write_plot_csv(report, cli.outputs['plot'])

        try:
            EvaluationRecord.objects.create(
                model_path=str(cli.inputs['model']),
                test_path=str(cli.inputs['test']),
                mode=report.mode,
                avg_nll=report.avg_nll,
                sample_count=report.n_samples,
                report=report.to_dict(),
            )
        except DatabaseError as exc:
            logger.warning(f"[REGISTRY] evaluation not recorded: {exc}")

        self.stdout.write(f"avg_nll: {report.avg_nll:.4f}")
        self.summary('EVALUATION', [
            ('Mode', report.mode),
            ('Test rows', report.n_test),
            ('Samples', report.n_samples),
            ('Report', cli.outputs['report']),
            ('Plot CSV', cli.outputs['plot']),
        ])
