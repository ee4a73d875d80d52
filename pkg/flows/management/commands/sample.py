from datasets.services.tabular import Dataset, save_csv
from flows.cli import CliConfig, CometCommand, command_rng
from flows.services.serialization import load_model


class Command(CometCommand):
    help = 'Draw samples from a trained model into a CSV file'

    def add_arguments(self, parser):
        parser.add_argument('--model', required=True, help='Model file written by train')
        parser.add_argument('--n', type=int, required=True, help='Number of samples')
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--sigma', type=float, default=0.0, help='Noise level to condition on (default 0)')
        parser.add_argument('--out', required=True, help='Output CSV path')

    def run(self, **options):
        cli = CliConfig(
            'sample',
            inputs={'model': options['model']},
            outputs={'samples': options['out']},
            seed=options['seed'],
            sigma=options['sigma'],
        )
        cli.check_inputs()
        cli.check_outputs()

        model = load_model(cli.inputs['model'])
        values = model.sample(options['n'], sigma=cli.sigma, rng=command_rng(cli.seed))
        ds = Dataset(values, model.columns, provenance={'model': str(cli.inputs['model']), 'seed': cli.seed})
        save_csv(ds, cli.outputs['samples'])

        self.summary('SAMPLES WRITTEN', [
            ('File', cli.outputs['samples']),
            ('Rows', ds.n),
            ('Columns', ds.d),
            ('Mode', model.mode),
            ('Sigma', cli.sigma),
            ('Seed', cli.seed),
        ])
