from pathlib import Path

from flows.cli import CliConfig, CometCommand
from datasets.services.synthetic import SPLIT_SIZES, gen_synthetic, standard_splits
from datasets.services.tabular import save_csv


class Command(CometCommand):
    help = 'Generate the 8-dimensional heavy-tail synthetic benchmark as CSV'

    def add_arguments(self, parser):
        parser.add_argument('--n', type=int, default=1000, help='Number of rows (single-file mode)')
        parser.add_argument('--seed', type=int, default=0, help='Random seed')
        parser.add_argument('--out', required=True, help='Output CSV path, or file stem with --splits')
        parser.add_argument(
            '--splits', choices=sorted(SPLIT_SIZES),
            help='Write <stem>_train.csv, <stem>_val.csv and <stem>_test.csv at desk or full scale',
        )

    def run(self, **options):
        out = Path(options['out'])
        seed = options['seed']

        if options['splits']:
            stem = out.with_suffix('') if out.suffix == '.csv' else out
            paths = {name: Path(f"{stem}_{name}.csv") for name in ('train', 'val', 'test')}
            CliConfig('synth', outputs=paths, seed=seed).check_outputs()
            datasets = standard_splits(seed, SPLIT_SIZES[options['splits']])
            rows = []
            for ds in datasets:
                save_csv(ds, paths[ds.split])
                rows.append((paths[ds.split], f"{ds.n} rows x {ds.d} columns"))
            self.summary(f"SYNTHETIC SPLITS ({options['splits']}, seed {seed})", rows)
            return

        CliConfig('synth', outputs={'output': out}, seed=seed).check_outputs()
        ds = gen_synthetic(options['n'], seed)
        save_csv(ds, out)
        self.summary('SYNTHETIC DATA', [
            ('File', out),
            ('Rows', ds.n),
            ('Columns', ds.d),
            ('Seed', seed),
        ])
