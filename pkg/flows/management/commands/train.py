from pathlib import Path

from cometflows.exceptions import CometError, ParameterError
from datasets.services.tabular import load_csv
from flows import registry
from flows.cli import CliConfig, CometCommand, read_config_file
from flows.services.comet import TrainConfig, fit
from flows.services.serialization import save_model


def training_log_path(model_path):
    model_path = Path(model_path)
    return model_path.with_name(model_path.stem + '.log.csv')


class Command(CometCommand):
    help = 'Train a COMET (or RealNVP baseline) model on train/validation CSV files'

    def add_arguments(self, parser):
        parser.add_argument('--train', required=True, help='Training CSV (with header)')
        parser.add_argument('--val', required=True, help='Validation CSV (with header)')
        parser.add_argument('--out', required=True, help='Model file to write')
        parser.add_argument('--log', help='Training log CSV (default: <model stem>.log.csv)')
        parser.add_argument('--config', help='key=value file with training defaults')

        parser.add_argument('--mode', choices=['comet', 'realnvp'], help='Model mode (default comet)')
        parser.add_argument('--quantiles', nargs=2, type=float, metavar=('A', 'B'),
                            help='Tail quantiles a < b for every column')
        parser.add_argument('--column-quantiles', nargs=3, action='append', default=[],
                            metavar=('NAME', 'A', 'B'), help='Per-column tail quantiles (repeatable)')
        parser.add_argument('--layers', type=int, help='Number of coupling layers')
        parser.add_argument('--hidden', nargs='+', type=int, help='Conditioner hidden sizes')
        parser.add_argument('--lr', type=float, help='Adam learning rate')
        parser.add_argument('--batch-size', type=int)
        parser.add_argument('--sigma-max', type=float, help='Largest training noise level')
        parser.add_argument('--max-epochs', type=int)
        parser.add_argument('--patience', type=int, help='Early-stopping patience in epochs')
        parser.add_argument('--scale-clamp', type=float)
        parser.add_argument('--seed', type=int)

    def _column_quantiles(self, entries):
        out = []
        for name, a, b in entries:
            try:
                out.append((name, float(a), float(b)))
            except ValueError as exc:
                raise ParameterError(f"--column-quantiles {name}: quantiles must be numbers") from exc
        return tuple(out)

    def resolve(self, options):
        """COMET_CONFIG < --config file < flags."""
        inputs = {'train': options['train'], 'val': options['val']}
        if options.get('config'):
            inputs['config'] = options['config']
        model_path = Path(options['out'])
        log_path = Path(options['log']) if options.get('log') else training_log_path(model_path)
        cli = CliConfig('train', inputs=inputs, outputs={'model': model_path, 'log': log_path})
        cli.check_inputs()
        cli.check_outputs()

        cfg = TrainConfig.from_settings()
        if options.get('config'):
            cfg = cfg.merged(read_config_file(options['config']))
        cfg = cfg.replace(
            mode=options.get('mode'),
            quantiles=options.get('quantiles'),
            column_quantiles=self._column_quantiles(options.get('column_quantiles') or []) or None,
            n_layers=options.get('layers'),
            hidden=options.get('hidden'),
            lr=options.get('lr'),
            batch_size=options.get('batch_size'),
            sigma_max=options.get('sigma_max'),
            max_epochs=options.get('max_epochs'),
            patience=options.get('patience'),
            scale_clamp=options.get('scale_clamp'),
            seed=options.get('seed'),
        )
        return CliConfig(
            'train', inputs=cli.inputs, outputs=cli.outputs,
            seed=cfg.seed, mode=cfg.mode, train_config=cfg,
        )

    def run(self, **options):
        cli = self.resolve(options)
        cfg = cli.train_config
        train = load_csv(cli.inputs['train'])
        val = load_csv(cli.inputs['val'])

        run = registry.start_run(cfg, cli.inputs['train'], cli.inputs['val'], cli.outputs['model'], train.d)
        try:
            model, log = fit(train, val, cfg, on_epoch=lambda stats: registry.record_epoch(run, stats))
        except CometError as exc:
            registry.fail_run(run, exc)
            raise

        save_model(model, cli.outputs['model'])
        log.write_csv(cli.outputs['log'])
        registry.complete_run(run, model, log)

        self.summary('TRAINING COMPLETE', [
            ('Mode', model.mode),
            ('Dimension', model.d),
            ('Quantiles', cfg.quantiles),
            ('Epochs run', log.epochs_run),
            ('Best epoch', log.best_epoch),
            ('Best validation loss', f"{log.best_val_loss:.4f}"),
            ('Model file', cli.outputs['model']),
            ('Training log', cli.outputs['log']),
        ])
        for stats in log.epochs:
            self.stdout.write(
                f"  epoch {stats.epoch:3d}  train {stats.train_loss:.4f}  val {stats.val_loss:.4f}"
                f"{'  *' if stats.is_best else ''}"
            )
