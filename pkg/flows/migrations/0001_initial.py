import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='TrainingRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('mode', models.CharField(choices=[('comet', 'COMET'), ('realnvp_baseline', 'RealNVP baseline')], default='comet', max_length=20)),
                ('dimension', models.PositiveIntegerField(blank=True, null=True)),
                ('quantile_a', models.FloatField()),
                ('quantile_b', models.FloatField()),
                ('seed', models.BigIntegerField(default=0)),
                ('config_hash', models.CharField(db_index=True, max_length=16)),
                ('config', models.JSONField(default=dict, help_text='Full training configuration')),
                ('train_path', models.CharField(max_length=500)),
                ('val_path', models.CharField(max_length=500)),
                ('model_path', models.CharField(max_length=500)),
                ('status', models.CharField(choices=[('running', 'Running'), ('completed', 'Completed'), ('failed', 'Failed')], default='running', max_length=10)),
                ('best_epoch', models.PositiveIntegerField(blank=True, null=True)),
                ('best_val_loss', models.FloatField(blank=True, null=True)),
                ('epochs_run', models.PositiveIntegerField(default=0)),
                ('error_message', models.TextField(blank=True)),
                ('started_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'verbose_name': 'Training Run',
                'verbose_name_plural': 'Training Runs',
                'ordering': ['-started_at'],
            },
        ),
        migrations.CreateModel(
            name='EpochRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('epoch', models.PositiveIntegerField()),
                ('train_loss', models.FloatField()),
                ('val_loss', models.FloatField()),
                ('is_best', models.BooleanField(default=False)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='epochs', to='flows.trainingrun')),
            ],
            options={
                'ordering': ['run', 'epoch'],
                'unique_together': {('run', 'epoch')},
            },
        ),
    ]
