# Generated by Django 5.2.10 on 2026-10-19 09:12

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('command', models.CharField(max_length=40)),
                ('seed', models.BigIntegerField(default=0)),
                ('config', models.JSONField(default=dict)),
                ('passed', models.BooleanField(default=False)),
                ('exit_code', models.PositiveSmallIntegerField(choices=[(0, 'Пройдено'), (2, 'Отказ по предусловию'), (3, 'Нарушен инвариант'), (4, 'Ошибка ввода-вывода')], default=0)),
                ('summary_path', models.CharField(blank=True, max_length=500)),
                ('schema', models.PositiveSmallIntegerField(default=1)),
            ],
            options={
                'ordering': ['-created_at', '-id'],
                'indexes': [models.Index(fields=['command', 'seed'], name='run_command_seed_idx')],
            },
        ),
    ]
