import json
import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from django.db import transaction

from experiments.models import ExperimentRun
from exports.services import SUMMARY_NAME

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = "Заносит в журнал запуски по найденным summary.json, которых там ещё нет."

    def add_arguments(self, parser):
        parser.add_argument(
            "--dir",
            default=None,
            help="Каталог с отчётами (по умолчанию HEISLAB_OUTPUT_DIR)",
        )
        parser.add_argument(
            "--dry-run",
            action="store_true",
            help="Не сохранять изменения, только показать сколько записей будет добавлено",
        )
        parser.add_argument(
            "--limit",
            type=int,
            default=0,
            help="Ограничить количество добавляемых записей (0 = без ограничения)",
        )

    def handle(self, *args, **options):
        dry_run = bool(options["dry_run"])
        limit = int(options["limit"] or 0)
        root = Path(options["dir"] or settings.HEISLAB_OUTPUT_DIR)
        if not root.is_dir():
            raise CommandError(f"Каталог {root} не найден.", returncode=4)

        known = set(ExperimentRun.objects.values_list("summary_path", flat=True))
        paths = [p for p in sorted(root.rglob(SUMMARY_NAME)) if str(p) not in known]
        if limit > 0:
            paths = paths[:limit]

        created = 0
        skipped = 0

        self.stdout.write(self.style.NOTICE("Backfill журнала запусков..."))

        try:
            with transaction.atomic():
                for path in paths:
                    try:
                        summary = json.loads(path.read_text(encoding="utf-8"))
                    except (OSError, ValueError) as e:
                        logger.warning("Пропуск %s: %s", path, e)
                        skipped += 1
                        continue
                    if not isinstance(summary, dict) or "command" not in summary:
                        skipped += 1
                        continue

                    config = summary.get("config") or {}
                    passed = bool(summary.get("passed"))
                    ExperimentRun.objects.create(
                        command=summary["command"],
                        seed=int(config.get("seed") or 0),
                        config=config,
                        passed=passed,
                        exit_code=ExperimentRun.Outcome.PASSED if passed else ExperimentRun.Outcome.FAILED,
                        summary_path=str(path),
                        schema=int(summary.get("schema") or 1),
                    )
                    created += 1

                if dry_run:
                    # откатываем транзакцию, чтобы ничего не записалось
                    raise RuntimeError("DRY_RUN_ROLLBACK")

        except RuntimeError as e:
            if str(e) != "DRY_RUN_ROLLBACK":
                raise

        self.stdout.write(self.style.SUCCESS(
            f"Найдено: {len(paths)}. Добавлено: {created}. Пропущено: {skipped}. {'(dry-run)' if dry_run else ''}"
        ))
