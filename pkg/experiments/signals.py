import logging

from django.conf import settings
from django.dispatch import Signal, receiver

from .models import ExperimentRun

logger = logging.getLogger(__name__)

# отправляется после каждого запуска: summary, exit_code, summary_path, journal
run_finished = Signal()


@receiver(run_finished)
def journal_run(sender, summary: dict, exit_code: int, summary_path: str = "", journal: bool = False, **kwargs):
    if not (journal or settings.HEISLAB_JOURNAL):
        return None
    config = summary.get("config") or {}
    run = ExperimentRun.objects.create(
        command=summary.get("command", ""),
        seed=int(config.get("seed") or 0),
        config=config,
        passed=bool(summary.get("passed")) and exit_code == 0,
        exit_code=exit_code,
        summary_path=str(summary_path or ""),
        schema=int(summary.get("schema") or 1),
    )
    logger.debug("Запуск записан в журнал: %s", run)
    return run
