from django.db import models


class ExperimentRun(models.Model):
    """Запись журнала: один запуск команды эксперимента."""

    class Outcome(models.IntegerChoices):
        PASSED = 0, "Пройдено"
        REFUSED = 2, "Отказ по предусловию"
        FAILED = 3, "Нарушен инвариант"
        IO_ERROR = 4, "Ошибка ввода-вывода"

    created_at = models.DateTimeField(auto_now_add=True)
    command = models.CharField(max_length=40)
    seed = models.BigIntegerField(default=0)
    config = models.JSONField(default=dict)
    passed = models.BooleanField(default=False)
    exit_code = models.PositiveSmallIntegerField(choices=Outcome.choices, default=Outcome.PASSED)
    summary_path = models.CharField(max_length=500, blank=True)
    schema = models.PositiveSmallIntegerField(default=1)

    class Meta:
        ordering = ["-created_at", "-id"]
        indexes = [
            models.Index(fields=["command", "seed"], name="run_command_seed_idx"),
        ]

    def __str__(self):
        status = "ok" if self.passed else f"код {self.exit_code}"
        return f"{self.command} (seed={self.seed}) – {status}"
