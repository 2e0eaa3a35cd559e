import json
import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from core.exceptions import NumericalError, PreconditionError
from experiments import services
from experiments.forms import COMMANDS, ExperimentConfigForm
from experiments.signals import run_finished
from exports.services import SCHEMA_VERSION, emit_report

logger = logging.getLogger(__name__)

REFUSED, FAILED, IO_ERROR = 2, 3, 4

FLAG_FIELDS = ("n", "grid", "delta", "kmin", "kmax", "p", "q", "p0", "seed", "samples", "pairs", "systems", "out")


def _parse_tol(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items or []:
        name, sep, value = item.partition("=")
        if not sep or not name.strip():
            raise CommandError(f"--tol ожидает name=value, получено {item!r}.", returncode=REFUSED)
        out[name.strip()] = value.strip()
    return out


class Command(BaseCommand):
    help = "Запускает численную проверку и пишет отчёт: summary.json, CSV-таблицы, по запросу книгу Excel."

    def add_arguments(self, parser):
        parser.add_argument("experiment", choices=[c for c, _ in COMMANDS], help="Команда эксперимента")
        parser.add_argument("--n", type=int, help="Комплексная размерность")
        parser.add_argument("--grid", type=int, help="Разрешение сетки по каждой оси z")
        parser.add_argument("--delta", type=float, help="Параметр диадической системы в (0, 1)")
        parser.add_argument("--kmin", type=int, help="Грубейший уровень")
        parser.add_argument("--kmax", type=int, help="Мельчайший уровень")
        parser.add_argument("--p", type=float)
        parser.add_argument("--q", type=float)
        parser.add_argument("--p0", type=float)
        parser.add_argument("--seed", type=int)
        parser.add_argument("--samples", type=int, help="Число случайных выборок (verify-group)")
        parser.add_argument("--pairs", type=int, help="Число пар (f, g) (sparse-dominate)")
        parser.add_argument("--systems", type=int, help="Число диадических систем")
        parser.add_argument("--out", help="Каталог отчёта (по умолчанию HEISLAB_OUTPUT_DIR/<команда>)")
        parser.add_argument(
            "--tol",
            action="append",
            default=[],
            metavar="NAME=VALUE",
            help="Переопределить допуск (можно повторять)",
        )
        parser.add_argument("--config", help="JSON-файл с параметрами; флаги его перекрывают")
        parser.add_argument("--xlsx", action="store_true", help="Дополнительно записать книгу Excel")
        parser.add_argument("--journal", action="store_true", help="Записать запуск в журнал")

    def _load_config(self, path) -> dict:
        if not path:
            return {}
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise CommandError(f"Не удалось прочитать {path}: {e}", returncode=IO_ERROR) from e
        try:
            data = json.loads(text)
        except ValueError as e:
            raise CommandError(f"Файл {path} не является JSON: {e}", returncode=REFUSED) from e
        if not isinstance(data, dict):
            raise CommandError(f"В {path} ожидается JSON-объект.", returncode=REFUSED)
        return data

    def _finish(self, summary: dict, exit_code: int, summary_path="", journal: bool = False):
        run_finished.send(sender=self.__class__, summary=summary, exit_code=exit_code,
                          summary_path=summary_path, journal=journal)

    def handle(self, *args, **options):
        data = self._load_config(options.get("config"))
        for key in FLAG_FIELDS:
            if options.get(key) is not None:
                data[key] = options[key]
        tolerances = dict(data.get("tolerances") or {})
        tolerances.update(_parse_tol(options["tol"]))
        data["tolerances"] = tolerances
        data["command"] = options["experiment"]
        data["xlsx"] = bool(options["xlsx"] or data.get("xlsx"))
        data["journal"] = bool(options["journal"] or data.get("journal"))

        stub = {"schema": SCHEMA_VERSION, "command": data["command"], "config": {"seed": data.get("seed", 0)},
                "passed": False}

        form = ExperimentConfigForm(data=data)
        if not form.is_valid():
            message = "; ".join(str(m) for errors in form.errors.values() for m in errors)
            self._finish(stub, REFUSED, journal=data["journal"])
            raise CommandError(f"Отказ: {message}", returncode=REFUSED)
        cfg = form.config

        self.stdout.write(self.style.NOTICE(f"{cfg.command}: n={cfg.n}, seed={cfg.seed}..."))
        try:
            report = services.run(cfg)
        except PreconditionError as e:
            self._finish({**stub, "config": cfg.as_dict()}, REFUSED, journal=cfg.journal)
            raise CommandError(f"Отказ: {'; '.join(e.messages)}", returncode=REFUSED) from e
        except NumericalError as e:
            self._finish({**stub, "config": cfg.as_dict()}, FAILED, journal=cfg.journal)
            raise CommandError(f"Численный дефект: {'; '.join(e.messages)}", returncode=FAILED) from e

        summary = report.summary()
        try:
            paths = emit_report(summary, report.tables, cfg.out, xlsx=cfg.xlsx)
            for name, writer in sorted(report.attachments.items()):
                paths.append(writer(cfg.out / name))
        except OSError as e:
            self._finish(summary, IO_ERROR, journal=cfg.journal)
            raise CommandError(f"Не удалось записать отчёт в {cfg.out}: {e}", returncode=IO_ERROR) from e

        for c in report.criteria:
            style = self.style.SUCCESS if c.passed else self.style.ERROR
            self.stdout.write(style(f"  [{'ok' if c.passed else 'FAIL'}] {c.name}: {c.value!r} {c.relation} {c.bound!r}"))

        exit_code = 0 if report.passed else FAILED
        self._finish(summary, exit_code, summary_path=str(paths[0]), journal=cfg.journal)
        if exit_code:
            failed = sum(1 for c in report.criteria if not c.passed)
            raise CommandError(f"Не выполнено критериев: {failed}. Отчёт: {paths[0]}", returncode=FAILED)

        self.stdout.write(self.style.SUCCESS(f"Готово: {len(report.criteria)} критериев, отчёт в {cfg.out}"))
