from dataclasses import dataclass, field
from pathlib import Path

from django import forms
from django.conf import settings

from analysis.weights import ExponentPair, Membership, check_window, improving_region, sparse_region
from core.group import GroupDim

COMMANDS = [
    ("verify-group", "Групповой закон и норма Кораньи"),
    ("verify-quadrature", "Квадратура сферы и полярное разложение"),
    ("verify-gamma", "Преобразование Фурье ядра F"),
    ("verify-representation", "Разложение sigma_t по P_t и I_gamma"),
    ("lp-improving", "Улучшение L^p: наклон по r"),
    ("continuity", "Непрерывность по сдвигу: наклон по |a|"),
    ("build-grid", "Построение диадических систем"),
    ("verify-grid", "Проверка диадических систем"),
    ("sparse-dominate", "Разреженная мажорация"),
    ("weights", "Показатели и веса"),
    ("spectral-rk", "Коэффициенты Лагерра R_k"),
]

_DYADIC = {"n": 1, "grid": 16, "delta": 0.5, "kmin": -2, "kmax": 1}
# n = 2, 8^4 x 32 ячеек, шесть уровней: delta^-4 меньше половины расстояния между
# противоположными угловыми ячейками, поэтому на уровне Q0 больше одного куба
_SPARSE = {"n": 2, "grid": 8, "delta": 0.9, "kmin": -5, "kmax": 0}

# уровней ниже Q0 в разреженном прогоне: Q0 и его дети имеют A_Q
SPARSE_DEPTH = 4

# значения по умолчанию для каждой команды; флаги и --config их перекрывают
COMMAND_DEFAULTS = {
    "verify-group": {"n": 2, "samples": 100_000},
    "verify-quadrature": {"n": 2, "grid": 20},
    "verify-gamma": {"n": 2},
    "verify-representation": {"n": 2},
    "lp-improving": {"n": 2, "grid": 16, "p": 2.0, "q": 3.0},
    "continuity": {"n": 2, "grid": 10, "p": 2.0, "q": 3.0},
    "build-grid": {**_DYADIC, "systems": 3},
    "verify-grid": {**_DYADIC, "systems": 3},
    "sparse-dominate": {**_SPARSE, "p": 1 / 0.6, "q": 1 / 0.6, "pairs": 20},
    "weights": {**_DYADIC, "p": 1.35, "p0": 1.2, "systems": 1},
    "spectral-rk": {"n": 2},
}

FALLBACKS = {"seed": 0, "samples": 100_000, "pairs": 20, "systems": 1}

DYADIC_COMMANDS = {"build-grid", "verify-grid", "sparse-dominate", "weights"}


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    n: int
    out: Path
    grid: int | None = None
    delta: float | None = None
    kmin: int | None = None
    kmax: int | None = None
    p: float | None = None
    q: float | None = None
    p0: float | None = None
    seed: int = 0
    samples: int = 100_000
    pairs: int = 20
    systems: int = 1
    tolerances: dict = field(default_factory=dict)
    xlsx: bool = False
    journal: bool = False
    threads: int = 1

    @property
    def dim(self) -> GroupDim:
        return GroupDim(self.n)

    def tol(self, name: str) -> float:
        return float(self.tolerances[name])

    def as_dict(self) -> dict:
        """Параметры, от которых зависит результат (без путей и числа потоков)."""
        keys = ("command", "n", "grid", "delta", "kmin", "kmax", "p", "q", "p0",
                "seed", "samples", "pairs", "systems")
        out = {k: getattr(self, k) for k in keys}
        out["tolerances"] = dict(sorted(self.tolerances.items()))
        return out


class ExperimentConfigForm(forms.Form):
    command = forms.ChoiceField(label="Команда", choices=COMMANDS)
    n = forms.IntegerField(label="Комплексная размерность n", min_value=1, required=False)
    grid = forms.IntegerField(label="Разрешение сетки", min_value=2, required=False)
    delta = forms.FloatField(label="delta", required=False)
    kmin = forms.IntegerField(label="Грубейший уровень", required=False)
    kmax = forms.IntegerField(label="Мельчайший уровень", required=False)
    p = forms.FloatField(label="p", required=False)
    q = forms.FloatField(label="q", required=False)
    p0 = forms.FloatField(label="p0", required=False)
    seed = forms.IntegerField(label="Seed", min_value=0, required=False)
    samples = forms.IntegerField(label="Число случайных выборок", min_value=1, required=False)
    pairs = forms.IntegerField(label="Число пар (f, g)", min_value=1, required=False)
    systems = forms.IntegerField(label="Число диадических систем", min_value=1, required=False)
    tolerances = forms.JSONField(label="Допуски", required=False)
    out = forms.CharField(label="Каталог отчёта", required=False)
    xlsx = forms.BooleanField(label="Книга Excel", required=False)
    journal = forms.BooleanField(label="Записать в журнал", required=False)

    def clean_tolerances(self):
        overrides = self.cleaned_data.get("tolerances") or {}
        if not isinstance(overrides, dict):
            raise forms.ValidationError("Допуски задаются словарём имя -> значение.")
        known = settings.HEISLAB_TOLERANCES
        unknown = sorted(set(overrides) - set(known))
        if unknown:
            raise forms.ValidationError(
                f"Неизвестные допуски: {', '.join(unknown)}. Доступны: {', '.join(sorted(known))}."
            )
        merged = dict(known)
        for name, value in overrides.items():
            try:
                value = float(value)
            except (TypeError, ValueError):
                raise forms.ValidationError(f"Допуск {name} должен быть числом, получено {value!r}.")
            if not value > 0:
                raise forms.ValidationError(f"Допуск {name} должен быть положительным.")
            merged[name] = value
        return merged

    def clean(self):
        cleaned = super().clean()
        command = cleaned.get("command")
        if not command or self.errors:
            return cleaned

        for key, value in {**FALLBACKS, **COMMAND_DEFAULTS[command]}.items():
            if cleaned.get(key) is None:
                cleaned[key] = value
        if cleaned.get("n") is None:
            cleaned["n"] = 2

        n = cleaned["n"]
        if command in DYADIC_COMMANDS:
            self._clean_dyadic(cleaned)
        if command in ("lp-improving", "continuity"):
            e = ExponentPair.from_exponents(cleaned["p"], cleaned["q"])
            if improving_region(n, e) is not Membership.INSIDE:
                raise forms.ValidationError(
                    f"(1/p, 1/q) = ({e.inv_p:.4g}, {e.inv_q:.4g}) вне области улучшения L^p для n={n}."
                )
        if command == "sparse-dominate":
            e = ExponentPair.from_exponents(cleaned["p"], cleaned["q"])
            if sparse_region(n, e) is not Membership.INSIDE:
                raise forms.ValidationError(
                    f"(1/p, 1/q) = ({e.inv_p:.4g}, {e.inv_q:.4g}) вне области разреженной оценки для n={n}."
                )
            if cleaned["kmax"] - cleaned["kmin"] < SPARSE_DEPTH:
                raise forms.ValidationError(
                    f"Для семейства A_Q из нескольких уровней нужно kmax - kmin >= {SPARSE_DEPTH}."
                )
        if command == "weights":
            check_window(n, cleaned["p"], cleaned["p0"])
        return cleaned

    @staticmethod
    def _clean_dyadic(cleaned):
        delta = cleaned["delta"]
        if not 0 < delta < 1:
            raise forms.ValidationError(f"delta должно лежать в (0, 1), получено {delta}.")
        if cleaned["kmin"] > cleaned["kmax"]:
            raise forms.ValidationError(
                f"Пустое окно уровней: kmin={cleaned['kmin']} > kmax={cleaned['kmax']}."
            )

    @property
    def config(self) -> ExperimentConfig:
        data = self.cleaned_data
        out = data.get("out") or ""
        return ExperimentConfig(
            command=data["command"],
            n=data["n"],
            out=Path(out) if out else Path(settings.HEISLAB_OUTPUT_DIR) / data["command"],
            grid=data.get("grid"),
            delta=data.get("delta"),
            kmin=data.get("kmin"),
            kmax=data.get("kmax"),
            p=data.get("p"),
            q=data.get("q"),
            p0=data.get("p0"),
            seed=data["seed"],
            samples=data["samples"],
            pairs=data["pairs"],
            systems=data["systems"],
            tolerances=data["tolerances"],
            xlsx=bool(data.get("xlsx")),
            journal=bool(data.get("journal")),
            threads=settings.HEISLAB_THREADS,
        )
