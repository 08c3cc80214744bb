"""
Run configuration: TOML file overlaid by command-line flags, validated by a form
"""
import logging
import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path

from django import forms
from django.conf import settings

from .exceptions import DomainError
from .models import MODEL_NAMES, model_from_name
from .ocsolve import RULES
from .procedures import (
    Shiryaev,
    ShiryaevRoberts,
    ShiryaevRobertsPollak,
    ShiryaevRobertsR,
)


logger = logging.getLogger("quickdetect.forms")

PROCEDURES = ("shiryaev", "sr", "sr-r", "srp")


def _choices(values):
    return [(value, value) for value in values]


class RunConfigForm(forms.Form):
    """
    Validates one run. Field names double as the diagnostics' field names.
    """
    model = forms.ChoiceField(choices=_choices(MODEL_NAMES))
    delta = forms.FloatField(required=False)
    theta = forms.FloatField(required=False)
    proc = forms.ChoiceField(choices=_choices(PROCEDURES), required=False)
    r = forms.FloatField(required=False)
    p = forms.FloatField(required=False)
    pi = forms.FloatField(required=False)
    gamma = forms.FloatField(required=False)
    A = forms.FloatField(required=False)
    N = forms.IntegerField(required=False)
    rule = forms.ChoiceField(choices=_choices(RULES), required=False)
    seed = forms.IntegerField(required=False)
    output = forms.CharField(required=False)
    csv = forms.CharField(required=False)

    def __init__(self, *args, require_target=True, **kwargs):
        super().__init__(*args, **kwargs)
        self.require_target = require_target

    def clean_delta(self):
        delta = self.cleaned_data.get('delta')
        if delta is not None and delta <= 0:
            raise forms.ValidationError("must be positive")
        return delta

    def clean_theta(self):
        theta = self.cleaned_data.get('theta')
        if theta is not None and theta <= 0:
            raise forms.ValidationError("must be positive")
        return theta

    def clean_r(self):
        r = self.cleaned_data.get('r')
        if r is not None and r < 0:
            raise forms.ValidationError("must be nonnegative")
        return r

    def clean_p(self):
        p = self.cleaned_data.get('p')
        if p is not None and not 0 < p < 1:
            raise forms.ValidationError("must lie in (0, 1)")
        return p

    def clean_pi(self):
        pi = self.cleaned_data.get('pi')
        if pi is not None and not 0 <= pi < 1:
            raise forms.ValidationError("must lie in [0, 1)")
        return pi

    def clean_gamma(self):
        gamma = self.cleaned_data.get('gamma')
        if gamma is not None and gamma <= 1:
            raise forms.ValidationError("target ARL must exceed 1")
        return gamma

    def clean_A(self):
        A = self.cleaned_data.get('A')
        if A is not None and A <= 0:
            raise forms.ValidationError("threshold must be positive")
        return A

    def clean_N(self):
        N = self.cleaned_data.get('N')
        if N is not None and N < 10:
            raise forms.ValidationError("grid needs at least 10 cells")
        return N

    def _clean_path(self, name):
        value = self.cleaned_data.get(name)
        if not value or value == '-':
            return value
        parent = Path(value).expanduser().resolve().parent
        if not parent.is_dir() or not os.access(parent, os.W_OK):
            raise forms.ValidationError(f"directory {parent} is not writable")
        return value

    def clean_output(self):
        return self._clean_path('output')

    def clean_csv(self):
        return self._clean_path('csv')

    def clean(self):
        cleaned_data = super().clean()
        gamma, A = cleaned_data.get('gamma'), cleaned_data.get('A')
        if self.require_target and (gamma is None) == (A is None) and 'gamma' not in self.errors:
            self.add_error('gamma', "give exactly one of gamma and A")
        model = cleaned_data.get('model')
        if model in ('beta', 'beta-swapped') and cleaned_data.get('delta') is None \
                and 'delta' not in self.errors:
            self.add_error('delta', f"required for the {model} model")
        if model == 'exp-shift' and cleaned_data.get('theta') is None and 'theta' not in self.errors:
            self.add_error('theta', "required for the exp-shift model")
        if cleaned_data.get('proc') == 'shiryaev' and cleaned_data.get('p') is None \
                and 'p' not in self.errors:
            self.add_error('p', "required for the Shiryaev procedure")
        return cleaned_data


@dataclass
class RunConfig:
    model_name: str
    delta: float | None = None
    theta: float | None = None
    proc: str = "sr"
    r: float | None = None
    p: float | None = None
    pi: float | None = None
    gamma: float | None = None
    A: float | None = None
    N: int = 0
    rule: str = "midpoint"
    seed: int = 0
    output: str | None = None
    csv: str | None = None
    extra: dict = field(default_factory=dict)

    def model(self):
        return model_from_name(self.model_name, delta=self.delta, theta=self.theta)

    def kind(self, r=None):
        """Procedure kind; SRP gets its quasi-stationary law later from the solver."""
        if self.proc == "shiryaev":
            return Shiryaev(self.p, self.pi or 0.0)
        if self.proc == "sr-r":
            r = self.r if r is None else r
            if r is None:
                raise DomainError("r", "required for the sr-r procedure")
            return ShiryaevRobertsR(r)
        if self.proc == "srp":
            return ShiryaevRobertsPollak(None)
        return ShiryaevRoberts()

    @property
    def prior(self):
        if self.p is None:
            return None
        return {"p": self.p, "pi": self.pi or 0.0}

    def as_header(self):
        data = {key: value for key, value in self.__dict__.items()
                if key not in ("output", "csv", "extra") and value is not None}
        data.update({key: value for key, value in self.extra.items() if value is not None})
        return data


def load_config_file(path):
    """Flat TOML table of run settings; nested [model]/[procedure] tables are flattened."""
    try:
        with open(path, "rb") as handle:
            data = tomllib.load(handle)
    except OSError as exc:
        raise DomainError("config", f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise DomainError("config", f"{path} is not valid TOML: {exc}") from exc
    flat = {}
    for key, value in data.items():
        if isinstance(value, dict):
            if key == "model" and "name" in value:
                flat["model"] = value["name"]
            flat.update({inner: item for inner, item in value.items() if inner != "name"})
        else:
            flat[key] = value
    logger.debug("Loaded run configuration %s: %s", path, sorted(flat))
    return flat


def build_run_config(options, require_target=True) -> RunConfig:
    """Merge ``--config`` file values with explicit flags and validate them."""
    data = {}
    if options.get("config"):
        data.update(load_config_file(options["config"]))
    for name in RunConfigForm.base_fields:
        if options.get(name) is not None:
            data[name] = options[name]
    form = RunConfigForm({key: value for key, value in data.items() if value is not None},
                         require_target=require_target)
    if not form.is_valid():
        name, errors = next(iter(form.errors.items()))
        raise DomainError(name, errors[0])
    cleaned = form.cleaned_data
    seed = cleaned.get("seed")
    if settings.QD_SEED_FROM_ENV or seed is None:
        seed = settings.QD_SEED
    config = RunConfig(
        model_name=cleaned["model"],
        delta=cleaned.get("delta"),
        theta=cleaned.get("theta"),
        proc=cleaned.get("proc") or "sr",
        r=cleaned.get("r"),
        p=cleaned.get("p"),
        pi=cleaned.get("pi"),
        gamma=cleaned.get("gamma"),
        A=cleaned.get("A"),
        N=cleaned.get("N") or settings.QD_GRID_SIZE,
        rule=cleaned.get("rule") or "midpoint",
        seed=int(seed),
        output=cleaned.get("output") or None,
        csv=cleaned.get("csv") or None,
    )
    logger.debug("Run configuration: %s", config.as_header())
    return config
