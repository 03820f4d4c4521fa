import logging

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from domain.entities import TrueFmdp
from domain.exceptions import ConfigError
from domain.forms.config_form import ExperimentConfigForm
from model_core.states import Awareness


logger = logging.getLogger(__name__)

DEFAULTS: Dict[str, str] = {
    "domain": "coffee",
    "variant": "default",
    "steps": "1000",
    "replicas": "50",
    "seed": "0",
    "epsilon": "0.1",
    "rho": "0.1",
    "K": "5.0",
    "mu": "10",
    "beta": "",
    "kappa": "50",
    "max_in_degree": "5",
    "initial_variables": "",
    "initial_actions": "",
    "initial_reward_scope": "",
    "err_window": "10",
    "episode_cutoff_factor": "10",
}

DEFAULT_BETA = 0.1
VARIANT_BETA = {"lowTolerance": 0.01, "highTolerance": 0.5}


@dataclass(frozen=True)
class ExperimentConfig:
    """실험 설정 (파일 값 < CLI 플래그 < 기본값 순으로 채워짐)"""

    domain: str
    variant: str
    steps: int
    replicas: int
    seed: int
    epsilon: float
    rho: float
    alpha_mass: float
    mu: int
    beta: float
    kappa: int
    max_in_degree: int
    initial_variables: Optional[Tuple[str, ...]]
    initial_actions: Optional[Tuple[str, ...]]
    initial_reward_scope: Optional[Tuple[str, ...]]
    err_window: int
    episode_cutoff_factor: int
    base_dir: Optional[Path] = None
    provenance: Dict[str, str] = field(default_factory=dict, compare=False)

    @property
    def episode_cutoff(self) -> int:
        return self.episode_cutoff_factor * self.kappa

    @property
    def expert_profile(self) -> str:
        if self.beta <= VARIANT_BETA["lowTolerance"]:
            return "lowTolerance"
        if self.beta >= VARIANT_BETA["highTolerance"]:
            return "highTolerance"
        return "default"

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed)

    def initial_awareness(self, domain: TrueFmdp) -> Awareness:
        """초기 인지 상태 (미지정 시 종료 조건 변수와 첫 번째 행동)"""
        terminal_vars = tuple(sorted({var for var, _ in domain.terminal}))
        variables = self.initial_variables
        scope = self.initial_reward_scope
        if variables is None:
            variables = scope if scope is not None else terminal_vars
        if scope is None:
            scope = tuple(var for var in terminal_vars if var in variables)
        actions = self.initial_actions or (domain.action_ids[0],)
        try:
            awareness = Awareness(set(variables) | set(scope), set(actions), set(scope))
            awareness.resolve(set(domain.variables), set(domain.actions))
        except ValueError as e:
            raise ConfigError(str(e), "initial_variables")
        return awareness

    def as_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data.pop("provenance")
        data["K"] = data.pop("alpha_mass")
        data["base_dir"] = str(self.base_dir) if self.base_dir else ""
        for key in ("initial_variables", "initial_actions", "initial_reward_scope"):
            data[key] = ",".join(data[key]) if data[key] is not None else ""
        return data


def read_key_values(text: str) -> Dict[str, str]:
    """key=value 줄 읽기 ('#' 이후는 주석)"""
    values: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{number}번째 줄에 '='가 없습니다: {raw.strip()}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError("알 수 없는 설정 키", key)
        if key in values:
            raise ConfigError("중복된 설정 키", key)
        values[key] = value
    return values


def parse_config(
    text: str,
    overrides: Optional[Mapping[str, Any]] = None,
    base_dir: Optional[Path] = None,
) -> ExperimentConfig:
    """설정 텍스트와 CLI 덮어쓰기 값을 검증해 ExperimentConfig 생성"""
    values = read_key_values(text)
    provenance = {key: "file" for key in values}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in DEFAULTS:
            raise ConfigError("알 수 없는 설정 키", key)
        values[key] = str(value)
        provenance[key] = "flag"
    merged = {**DEFAULTS, **values}
    for key in DEFAULTS:
        provenance.setdefault(key, "default")

    form = ExperimentConfigForm(data=merged)
    if not form.is_valid():
        key, errors = next(iter(form.errors.items()))
        raise ConfigError(" ".join(str(e) for e in errors), key)
    data = form.cleaned_data

    beta = data["beta"]
    if beta is None:
        beta = VARIANT_BETA.get(data["variant"], DEFAULT_BETA)
        provenance["beta"] = "variant" if data["variant"] in VARIANT_BETA else "default"

    config = ExperimentConfig(
        domain=data["domain"],
        variant=data["variant"],
        steps=data["steps"],
        replicas=data["replicas"],
        seed=data["seed"],
        epsilon=data["epsilon"],
        rho=data["rho"],
        alpha_mass=data["K"],
        mu=data["mu"],
        beta=float(beta),
        kappa=data["kappa"],
        max_in_degree=data["max_in_degree"],
        initial_variables=_names(data["initial_variables"]),
        initial_actions=_names(data["initial_actions"]),
        initial_reward_scope=_names(data["initial_reward_scope"]),
        err_window=data["err_window"],
        episode_cutoff_factor=data["episode_cutoff_factor"],
        base_dir=base_dir,
        provenance=provenance,
    )
    logger.debug(f"[Config] {config.variant} 설정 로드: {config.as_dict()}")
    return config


def parse_config_file(
    path: str | Path, overrides: Optional[Mapping[str, Any]] = None
) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"설정 파일을 읽을 수 없습니다: {e}", str(path))
    return parse_config(text, overrides, base_dir=path.parent)


def _names(raw: Optional[str]) -> Optional[Tuple[str, ...]]:
    if raw is None:
        return None
    return tuple(name.strip() for name in raw.split(",") if name.strip())
