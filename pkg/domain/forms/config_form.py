from typing import Any

from django import forms


VARIANT_CHOICES = [
    ("default", "default"),
    ("nonConservative", "nonConservative"),
    ("truePolicy", "truePolicy"),
    ("random", "random"),
    ("lowTolerance", "lowTolerance"),
    ("highTolerance", "highTolerance"),
]


class ExperimentConfigForm(forms.Form):
    domain = forms.CharField()
    variant = forms.ChoiceField(choices=VARIANT_CHOICES)
    steps = forms.IntegerField(min_value=1)
    replicas = forms.IntegerField(min_value=1)
    seed = forms.IntegerField(min_value=0)
    epsilon = forms.FloatField(min_value=0.0, max_value=1.0)
    rho = forms.FloatField()
    K = forms.FloatField()
    mu = forms.IntegerField(min_value=1)
    beta = forms.FloatField(required=False, min_value=0.0)
    kappa = forms.IntegerField(min_value=1)
    max_in_degree = forms.IntegerField(min_value=0)
    initial_variables = forms.CharField(required=False, empty_value=None)
    initial_actions = forms.CharField(required=False, empty_value=None)
    initial_reward_scope = forms.CharField(required=False, empty_value=None)
    err_window = forms.IntegerField(min_value=1)
    episode_cutoff_factor = forms.IntegerField(min_value=1)

    def clean_rho(self) -> float:
        rho = self.cleaned_data["rho"]
        if not 0.0 < rho < 0.5:
            raise forms.ValidationError("rho는 (0, 0.5) 범위여야 합니다.")
        return float(rho)

    def clean_K(self) -> float:
        mass = self.cleaned_data["K"]
        if mass <= 0.0:
            raise forms.ValidationError("K는 양수여야 합니다.")
        return float(mass)

    def clean(self) -> dict[str, Any]:
        cleaned_data = super().clean() or {}
        variables = cleaned_data.get("initial_variables")
        scope = cleaned_data.get("initial_reward_scope")

        if scope is not None and variables is not None:
            missing = set(_names(scope)) - set(_names(variables))
            if missing:
                self.add_error(
                    "initial_reward_scope",
                    f"초기 보상 범위 {sorted(missing)}가 초기 변수에 없습니다.",
                )

        return cleaned_data


def _names(raw: str) -> list[str]:
    return [name.strip() for name in raw.split(",") if name.strip()]
