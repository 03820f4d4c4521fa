from django.apps import AppConfig


class ModelCoreConfig(AppConfig):
    name = "model_core"
