from django.apps import AppConfig


class EsaMpuConfig(AppConfig):
    name = 'esa_mpu'
    verbose_name = 'Multi-positive and unlabeled learning'
