from django.apps import AppConfig


class ChangepointConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'quickdetect.changepoint'
    verbose_name = 'Sequential change-point detection'
