import logging

from django.apps import AppConfig

logger = logging.getLogger(__name__)


class ManypriorsConfig(AppConfig):
    name = "manypriors"
    verbose_name = "Competing-priors image codec"

    def ready(self):
        logger.debug("manypriors app loaded")
