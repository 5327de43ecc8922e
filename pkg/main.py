import logging
import sys

from app.cli import configure_logging, main
from app.config import settings


if __name__ == "__main__":
    configure_logging(settings.log_level)
    logging.getLogger("main").debug(f"threads={settings.threads} output_dir={settings.output_dir}")
    sys.exit(main())
