import logging
from abc import ABC, abstractmethod
from typing import Any

from .config import Config, load_config
from .errors import IonSaturationError
from .report import Report

logger = logging.getLogger(__name__)


class CommandHandler(ABC):
    """
    Abstract base class for CLI commands.

    A command reads its parameters from a resolved Config, runs library code
    and returns a Report. Errors raised by the library carry the exit code the
    CLI reports.
    """

    name: str = ""

    def __init__(self, config: Config | None = None):
        """
        Initialize the command with a configuration.

        Args:
            config: Resolved configuration; the shipped defaults when None
        """
        self.config = config if config is not None else load_config()
        self._initialize_handler()

    @abstractmethod
    def _initialize_handler(self) -> None:
        """
        Set up command-specific state.

        Called once from __init__.
        """
        pass

    @abstractmethod
    def run(self, **kwargs: Any) -> Report:
        """
        Execute the command.

        Returns:
            Report carrying the results and the resolved configuration
        """
        pass

    def new_report(self, title: str | None = None) -> Report:
        return Report(title or self.name, self.config.to_dict())

    def handle_error(self, error: Exception) -> dict[str, Any]:
        """
        Describe a command failure.

        Args:
            error: The exception that occurred

        Returns:
            Dictionary containing error information and the exit code
        """
        exit_code = error.exit_code if isinstance(error, IonSaturationError) else 1
        info: dict[str, Any] = {
            "error": f"{self.name} failed: {error}",
            "command": self.name,
            "errorType": type(error).__name__,
            "exitCode": exit_code,
        }
        diagnostics = getattr(error, "diagnostics", None)
        result = getattr(error, "result", None)
        if result is not None and hasattr(result, "to_dict"):
            diagnostics = {"last_iterate": result.to_dict()}
        if diagnostics:
            info["diagnostics"] = diagnostics
        logger.debug(f"Command {self.name} failed with {type(error).__name__}")
        return info
