"""
Simulation Logger - 모듈별 로거 + log_fn 인젝션

- 표준 logging 로거를 한 번만 설정 (레벨: ACSCP_LOG_LEVEL)
- 엔진/하네스는 log_fn(level, message) 콜백을 주입받아 같은 메시지를 전달
"""
import logging
import sys
from typing import Callable, Optional

from config import LOG_LEVEL

_LEVELS = {
    "DEBUG": logging.DEBUG,
    "INFO": logging.INFO,
    "EVENT": logging.INFO,
    "WARN": logging.WARNING,
    "ALERT": logging.ERROR,
}

_configured = False


def _configure():
    global _configured
    if _configured:
        return
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("[%(asctime)s] %(levelname)s [%(name)s] %(message)s", "%H:%M:%S"))
    root = logging.getLogger("acscp")
    root.addHandler(handler)
    root.setLevel(getattr(logging, LOG_LEVEL.upper(), logging.WARNING))
    root.propagate = False
    _configured = True


def get_logger(name: str) -> logging.Logger:
    """acscp.<name> 로거 반환"""
    _configure()
    return logging.getLogger(f"acscp.{name}")


class SimLogger:
    """레벨 문자열 기반 로깅 + 외부 log_fn 연동"""

    def __init__(self, name: str, log_fn: Optional[Callable[[str, str], None]] = None):
        self._name = name
        self._logger = get_logger(name)
        self._log_fn = log_fn

    def __call__(self, level: str, message: str):
        self._logger.log(_LEVELS.get(level, logging.INFO), message)
        if self._log_fn:
            self._log_fn(level, f"[{self._name}] {message}")
