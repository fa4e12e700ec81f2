"""
控制台日志
"""

from datetime import datetime

from src.config.settings import get_settings


def log(message: str) -> None:
    """输出带时间戳的日志（受 verbose 开关控制）"""
    if get_settings().VERBOSE:
        timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
        print(f"[{timestamp}] {message}")
