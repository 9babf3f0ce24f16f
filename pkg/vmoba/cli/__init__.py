from .value_objects import CheckResult, ExitCode
from .verify_api import cmd_verify
from .bench_api import cmd_bench
from .analyze_api import cmd_analyze
from .train_api import cmd_train_toy

__all__ = ["CheckResult", "ExitCode", "cmd_verify", "cmd_bench", "cmd_analyze", "cmd_train_toy"]
