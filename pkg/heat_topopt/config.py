import os
from dotenv import load_dotenv

load_dotenv()


def _flag(name: str, default: str = "false") -> bool:
    return os.getenv(name, default).lower() in ("1", "true", "yes")


class Config:
    # Logging / output
    LOG_LEVEL: str = os.getenv("HEAT_TOPOPT_LOG_LEVEL", "INFO")
    OUTPUT_DIR: str = os.getenv("HEAT_TOPOPT_OUTPUT_DIR", "./runs")

    # Linear solver
    DIRECT_SOLVE_MAX_DOFS: int = int(os.getenv("HEAT_TOPOPT_DIRECT_SOLVE_MAX_DOFS", "3000"))
    CG_RTOL: float = float(os.getenv("HEAT_TOPOPT_CG_RTOL", "1e-10"))
    CG_MAXITER_FACTOR: int = int(os.getenv("HEAT_TOPOPT_CG_MAXITER_FACTOR", "50"))

    # Experiments
    FINE_GRID: int = int(os.getenv("HEAT_TOPOPT_FINE_GRID", "512"))

    # Tests
    SLOW_TESTS: bool = _flag("HEAT_TOPOPT_SLOW_TESTS")


config = Config()
