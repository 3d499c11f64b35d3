from tenrec.pasd_solver import PasdConfig
from tenrec.pasd_solver import pasd_recover
from tenrec.pasd_solver import RecoveryResult
from tenrec.tensor_core import DenseTensor

__version__ = "0.1.0"

__all__ = ["DenseTensor", "PasdConfig", "RecoveryResult", "pasd_recover"]
