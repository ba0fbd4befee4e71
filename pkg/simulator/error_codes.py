from enum import Enum


class SimulatorError(Enum):
    CONFIG = 2
    RUN = 10
    NEGOTIATE = 11
    SOLVE_BEAM = 12
    BASELINE = 13
    REPORT = 14
