from .availability import AvailabilityResult, AvailabilityScenario, simulate_availability
from .detection import (
    TPR_BASELINE,
    DetectionResult,
    DetectionScenario,
    analytic_p_detect,
    simulate_detection,
    sweep_csv,
    sweep_detection,
)
