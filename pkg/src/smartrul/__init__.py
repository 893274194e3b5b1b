"""Remaining-useful-life prediction for device fleets with device-specific
failure levels: SMART ingestion, feature scoring, per-device and online
normalization, a numpy stacked LSTM, online simulation and evaluation."""

__version__ = "0.1.0"

SMART_IDS = (7, 9, 240, 241, 242)
TIME_STEPS = 25
MAX_RUL = 125
MATRIX_DAYS = 151
