"""Walkability features of urban sidewalks from delivery-robot sensor logs."""

from .config import ExtractionConfig, RunConfig
from .functions import extract_dataset, process_trip
from .ingest import load_weather, parse_trip
from .model import SidewalkNetwork, TripLog, WalkabilityError, load_network

__version__ = "0.1.0"
