"""Child-process predictor server speaking one JSON object per line."""

from .server import BridgeSession, serve

__all__ = ["BridgeSession", "serve"]
