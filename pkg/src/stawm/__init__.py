"""Short-term attentive working memory: glimpse models with a plastic Hebb-Rosenblatt memory."""
from .memory import (
    EquilibriumResult, HebbRosenblattMemory, MemoryState, MemoryStateError, RateTriple, StabilityReport,
    check_stability, clamp_rates, simulate_equilibrium,
)
from .model import StawmConfig, StawmModel, episode_loss

__version__ = "0.1.0"
