# Agent package initialization
from .activity_agent import ActivityAgent
from .fma_agent import FmaAgent
from .orchestrator import OrchestratorAgent
from .primitive_agent import PrimitiveAgent
from .primrs_agent import PrimRsAgent

__all__ = ["ActivityAgent", "FmaAgent", "OrchestratorAgent", "PrimitiveAgent", "PrimRsAgent"]
