"""Model-based test generation and validation for stateful network data planes."""
from .adu import ADU, CTags
from .network import Network, Topology
from .planner import Plan, brute_force_oracle, plan_scenarios, scope_domains, search
from .policy import PolicyScenario, compile_assertion

__all__ = [
    "ADU", "CTags", "Network", "Topology", "Plan", "PolicyScenario", "compile_assertion",
    "scope_domains", "search", "brute_force_oracle", "plan_scenarios",
]
__version__ = "0.1.0"
