"""Frame-based edge-offloading scheduler with an analytic discounted-cost chain.

Modules:
    model      domain types and deterministic physics
    stochastic seeded generators for arrivals and fading
    markov     discounted reward chain builders and solvers
    valuefn    closed-form baseline value function
    policies   baseline, all-local, all-edge, one-step-improved policies
    learning   online estimators and SGD on the receive-power target
    sim        frame-loop engine and metrics
    cli        experiment runner
"""

__version__ = "0.1.0"
