# Ambulance Dispatch Reinforcement Learning
__version__ = "1.0.0"
