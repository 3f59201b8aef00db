"""Flow-based dialogue reasoning for conversational machine comprehension,
with a self-contained autodiff core, toy models, a sequential-instruction
world simulator, and the training/evaluation harness."""

__version__ = "0.1.0"
