__all__ = ["model", "run", "lab", "sweep"]
