"""Exception types raised across the package."""


class InvalidArgument(ValueError):
    pass


class FactorizationError(ArithmeticError):
    def __init__(self, pivot: int, value: float):
        super().__init__(f"non-positive pivot {value!r} at index {pivot}")
        self.pivot = pivot
        self.value = value


class ConfigInvalid(ValueError):
    pass


class OutOfRange(ValueError):
    pass


class IKFailure(RuntimeError):
    def __init__(self, residual: float, message: str = "inverse kinematics did not converge"):
        super().__init__(f"{message} (residual={residual:.3g})")
        self.residual = residual


class GenerationFailure(RuntimeError):
    pass


class DegenerateEnvironment(RuntimeError):
    pass


class DemoGenerationFailure(RuntimeError):
    def __init__(self, goal_index: int, attempts: int):
        super().__init__(f"no successful demonstration for goal {goal_index} after {attempts} attempts")
        self.goal_index = goal_index
        self.attempts = attempts


class StepFailure(RuntimeError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int):
        super().__init__(f"training loss became non-finite at iteration {iteration}")
        self.iteration = iteration


class LangevinDivergence(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"non-finite energy gradient at Langevin step {step}")
        self.step = step


class PlannerDiverged(RuntimeError):
    def __init__(self, particle: int, iteration: int):
        super().__init__(f"non-finite gradient for particle {particle} at iteration {iteration}")
        self.particle = particle
        self.iteration = iteration


class UnsupportedTerm(NotImplementedError):
    pass
