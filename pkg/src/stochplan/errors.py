"""Exception hierarchy shared by all modules."""


class PlanningError(Exception):
    """Base class; the CLI maps subclasses of ``UserError`` to exit code 2."""


class UserError(PlanningError):
    pass


class MissingFile(UserError):
    def __init__(self, path):
        super().__init__(f"missing file: {path}")
        self.path = str(path)


class DanglingReference(UserError):
    def __init__(self, ref, where=""):
        msg = f"dangling reference {ref!r}" + (f" in {where}" if where else "")
        super().__init__(msg)
        self.ref = ref


class SchemaViolation(UserError):
    def __init__(self, field, reason):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class LengthMismatch(UserError):
    pass


class MissingCapacity(UserError):
    def __init__(self, tech):
        super().__init__(f"no reference capacity for {tech!r}")
        self.tech = tech


class OddExtremeCount(UserError):
    pass


class Infeasible(UserError):
    pass


class EmptyAssignment(UserError):
    pass


class UnbalancedCarrier(UserError):
    def __init__(self, carrier, region):
        super().__init__(f"no variable touches the balance of {carrier!r} in {region!r}")
        self.carrier = carrier
        self.region = region


class ProbabilityMismatch(UserError):
    pass


class MissingDelta(UserError):
    pass


class SolverFailure(PlanningError):
    pass


class NumericalBreakdown(SolverFailure):
    pass


class NodeLimit(SolverFailure):
    pass


class StatusNotOptimal(PlanningError):
    def __init__(self, status):
        super().__init__(f"solution status is {status}")
        self.status = status


class Stalled(PlanningError):
    def __init__(self, report, msg="Benders gap did not improve"):
        super().__init__(msg)
        self.report = report
