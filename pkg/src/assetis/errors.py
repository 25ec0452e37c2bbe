"""Exception hierarchy. Each CLI-facing class carries its process exit code."""


class AssetISError(Exception):
    exit_code = 1


class ConfigurationError(AssetISError, ValueError):
    exit_code = 2


class PreconditionError(ConfigurationError):
    pass


class DataError(AssetISError):
    exit_code = 3


class SingularSubmatrixError(AssetISError, ArithmeticError):
    exit_code = 4

    def __init__(self, mask, detail=""):
        self.mask = mask
        msg = f"principal submatrix for subset mask {mask:#b} is numerically singular"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DegenerateNeighborError(SingularSubmatrixError):
    def __init__(self, mask, neighbor, r):
        self.neighbor = neighbor
        self.r = r
        AssetISError.__init__(
            self,
            f"subsets {mask:#b} and {neighbor:#b} have correlation {r!r}; "
            "the neighbour statistic duplicates the current one",
        )
        self.mask = mask


class UnattainableThresholdError(AssetISError):
    exit_code = 5

    def __init__(self, mask, target, bound):
        self.mask = mask
        self.target = target
        self.bound = bound
        where = "all subsets" if mask is None else f"subset mask {mask:#b}"
        super().__init__(
            f"threshold {target!r} is not attainable for {where}; "
            f"attainable bound is {bound!r}"
        )


class DegenerateSubsetError(AssetISError):
    exit_code = 5

    def __init__(self, mask):
        self.mask = mask
        super().__init__(f"all genotype weights are zero for subset mask {mask:#b}")


class UndefinedEfficiencyError(AssetISError, ZeroDivisionError):
    pass
