import enum


class EnumMeta(enum.EnumMeta):
    def __iter__(cls):
        return (member.value for member in super().__iter__())

    def __getattribute__(cls, name):
        attr = super().__getattribute__(name)
        if isinstance(attr, enum.Enum):
            return attr.value
        return attr


class Enum(enum.Enum, metaclass=EnumMeta):
    pass


class PsiKind(Enum):
    CONST = "const"
    POLY = "poly"


class HamiltonianScheme(Enum):
    LLF = "llf"
    LLF1 = "llf1"
    CENTRAL = "central"


class DensityForm(Enum):
    DENSITY = "density"
    POTENTIAL = "potential"


class SplittingType(Enum):
    LIE = "lie"
    STRANG = "strang"


class RunStatus(Enum):
    COMPLETE = "complete"
    PARTIAL = "partial"


class ExitCode(enum.IntEnum):
    SUCCESS = 0
    CONFIG_ERROR = 1
    NUMERICAL_FAILURE = 2
    HYPOTHESIS_FAILURE = 3
