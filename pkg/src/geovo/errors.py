"""Exception hierarchy.

Every error carries an ``exit_code`` so the command-line front end can map
failures onto its documented exit statuses without a lookup table.
"""


class GeovoError(Exception):
    exit_code = 1


class ConfigError(GeovoError):
    exit_code = 2


class InputFormatError(GeovoError):
    exit_code = 3


class NumericalError(GeovoError):
    exit_code = 4


# geometry
class NonPositiveDepth(NumericalError):
    pass


class NonPositiveInverseDepth(NumericalError):
    pass


class PointBehindCamera(NumericalError):
    pass


# flow
class InvalidRadius(ConfigError):
    pass


class DimensionMismatch(InputFormatError):
    pass


class FlowOutOfRange(NumericalError):
    pass


class EmptyMask(NumericalError):
    pass


class LengthMismatch(InputFormatError):
    pass


# correspondence / pose init
class DegenerateConfiguration(NumericalError):
    pass


class InsufficientCorrespondences(NumericalError):
    pass


class CollinearPoints(NumericalError):
    pass


class NoRealSolution(NumericalError):
    pass


class NoConsensus(NumericalError):
    pass


# bundle adjustment
class SingularSystem(NumericalError):
    pass


class DivergedInitialization(NumericalError):
    pass


# trajectories and files
class TooShort(InputFormatError):
    pass


class DegenerateAlignment(NumericalError):
    pass


class FormatError(InputFormatError):
    pass


class MalformedLine(InputFormatError):
    def __init__(self, line_no, message="malformed pose line"):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class NonRigidPose(InputFormatError):
    def __init__(self, line_no, deviation):
        super().__init__(
            f"line {line_no}: rotation is not orthonormal (deviation {deviation:.3g})"
        )
        self.line_no = line_no
        self.deviation = deviation


class PathError(InputFormatError):
    """A file or directory that could not be read or written."""

    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)
