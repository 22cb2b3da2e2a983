"""Exception types raised across posekit."""


class PosekitError(Exception):
    """Base class for all posekit errors."""


class InvalidConfig(PosekitError, ValueError):
    pass


class NonPositiveDepth(PosekitError, ValueError):
    pass


class DegenerateDistribution(PosekitError, ValueError):
    """Raised when a weighted quaternion average has no unique solution."""


class EmptyInput(PosekitError, ValueError):
    pass


class ShapeMismatch(PosekitError, ValueError):
    pass


class ZeroNormGroundTruth(PosekitError, ValueError):
    pass


class InvalidBins(PosekitError, ValueError):
    pass


class FrustumSamplingExhausted(PosekitError, RuntimeError):
    pass


class MalformedManifest(PosekitError, ValueError):
    pass


class MissingImage(PosekitError, FileNotFoundError):
    pass


class InvalidQuaternion(PosekitError, ValueError):
    pass


class NonFiniteLoss(PosekitError, FloatingPointError):
    def __init__(self, message, batch_ids=()):
        super().__init__(message)
        self.batch_ids = list(batch_ids)


class ConfigMismatch(PosekitError, ValueError):
    pass


class MissingPrediction(PosekitError, KeyError):
    def __init__(self, ids):
        self.ids = sorted(ids)
        super().__init__(f"missing predictions for {len(self.ids)} image(s): {', '.join(self.ids)}")

    def __str__(self):
        return self.args[0]


class UnknownId(PosekitError, KeyError):
    def __init__(self, ids):
        self.ids = sorted(ids)
        super().__init__(f"submission ids not in labels: {', '.join(self.ids)}")

    def __str__(self):
        return self.args[0]


class MissingReport(PosekitError, FileNotFoundError):
    pass
