"""Exception types shared across the engine."""


class RagCoreError(Exception):
    """Base class for all engine errors."""


class UnsupportedFormat(RagCoreError):
    pass


class EmptyAcl(RagCoreError):
    pass


class ConfigInvalid(RagCoreError):
    pass


class UnknownTemplate(RagCoreError):
    pass


class GatewayError(RagCoreError):
    """Base class for gateway-side failures."""


class UnknownModel(GatewayError):
    pass


class UnknownSubscription(GatewayError):
    pass


class QuotaExceeded(GatewayError):
    pass


class RateLimited(GatewayError):
    pass


class ProviderError(GatewayError):
    pass


class ProviderTimeout(ProviderError):
    pass


class Unauthorized(RagCoreError):
    pass


class EmptySuite(RagCoreError):
    pass


class SuiteMismatch(RagCoreError):
    pass


class NotFound(RagCoreError):
    pass
