from .core import (  # noqa: F401
    AnnotationService,
    CampaignStatus,
    GoldPair,
    ServiceError,
    SessionPhase,
)
from .http import create_app  # noqa: F401
