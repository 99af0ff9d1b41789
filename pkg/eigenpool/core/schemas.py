from pydantic import BaseModel, ConfigDict
from typing import Any


class ArrayModel(BaseModel):
    """Immutable record whose fields may hold numpy arrays"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class CommandResult(BaseModel):
    success: bool
    message: str | None = None
    data: Any | None = None
    error: str | None = None
