"""Chat calls whose answers must be JSON of a known shape."""

from __future__ import annotations

import dataclasses
import logging
from typing import Any, Callable, TypeVar

from .errors import ExtractionError, SchemaError
from .prompts import REPAIR_INSTRUCTION, extract_json
from .providers import ChatRequest, ModelClient

log = logging.getLogger(__name__)

T = TypeVar("T")


def ask_json(client: ModelClient, request: ChatRequest, validate: Callable[[Any], T]) -> T:
    """Send ``request`` and return ``validate(parsed_json)``.

    ``validate`` raises SchemaError for a wrong shape. On a parse or schema
    failure the request is re-sent once with a corrective instruction appended;
    a second failure raises SchemaError.
    """
    try:
        return validate(extract_json(client.chat(request).text))
    except (ExtractionError, SchemaError) as first:
        log.warning("%s response unusable (%s); retrying once", request.tag or "chat", first)
        repair = dataclasses.replace(
            request,
            user_prompt=f"{request.user_prompt}\n{REPAIR_INSTRUCTION}\n",
            tag=f"{request.tag or 'chat'}-repair",
        )
        try:
            return validate(extract_json(client.chat(repair).text))
        except (ExtractionError, SchemaError) as second:
            raise SchemaError(f"{request.tag or 'chat'} response unusable after repair: {second}") from second
