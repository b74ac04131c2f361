"""HTTP server exposing a loaded masked LM over the encode protocol.

Implements schema version 1 of the wire format the protodec remote provider
speaks: one POST per prompt, token probabilities aligned with the requested
ids.  Responses are deterministic because the model stays in eval mode.
"""

from __future__ import annotations

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from protodec.errors import DataError

from .extract import ModelBundle

SCHEMA_VERSION = 1


class EncodeRequest(BaseModel):
    schema_version: int
    prompt: str
    token_ids: list[int]


def build_app(bundle: ModelBundle) -> FastAPI:
    app = FastAPI(title="protodec encoder", version="1")

    @app.get("/healthz")
    def health():
        return {"ok": True, "model": bundle.model_id,
                "schema_version": SCHEMA_VERSION}

    @app.post("/v1/encode")
    def encode(request: EncodeRequest):
        if request.schema_version != SCHEMA_VERSION:
            return JSONResponse(status_code=400, content={
                "schema_version": SCHEMA_VERSION,
                "error": f"unsupported schema version {request.schema_version}",
            })
        try:
            hidden, scores = bundle.encode_prompt(request.prompt,
                                                  request.token_ids)
        except (DataError, IndexError) as exc:
            return JSONResponse(status_code=422, content={
                "schema_version": SCHEMA_VERSION,
                "error": str(exc),
            })
        return {
            "schema_version": SCHEMA_VERSION,
            "hidden": [float(x) for x in hidden],
            "scores": [float(s) for s in scores],
        }

    return app


def serve(bundle: ModelBundle, host: str = "127.0.0.1", port: int = 8631) -> None:
    import uvicorn

    uvicorn.run(build_app(bundle), host=host, port=port, log_level="warning")
