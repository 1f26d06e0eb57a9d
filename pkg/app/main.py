"""FastAPI application for confidence validity screening."""
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app.routers import api

app = FastAPI(
    title="Confidence Screen API",
    description="Validity screening for verbalised LLM confidence",
    version="1.0.0",
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_methods=["GET", "POST"],
    allow_headers=["*"],
)

app.include_router(api.router, prefix="/api", tags=["api"])


@app.get("/")
async def root():
    """Root endpoint."""
    return {
        "name": "Confidence Screen API",
        "version": "1.0.0",
        "docs": "/docs",
        "endpoints": {
            "screen": "/api/screen",
            "protocol": "/api/protocol",
            "health": "/api/health",
        },
    }


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=8080)
