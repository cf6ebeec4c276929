"""
ShellRig - Rigidity Experiments for Discrete Immersions
FastAPI Application
"""

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app import settings
from app.routes import experiments, scenarios
from shellrig import __version__

settings.configure_logging()

app = FastAPI(
    title="ShellRig API",
    description="Energies and rigidity estimates for immersions into Riemannian manifolds",
    version=__version__,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.CORS_ORIGINS,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(scenarios.router, prefix="/api/scenarios", tags=["Scenarios"])
app.include_router(experiments.router, prefix="/api/experiments", tags=["Experiments"])


@app.get("/")
def root():
    return {"message": "Welcome to ShellRig API"}


@app.get("/api/health")
def health_check():
    return {"status": "healthy", "service": "ShellRig API"}


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(app, host="0.0.0.0", port=8000)
