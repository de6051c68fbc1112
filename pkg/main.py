from __future__ import annotations

import os

from dotenv import load_dotenv
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import RedirectResponse

from config import setup_logging
from schemas.contracts import CONTRACT_VERSION
from tools.network_converter import router as network_converter_router
from tools.sim_agents import router as sim_agents_router

# -------------------------------------------------------------------
# Config
# -------------------------------------------------------------------
load_dotenv()
setup_logging()

app = FastAPI(title="roadsim", version=CONTRACT_VERSION)

# -------------------------------------------------------------------
# CORS (single middleware)
# -------------------------------------------------------------------
origins = [o.strip() for o in os.getenv("ROADSIM_CORS_ORIGINS", "").split(",") if o.strip()]

# Optional: allow local dev
if os.getenv("ENV") != "production":
    origins += ["http://localhost:5173", "http://127.0.0.1:5173"]

app.add_middleware(
    CORSMiddleware,
    allow_origins=origins,
    allow_credentials=False,
    allow_methods=["*"],
    allow_headers=["*"],
)

# -------------------------------------------------------------------
# Routers
# -------------------------------------------------------------------
app.include_router(network_converter_router)
app.include_router(sim_agents_router)


# -------------------------------------------------------------------
# Health
# -------------------------------------------------------------------
@app.get("/health")
def health_check():
    return {"status": "ok"}


# -------------------------------------------------------------------
# Root behavior (API-only)
# -------------------------------------------------------------------
@app.get("/", include_in_schema=False)
def root():
    return RedirectResponse(url="/docs", status_code=302)
