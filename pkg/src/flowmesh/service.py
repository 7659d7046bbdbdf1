"""Session-oriented REST service over the pipeline.

Sessions live in memory (optionally mirrored to a state directory using the
CLI file formats). One deformation job may run per session; progress is
polled. All served artifacts are immutable snapshots.
"""

from __future__ import annotations

import threading
import uuid
from pathlib import Path

from fastapi import FastAPI, Query, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import arap, depthmesh, flow as flowmod, images, mesh as meshmod, meshobj, rigidity
from .errors import (
    ConfigurationError,
    DegenerateGeometryError,
    EmptyMeshError,
    FlowMeshError,
    NumericalError,
    RankError,
    StructuralError,
    UndefinedMetricError,
    UnmappedHandleError,
)

INVARIANT_ERRORS = (ConfigurationError, StructuralError, UnmappedHandleError,
                    EmptyMeshError, UndefinedMetricError, DegenerateGeometryError)
NUMERIC_ERRORS = (NumericalError, RankError)


class Session:
    def __init__(self, sid: str):
        self.id = sid
        self.lock = threading.Lock()
        self.depth: depthmesh.DepthMap | None = None
        self.mesh: meshmod.Mesh | None = None
        self.projection: meshmod.Projection2D | None = None
        self.spec: depthmesh.DragSpec2D | None = None
        self.constraints: depthmesh.ConstraintSet | None = None
        self.trace: arap.DeformationTrace | None = None
        self.status = "idle"
        self.progress = {"step_k": 0, "K": 0, "energy": None}
        self.error: str | None = None
        self.job: str | None = None
        self.worker: threading.Thread | None = None

    def image_size(self):
        if self.spec is not None:
            return self.spec.mask.shape[::-1]
        if self.mesh is not None and self.mesh.image_size is not None:
            return self.mesh.image_size
        if self.depth is not None:
            return (self.depth.width, self.depth.height)
        return None


def create_app(state_dir=None) -> FastAPI:
    app = FastAPI(title="flowmesh service", version="0.1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"],
    )
    sessions: dict[str, Session] = {}
    state_path = Path(state_dir) if state_dir else None
    if state_path:
        state_path.mkdir(parents=True, exist_ok=True)

    @app.exception_handler(FlowMeshError)
    async def flowmesh_error_handler(request: Request, exc: FlowMeshError):
        if isinstance(exc, NUMERIC_ERRORS):
            return JSONResponse(status_code=500, content={"detail": str(exc)})
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    def get_session(sid: str) -> Session:
        session = sessions.get(sid)
        if session is None:
            raise KeyError(sid)
        return session

    @app.exception_handler(KeyError)
    async def missing_handler(request: Request, exc: KeyError):
        return JSONResponse(status_code=404, content={"detail": f"unknown resource: {exc}"})

    @app.post("/sessions", status_code=201)
    def create_session():
        sid = uuid.uuid4().hex[:12]
        sessions[sid] = Session(sid)
        return {"id": sid}

    @app.put("/sessions/{sid}/depth", status_code=204)
    async def put_depth(sid: str, request: Request):
        session = get_session(sid)
        body = await request.body()
        suffix = ".pgm" if body[:2] == b"P5" else ".png"
        import tempfile
        with tempfile.NamedTemporaryFile(suffix=suffix, delete=False) as tmp:
            tmp.write(body)
            tmp_path = Path(tmp.name)
        try:
            values = images.read_depth(tmp_path)
        finally:
            tmp_path.unlink(missing_ok=True)
        with session.lock:
            session.depth = depthmesh.DepthMap(values)
            if state_path:
                images.write_depth_png(values, state_path / f"{sid}_depth.png")
        return Response(status_code=204)

    @app.post("/sessions/{sid}/mesh")
    def make_mesh(sid: str, body: dict):
        session = get_session(sid)
        with session.lock:
            if "import" in body:
                ref = Path(body["import"])
                if not ref.exists():
                    raise ConfigurationError(f"mesh import not found: {ref}")
                session.mesh = meshobj.read_mesh(ref)
            else:
                if session.depth is None:
                    raise ConfigurationError("upload a depth map before meshing")
                session.mesh = depthmesh.depth_to_mesh(
                    session.depth,
                    tau_d=float(body.get("tau_d", depthmesh.DEFAULT_TAU_D)),
                    tau_b=body.get("tau_b", "auto"),
                    reduction_ratio=float(body.get("reduction", 1.0)),
                )
            size = session.image_size()
            # imported meshes have no pixel provenance; projection waits for
            # an image frame (the drag-spec mask) when no size is known yet
            if session.mesh.pixels is not None or size is not None:
                session.projection = meshmod.project_2d(session.mesh, image_size=size)
            else:
                session.projection = None
            session.trace = None
            session.status = "idle"
            if state_path:
                meshobj.write_obj(session.mesh, state_path / f"{sid}_mesh.obj")
        return {"vertices": session.mesh.n_vertices, "faces": session.mesh.n_faces}

    @app.get("/sessions/{sid}/mesh")
    def read_mesh_full(sid: str):
        session = get_session(sid)
        if session.mesh is None:
            raise KeyError("mesh")
        proj = session.projection
        return {
            "vertices": session.mesh.vertices.tolist(),
            "faces": session.mesh.faces.tolist(),
            "projection": proj.points.tolist() if proj is not None else None,
            "image_size": session.image_size(),
        }

    @app.put("/sessions/{sid}/drag-spec", status_code=204)
    def put_drag_spec(sid: str, body: dict):
        session = get_session(sid)
        with session.lock:
            session.spec = depthmesh.drag_spec_from_dict(
                body, base_dir=state_path or Path.cwd())
            if state_path:
                depthmesh.write_drag_spec(session.spec, state_path / f"{sid}_spec.json")
        return Response(status_code=204)

    @app.get("/sessions/{sid}/drag-spec")
    def get_drag_spec(sid: str):
        session = get_session(sid)
        if session.spec is None:
            raise KeyError("drag-spec")
        return depthmesh.drag_spec_to_dict(session.spec)

    @app.post("/sessions/{sid}/deform", status_code=202)
    def start_deform(sid: str, body: dict):
        session = get_session(sid)
        with session.lock:
            if session.status == "deforming":
                return JSONResponse(status_code=409,
                                    content={"detail": "a deformation job is already running"})
            if session.mesh is None or session.spec is None:
                raise ConfigurationError("mesh and drag spec must exist before deforming")
            params = arap.DeformParams.from_dict(body)
            session.projection = meshmod.project_2d(session.mesh,
                                                    image_size=session.image_size())
            session.constraints = depthmesh.lift_drag_spec(
                session.spec, session.mesh, session.projection)
            session.status = "deforming"
            session.error = None
            session.job = uuid.uuid4().hex[:8]
            session.progress = {"step_k": 0, "K": params.steps, "energy": None}

        def on_step(k, total, energy):
            session.progress = {"step_k": k, "K": total, "energy": energy}

        def work():
            try:
                trace = arap.deform_progressive(session.mesh, session.constraints,
                                                params, on_step=on_step)
                with session.lock:
                    session.trace = trace
                    session.status = "done"
            except FlowMeshError as exc:
                with session.lock:
                    session.status = "error"
                    session.error = str(exc)

        session.worker = threading.Thread(target=work, daemon=True)
        session.worker.start()
        return {"job": session.job}

    @app.get("/sessions/{sid}/deform/status")
    def deform_status(sid: str):
        session = get_session(sid)
        return {
            "status": session.status,
            "step_k": session.progress["step_k"],
            "K": session.progress["K"],
            "energy": session.progress["energy"],
            "error": session.error,
        }

    @app.get("/sessions/{sid}/deform/steps/{k}")
    def deform_step(sid: str, k: int):
        session = get_session(sid)
        if session.trace is None:
            raise KeyError("trace")
        if not (0 <= k < len(session.trace.snapshots)):
            raise KeyError(f"step {k}")
        energy = session.trace.arap_energies[k - 1] if k >= 1 else 0.0
        return {
            "vertices": session.trace.snapshots[k].tolist(),
            "energy": energy,
        }

    @app.get("/sessions/{sid}/flow")
    def get_flow(sid: str, strategy: str = Query("magnitude"),
                 count: int = Query(flowmod.DEFAULT_SAMPLE_COUNT),
                 grid: int = Query(flowmod.DEFAULT_GRID_N)):
        session = get_session(sid)
        if session.trace is None or session.spec is None:
            raise KeyError("flow")
        size = session.image_size()
        proj_before = meshmod.project_2d(session.mesh, image_size=size)
        proj_after = meshmod.project_deformed(session.mesh,
                                              session.trace.final_positions,
                                              image_size=size)
        field = flowmod.compute_flow(proj_before, proj_after)
        candidates = flowmod.grid_candidates(field, session.spec.mask, grid_n=grid)
        sampled = flowmod.sample_flow(candidates, strategy, count=count, grid_n=grid)
        return {
            "grid_n": sampled.grid_n,
            "strategy": sampled.strategy,
            "vectors": [
                {"x": float(x), "y": float(y), "dx": float(dx), "dy": float(dy)}
                for x, y, dx, dy in sampled.vectors
            ],
        }

    @app.get("/sessions/{sid}/metrics")
    def get_metrics(sid: str):
        session = get_session(sid)
        if session.trace is None or session.constraints is None:
            raise KeyError("metrics")
        rep = rigidity.rigidity_report(session.mesh, session.trace.final_positions,
                                       session.constraints.movable)
        return rep.to_dict()

    return app
