"""Editing sessions: state machine, background jobs, persistence.

A session moves through upload -> inverting -> preview_fitting -> ready ->
(adapting <-> ready on cancel) -> done. The latent is immutable once
inversion completes; edits are only accepted while ready; one adaptation
job may run per session at a time. Sessions persist to a directory
(manifest JSON plus archives) so a restarted server can restore them.
"""

from __future__ import annotations

import json
import shutil
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adaptation import (AdaptationCancelled, AdaptationConfig, WeightAdaptedGenerator,
                         fit_preview_generator, optimize_adaptation)
from .dissection import UnitCatalog
from .editing import EditOp, EditStack, combined_region, region_pixel_footprint, replay
from .errors import LatentPaintError
from .generator import LatentCode, LayeredGenerator
from .imageio import decode_png_bytes, encode_png_bytes
from .inversion import Encoder, RefineConfig, invert_image
from .perceptual import PerceptualExtractor

STATES = ("inverting", "preview_fitting", "ready", "adapting", "done", "error")


@dataclass
class ServiceProfile:
    """Step budgets for the service pipeline (env-overridable)."""

    refine_steps: int = 300
    refine_lr: float = 0.05
    preview_steps: int = 200
    preview_lr: float = 2e-3
    adapt_steps: int = 1000
    adapt_lr: float = 0.1
    reg_weight: float = 1e-4
    extractor_seed: int = 11
    seed: int = 0


@dataclass
class Workspace:
    """Loaded model artifacts shared by every session."""

    generator: LayeredGenerator
    encoder: Encoder
    catalog: UnitCatalog
    extractor: PerceptualExtractor
    profile: ServiceProfile = field(default_factory=ServiceProfile)

    def __post_init__(self):
        self.catalog.check_compatible(self.generator)


class Session:
    def __init__(self, session_id: str, image: np.ndarray):
        self.session_id = session_id
        self.image = image
        self.state = "inverting"
        self.error: str | None = None
        self.stack: EditStack | None = None
        self.inversion_psnr: float | None = None
        self.preview_gen: WeightAdaptedGenerator | None = None
        self.preview_png: bytes | None = None
        self.final_png: bytes | None = None
        self.final_digest: str | None = None
        self.final_trace: list[dict] = []
        self.lock = threading.RLock()
        self.cancel_event = threading.Event()
        self._job: threading.Thread | None = None

    def history(self) -> list[dict]:
        if self.stack is None:
            return []
        return [op.to_json() for op in self.stack.ops]

    def snapshot(self) -> dict:
        with self.lock:
            return {
                "id": self.session_id,
                "state": self.state,
                "history": self.history(),
                "error": self.error,
                "inversion_psnr": self.inversion_psnr,
            }


class SessionStore:
    def __init__(self, workspace: Workspace, capacity: int = 16,
                 data_dir: str | Path | None = None, run_async: bool = True):
        self.workspace = workspace
        self.capacity = capacity
        self.data_dir = Path(data_dir) if data_dir else None
        self.run_async = run_async
        self.sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        if self.data_dir:
            self.data_dir.mkdir(parents=True, exist_ok=True)
            self._restore_all()

    # -- lifecycle -------------------------------------------------------

    def create(self, png_bytes: bytes) -> tuple[Session, str]:
        """Returns the session and its state at creation time ("inverting");
        the initialization job may advance the live state immediately after."""
        image = decode_png_bytes(png_bytes)
        expect = self.workspace.generator.output_shape
        if image.shape != expect:
            raise LatentPaintError(
                f"image dims {image.shape[:2]} do not match the loaded checkpoint ({expect[0]}x{expect[1]})")
        with self._lock:
            if len(self.sessions) >= self.capacity:
                raise CapacityError(f"server at session capacity ({self.capacity})")
            session = Session(uuid.uuid4().hex[:12], image)
            self.sessions[session.session_id] = session
        state_at_create = session.state
        self._start(session, self._initialize, name="init")
        return session, state_at_create

    def get(self, session_id: str) -> Session:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise UnknownSessionError(f"no session {session_id}") from None

    def ids(self) -> list[str]:
        with self._lock:
            return sorted(self.sessions)

    def ready_style_sources(self) -> list[str]:
        return [sid for sid in self.ids()
                if self.sessions[sid].state in ("ready", "adapting", "done")]

    def _styles(self) -> dict[str, LatentCode]:
        out = {}
        for sid in self.ready_style_sources():
            stack = self.sessions[sid].stack
            if stack is not None:
                out[sid] = stack.base
        return out

    def _start(self, session: Session, target, name: str) -> None:
        if not self.run_async:
            target(session)
            return
        thread = threading.Thread(target=target, args=(session,), name=f"{name}-{session.session_id}",
                                  daemon=True)
        session._job = thread
        thread.start()

    def _initialize(self, session: Session) -> None:
        ws = self.workspace
        try:
            cfg = RefineConfig(steps=ws.profile.refine_steps, lr=ws.profile.refine_lr,
                               seed=ws.profile.seed)
            result = invert_image(ws.generator, ws.encoder, session.image, cfg, ws.extractor)
            with session.lock:
                session.stack = EditStack(result.z)
                session.inversion_psnr = result.psnr
                session.state = "preview_fitting"
            pv_cfg = AdaptationConfig(reg_weight=ws.profile.reg_weight,
                                      preview_steps=ws.profile.preview_steps,
                                      preview_lr=ws.profile.preview_lr, seed=ws.profile.seed)
            preview = fit_preview_generator(ws.generator, result.z, session.image, pv_cfg)
            with session.lock:
                session.preview_gen = preview
                session.preview_png = encode_png_bytes(preview.render(result.z))
                session.state = "ready"
            self._persist(session)
        except Exception as exc:  # surfaced through the session state, not the log
            with session.lock:
                session.state = "error"
                session.error = str(exc)

    # -- edits -----------------------------------------------------------

    def _render_preview(self, session: Session) -> None:
        z_e = replay(session.stack, self.workspace.catalog, self._styles())
        session.preview_png = encode_png_bytes(session.preview_gen.render(z_e))

    def add_edit(self, session_id: str, op_fields: dict) -> Session:
        session = self.get(session_id)
        with session.lock:
            if session.state != "ready":
                raise SessionBusyError(f"session is {session.state}; edits only accepted when ready")
            op = EditOp(op_id=session.stack.next_op_id(), **op_fields)
            op.validate()
            trial = EditStack(session.stack.base, session.stack.ops + [op])
            z_e = replay(trial, self.workspace.catalog, self._styles())
            session.stack.add(op)
            session.preview_png = encode_png_bytes(session.preview_gen.render(z_e))
            self._persist(session)
            return session

    def delete_edit(self, session_id: str, op_id: int) -> Session:
        session = self.get(session_id)
        with session.lock:
            if session.state != "ready":
                raise SessionBusyError(f"session is {session.state}; edits only accepted when ready")
            session.stack.remove(op_id)
            self._render_preview(session)
            self._persist(session)
            return session

    # -- final render ------------------------------------------------------

    def start_render(self, session_id: str) -> Session:
        session = self.get(session_id)
        with session.lock:
            if session.state == "adapting":
                raise SessionBusyError("a render job is already running for this session")
            if session.state == "done":
                digest = session.stack.digest(self.workspace.catalog)
                if digest == session.final_digest:
                    return session  # cached result still valid
                raise SessionBusyError("session is done; no further renders accepted")
            if session.state != "ready":
                raise SessionBusyError(f"session is {session.state}")
            digest = session.stack.digest(self.workspace.catalog)
            if session.final_png is not None and digest == session.final_digest:
                session.state = "done"
                return session
            session.cancel_event.clear()
            session.state = "adapting"
        self._start(session, self._adapt, name="adapt")
        return session

    def cancel_render(self, session_id: str) -> Session:
        session = self.get(session_id)
        with session.lock:
            if session.state != "adapting":
                return session
            session.cancel_event.set()
        if session._job is not None and self.run_async:
            session._job.join(timeout=60)
        return session

    def _adapt(self, session: Session) -> None:
        ws = self.workspace
        try:
            with session.lock:
                stack_ops = list(session.stack.ops)
                digest = session.stack.digest(ws.catalog)
            z_e = replay(session.stack, ws.catalog, self._styles())
            region = combined_region(stack_ops, ws.catalog.grid)
            mask = region_pixel_footprint(region, ws.generator)
            cfg = AdaptationConfig(reg_weight=ws.profile.reg_weight, lr=ws.profile.adapt_lr,
                                   steps=ws.profile.adapt_steps, seed=ws.profile.seed)
            adapted = optimize_adaptation(ws.generator, z_e, session.image, mask, cfg,
                                          should_cancel=session.cancel_event.is_set)
            with session.lock:
                session.final_png = encode_png_bytes(adapted.render(z_e))
                session.final_digest = digest
                session.final_trace = adapted.trace
                session.state = "done"
            self._persist(session)
        except AdaptationCancelled:
            with session.lock:
                session.state = "ready"
        except Exception as exc:
            with session.lock:
                session.state = "error"
                session.error = str(exc)

    # -- persistence -------------------------------------------------------

    def _persist(self, session: Session) -> None:
        if not self.data_dir:
            return
        from .archive import save_archive

        sdir = self.data_dir / session.session_id
        sdir.mkdir(parents=True, exist_ok=True)
        (sdir / "image.png").write_bytes(encode_png_bytes(session.image))
        if session.stack is not None:
            save_archive(sdir / "z.arc", {"kind": "latent", "boundary": 0},
                         {"z": session.stack.base.values})
        if session.preview_gen is not None:
            session.preview_gen.save(sdir / "preview.ckpt")
        if session.preview_png is not None:
            (sdir / "preview.png").write_bytes(session.preview_png)
        if session.final_png is not None:
            (sdir / "final.png").write_bytes(session.final_png)
        manifest = {
            "id": session.session_id,
            "state": "ready" if session.state in ("adapting",) else session.state,
            "history": session.history(),
            "inversion_psnr": session.inversion_psnr,
            "final_digest": session.final_digest,
        }
        (sdir / "session.json").write_text(json.dumps(manifest, indent=2))

    def _restore_all(self) -> None:
        for sdir in sorted(self.data_dir.iterdir()):
            if not (sdir / "session.json").exists():
                continue
            try:
                self._restore(sdir)
            except Exception:
                shutil.rmtree(sdir, ignore_errors=True)

    def _restore(self, sdir: Path) -> None:
        from .archive import load_archive

        manifest = json.loads((sdir / "session.json").read_text())
        image = decode_png_bytes((sdir / "image.png").read_bytes())
        session = Session(manifest["id"], image)
        if manifest["state"] in ("ready", "done") and (sdir / "z.arc").exists():
            _, arrays = load_archive(sdir / "z.arc")
            session.stack = EditStack(LatentCode(arrays["z"], 0))
            for op_json in manifest.get("history", []):
                session.stack.add(EditOp.from_json(op_json))
            session.preview_gen = WeightAdaptedGenerator.load(sdir / "preview.ckpt",
                                                              self.workspace.generator)
            session.inversion_psnr = manifest.get("inversion_psnr")
            if (sdir / "preview.png").exists():
                session.preview_png = (sdir / "preview.png").read_bytes()
            if (sdir / "final.png").exists():
                session.final_png = (sdir / "final.png").read_bytes()
                session.final_digest = manifest.get("final_digest")
            session.state = manifest["state"]
            self.sessions[session.session_id] = session
        else:
            # session never reached ready: redo initialization from the image
            self.sessions[session.session_id] = session
            self._start(session, self._initialize, name="init")


class UnknownSessionError(LatentPaintError):
    pass


class SessionBusyError(LatentPaintError):
    pass


class CapacityError(LatentPaintError):
    pass
