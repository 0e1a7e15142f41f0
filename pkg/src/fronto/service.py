"""Local HTTP API backing the browser annotation tool.

Endpoints (text bodies are UTF-8, one field group per line, mirroring
the manifest format):

    GET  /images                    listing: id status w h [side d0 d1 d2 d3]
    GET  /images/{id}               PNG at working resolution
    POST /preview                   body `id side d0 d1 d2 d3` -> warped PNG
    PUT  /annotations/{id}          body = manifest record line
    GET  /annotations/{id}          manifest record line
    GET  /stats                     per-corner statistics of saved records
    POST /predict                   body `id` -> suggestion `id side d0..d3`

The annotation store IS a dataset manifest: every acknowledged save
rewrites it atomically (temp file, fsync, rename), so a crash never
loses an acknowledged record and the file loads directly as a training
split.  The server is the invariant authority: any displacement payload
violating the side convention or the magnitude bound is rejected 422
regardless of what the client believes.
"""

from __future__ import annotations

import os
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import unquote

import numpy as np
from PIL import Image

from . import geom
from .dataset import (
    LEFT,
    RIGHT,
    SIDE_CORNERS,
    SIDES,
    AnnotationRecord,
    DatasetSplit,
    check_side_consistency,
    compute_stats,
    format_record,
    load_manifest,
    parse_record_line,
)
from .errors import FrontoError, InvariantViolation, ParseError
from .geom import DisplacementVector
from .image import ImageBuffer, encode_png, load_png
from .model import Model, config_from_fingerprint, load_params
from .warp import warp_image


class AnnotationStore:
    """Manifest-backed record store with per-id write locks.

    Writes are serialized; a PUT that arrives while the same id is being
    written is refused (the caller maps that to 409) rather than queued,
    so conflicting concurrent edits are always surfaced.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.records: dict[str, AnnotationRecord] = {}
        if self.path.exists():
            for rec in load_manifest(self.path):
                self.records[rec.image_id] = rec
        self._file_lock = threading.Lock()
        self._meta_lock = threading.Lock()
        self._id_locks: dict[str, threading.Lock] = {}

    def acquire(self, image_id: str) -> threading.Lock | None:
        with self._meta_lock:
            lock = self._id_locks.setdefault(image_id, threading.Lock())
        if lock.acquire(blocking=False):
            return lock
        return None

    def get(self, image_id: str) -> AnnotationRecord | None:
        with self._meta_lock:
            return self.records.get(image_id)

    def snapshot(self) -> dict[str, AnnotationRecord]:
        with self._meta_lock:
            return dict(self.records)

    def save(self, record: AnnotationRecord) -> None:
        """Durable write: acknowledge only after the rename hits the disk."""
        with self._file_lock:
            with self._meta_lock:
                merged = dict(self.records)
            merged[record.image_id] = record
            ordered = [merged[k] for k in sorted(merged)]
            tmp = self.path.with_name(self.path.name + ".tmp")
            with open(tmp, "w", encoding="utf-8") as fh:
                for rec in ordered:
                    fh.write(format_record(rec) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, self.path)
            try:
                dir_fd = os.open(self.path.parent, os.O_RDONLY)
                try:
                    os.fsync(dir_fd)
                finally:
                    os.close(dir_fd)
            except OSError:
                pass  # directory fsync is best-effort on exotic filesystems
            with self._meta_lock:
                self.records[record.image_id] = record


class _HttpError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


class AnnotationService(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, images_dir, store_path, checkpoint=None, size=224):
        super().__init__(address, _Handler)
        self.images_dir = Path(images_dir)
        if not self.images_dir.is_dir():
            raise InvariantViolation(f"image directory {images_dir!r} does not exist")
        if size < 8:
            raise InvariantViolation("working resolution must be at least 8")
        self.size = int(size)
        self.store = AnnotationStore(store_path)
        self.model: Model | None = None
        self.params = None
        if checkpoint is not None:
            self.params = load_params(checkpoint)
            self.model = Model(config_from_fingerprint(self.params.fingerprint))
        self._cache_lock = threading.Lock()
        self._working: dict[str, ImageBuffer] = {}
        self._dims: dict[str, tuple[int, int]] = {}

    # -- image access, cached per id ----------------------------------------

    def list_ids(self) -> list[str]:
        return sorted(p.stem for p in self.images_dir.glob("*.png"))

    def image_file(self, image_id: str) -> Path:
        if "/" in image_id or "\\" in image_id or image_id in ("", ".", ".."):
            raise _HttpError(404, f"unknown image {image_id!r}")
        path = self.images_dir / f"{image_id}.png"
        if not path.is_file():
            raise _HttpError(404, f"unknown image {image_id!r}")
        return path

    def image_dims(self, image_id: str) -> tuple[int, int]:
        with self._cache_lock:
            if image_id in self._dims:
                return self._dims[image_id]
        path = self.image_file(image_id)
        with Image.open(path) as im:
            dims = (int(im.width), int(im.height))
        with self._cache_lock:
            self._dims[image_id] = dims
        return dims

    def working_image(self, image_id: str) -> ImageBuffer:
        """The image resized to size x size; identical bytes every call."""
        with self._cache_lock:
            cached = self._working.get(image_id)
        if cached is not None:
            return cached
        img = load_png(self.image_file(image_id))
        s = geom.ScaleTransform.between(img.width, img.height, self.size, self.size)
        resized, _ = warp_image(img, geom.Homography(s.matrix()), self.size, self.size)
        with self._cache_lock:
            self._working[image_id] = resized
        return resized


def build_server(images_dir, store_path, checkpoint=None, port=8111, size=224):
    return AnnotationService(("127.0.0.1", port), images_dir, store_path, checkpoint, size)


def announce(server: AnnotationService) -> None:
    host, port = server.server_address[:2]
    print(f"listening on http://{host}:{port}", flush=True)


def project_to_legal(d: np.ndarray, size: int) -> tuple[str, DisplacementVector]:
    """Snap a free 4-vector onto the annotation-legal manifold.

    The side keeping more displacement mass wins (ties go Left); the
    other side is zeroed and magnitudes are clamped inside size/2.
    """
    d = np.asarray(d, dtype=np.float64)
    left_mass = abs(d[geom.TL]) + abs(d[geom.BL])
    right_mass = abs(d[geom.TR]) + abs(d[geom.BR])
    side = LEFT if left_mass >= right_mass else RIGHT
    limit = size / 2.0 - 1e-6
    out = np.zeros(4)
    for corner in SIDE_CORNERS[side]:
        out[corner] = float(np.clip(d[corner], -limit, limit))
    return side, DisplacementVector(out)


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server: AnnotationService

    # -- plumbing ------------------------------------------------------------

    def log_message(self, fmt, *args):
        if os.environ.get("FRONTO_SERVE_LOG"):
            super().log_message(fmt, *args)

    def _send(self, status: int, body: bytes, content_type: str, extra: dict | None = None):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        for key, val in (extra or {}).items():
            self.send_header(key, val)
        self.end_headers()
        self.wfile.write(body)

    def _send_text(self, status: int, text: str, extra: dict | None = None):
        self._send(status, text.encode("utf-8"), "text/plain; charset=utf-8", extra)

    def _send_png(self, png: bytes, extra: dict | None = None):
        self._send(200, png, "image/png", extra)

    def _body(self) -> str:
        length = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(length).decode("utf-8")

    def _route(self, method: str):
        path = unquote(self.path.split("?", 1)[0])
        try:
            self._dispatch(method, path)
        except _HttpError as exc:
            self._send_text(exc.status, exc.message + "\n")
        except FrontoError as exc:
            self._send_text(422, f"{exc}\n")
        except Exception as exc:  # don't kill the connection thread
            self._send_text(500, f"internal error: {exc}\n")

    def do_GET(self):
        self._route("GET")

    def do_POST(self):
        self._route("POST")

    def do_PUT(self):
        self._route("PUT")

    # -- routes ---------------------------------------------------------------

    def _dispatch(self, method: str, path: str):
        parts = [p for p in path.split("/") if p]

        if method == "GET" and parts == ["images"]:
            return self._get_images()
        if method == "GET" and len(parts) == 2 and parts[0] == "images":
            return self._get_image(parts[1])
        if method == "POST" and parts == ["preview"]:
            return self._post_preview()
        if method == "PUT" and len(parts) == 2 and parts[0] == "annotations":
            return self._put_annotation(parts[1])
        if method == "GET" and len(parts) == 2 and parts[0] == "annotations":
            return self._get_annotation(parts[1])
        if method == "GET" and parts == ["stats"]:
            return self._get_stats()
        if method == "POST" and parts == ["predict"]:
            return self._post_predict()
        raise _HttpError(404, f"no route for {method} {path}")

    def _get_images(self):
        srv = self.server
        lines = []
        saved = srv.store.snapshot()
        for image_id in srv.list_ids():
            w, h = srv.image_dims(image_id)
            rec = saved.get(image_id)
            if rec is None:
                lines.append(f"{image_id} unannotated {w} {h}")
            else:
                ds = " ".join(repr(float(v)) for v in rec.d.values)
                lines.append(f"{image_id} annotated {w} {h} {rec.side} {ds}")
        self._send_text(200, "".join(line + "\n" for line in lines))

    def _get_image(self, image_id: str):
        srv = self.server
        png = encode_png(srv.working_image(image_id))
        self._send_png(png)

    def _parse_preview_body(self, text: str) -> tuple[str, str, DisplacementVector]:
        parts = text.split()
        if len(parts) != 6:
            raise _HttpError(422, f"preview body needs 'id side d0 d1 d2 d3', got {len(parts)} fields")
        image_id, side = parts[0], parts[1]
        if side not in SIDES:
            raise _HttpError(422, f"side must be one of {SIDES}")
        try:
            d = DisplacementVector.of(*(float(p) for p in parts[2:6]))
        except (ValueError, InvariantViolation) as exc:
            raise _HttpError(422, f"bad displacement: {exc}")
        return image_id, side, d

    def _post_preview(self):
        srv = self.server
        image_id, side, d = self._parse_preview_body(self._body())
        try:
            check_side_consistency(side, d)
        except InvariantViolation as exc:
            raise _HttpError(422, str(exc))
        limit = srv.size / 2.0
        if np.any(np.abs(d.values) >= limit):
            raise _HttpError(422, f"|d| must stay below {limit} at working resolution")
        img = srv.working_image(image_id)
        H = geom.displacement_to_homography(d, srv.size, srv.size)
        warped, mask = warp_image(img, H, srv.size, srv.size)
        box = mask.bbox()
        bbox = "empty" if box is None else " ".join(str(v) for v in box)
        self._send_png(encode_png(warped), {"X-Valid-Bbox": bbox})

    def _put_annotation(self, image_id: str):
        srv = self.server
        srv.image_file(image_id)  # 404 before any validation
        try:
            record = parse_record_line(self._body().strip())
        except ParseError as exc:
            raise _HttpError(422, str(exc))
        if record.image_id != image_id:
            raise _HttpError(422, f"record id {record.image_id!r} does not match URL id {image_id!r}")
        w, h = srv.image_dims(image_id)
        if (record.orig_width, record.orig_height) != (w, h):
            raise _HttpError(422, f"record says {record.orig_width}x{record.orig_height}, image is {w}x{h}")
        lock = srv.store.acquire(image_id)
        if lock is None:
            raise _HttpError(409, f"a concurrent write to {image_id!r} is in progress")
        try:
            srv.store.save(record)
        finally:
            lock.release()
        self._send_text(200, format_record(record) + "\n")

    def _get_annotation(self, image_id: str):
        rec = self.server.store.get(image_id)
        if rec is None:
            raise _HttpError(404, f"no annotation for {image_id!r}")
        self._send_text(200, format_record(rec) + "\n")

    def _get_stats(self):
        saved = self.server.store.snapshot()
        if not saved:
            raise _HttpError(404, "no annotations saved")
        split = DatasetSplit("store", tuple(saved[k] for k in sorted(saved)))
        self._send_text(200, compute_stats(split).to_text())

    def _post_predict(self):
        srv = self.server
        if srv.model is None:
            raise _HttpError(503, "no checkpoint loaded")
        image_id = self._body().strip()
        if not image_id:
            raise _HttpError(422, "predict body must be an image id")
        srv.image_file(image_id)
        img = load_png(srv.image_file(image_id))
        if srv.model.cfg.channels == 1:
            img = img.to_grayscale()
        msize = srv.model.cfg.size
        s = geom.ScaleTransform.between(img.width, img.height, msize, msize)
        resized, _ = warp_image(img, geom.Homography(s.matrix()), msize, msize)
        pred = srv.model.forward(srv.params, resized)
        if srv.model.cfg.head == "four_point":
            raw = pred.values * (msize / 2.0) if srv.model.cfg.normalize else pred.values
        else:
            raw = srv.model.decode(pred).values
        if msize != srv.size:
            H = geom.displacement_to_homography(DisplacementVector(raw), msize, msize)
            scale = geom.ScaleTransform.between(msize, msize, srv.size, srv.size)
            raw = geom.homography_to_displacement(
                geom.rescale_homography(H, scale), srv.size, srv.size
            )[0].values
        side, d = project_to_legal(raw, srv.size)
        ds = " ".join(repr(float(v)) for v in d.values)
        self._send_text(200, f"{image_id} {side} {ds}\n")
