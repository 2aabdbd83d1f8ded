"""
Front-view overlay rendering.

Axis conventions: the ego frame is x forward, y left, z up, with the origin
on the ground below the ego reference point. The camera body frame shares
those axes and is placed by ``CameraExtrinsic`` (position, then yaw about z,
pitch about y, roll about x). Optical coordinates are X right, Y down,
Z forward, so a body point ``(x_b, y_b, z_b)`` has ``X = -y_b``,
``Y = -z_b``, ``Z = x_b``.
"""

from __future__ import annotations

from collections.abc import Sequence
import math

import cv2
import numpy as np
from numpy.typing import NDArray
import shapely
from shapely.geometry import Polygon

from ..core.exceptions import EmptyCandidatesError, InvalidConfigError, NoVisiblePointsError
from ..core.logging import get_logger
from ..domain.control import RenderConfig
from ..domain.models import CameraModel, FloatArray, ScenarioStage, Trajectory
from .geometry import box_corners

logger = get_logger(__name__)

NEAR_PLANE = 0.1

SKY_COLOR = (235, 206, 135)
OFFROAD_COLOR = (70, 100, 70)
ROAD_COLOR = (95, 95, 95)
LANE_LINE_COLOR = (255, 255, 255)
AGENT_COLOR = (40, 40, 40)
AGENT_HEIGHT = 1.5

Image = NDArray[np.uint8]


def camera_rotation(cam: CameraModel) -> FloatArray:
    """Body-to-ego rotation ``Rz(yaw) · Ry(pitch) · Rx(roll)``."""
    ext = cam.extrinsic
    cy, sy = math.cos(ext.yaw), math.sin(ext.yaw)
    cp, sp = math.cos(ext.pitch), math.sin(ext.pitch)
    cr, sr = math.cos(ext.roll), math.sin(ext.roll)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


def to_optical(points: FloatArray, cam: CameraModel) -> FloatArray:
    """Ego-frame points ``(..., 3)`` in optical coordinates ``(..., 3)``."""
    body = (np.asarray(points, dtype=np.float64) - np.asarray(cam.extrinsic.position)) @ camera_rotation(cam)
    return np.stack([-body[..., 1], -body[..., 2], body[..., 0]], axis=-1)


def project_points(points: FloatArray, cam: CameraModel) -> tuple[FloatArray, NDArray[np.bool_]]:
    """
    Pinhole projection of ego-frame points.

    Returns:
        ``(uv, visible)``: pixel coordinates ``(..., 2)`` (meaningless where
        ``Z <= 0.1``) and whether each point is in front and inside the image
    """
    opt = to_optical(points, cam)
    z = opt[..., 2]
    safe = np.where(z > NEAR_PLANE, z, 1.0)
    u = cam.fx * opt[..., 0] / safe + cam.cx
    v = cam.fy * opt[..., 1] / safe + cam.cy
    visible = (z > NEAR_PLANE) & (u >= 0.0) & (u < cam.width) & (v >= 0.0) & (v < cam.height)
    return np.stack([u, v], axis=-1), visible


def project_point(point: Sequence[float], cam: CameraModel) -> tuple[float, float] | None:
    """
    Pixel of one ego-frame point, or ``None`` when behind the near plane or off-image.
    """
    uv, visible = project_points(np.asarray(point, dtype=np.float64)[None, :], cam)
    if not visible[0]:
        return None
    return float(uv[0, 0]), float(uv[0, 1])


def world_to_ego(xy: FloatArray, stage: ScenarioStage) -> FloatArray:
    """World ground points ``(..., 2)`` in the stage's ego frame."""
    pose = stage.ego.pose
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    d = np.asarray(xy, dtype=np.float64) - np.array([pose.x, pose.y])
    return np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1]], axis=-1)


def _lift(xy: FloatArray, z: float = 0.0) -> FloatArray:
    return np.concatenate([xy, np.full(xy.shape[:-1] + (1,), z)], axis=-1)


def _paint_background(image: Image, stage: ScenarioStage) -> None:
    """Sky above the horizon; ground pixels colored by drivable-area membership."""
    cam = stage.camera
    u, v = np.meshgrid(np.arange(cam.width) + 0.5, np.arange(cam.height) + 0.5)
    ray_opt = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=-1)
    ray_body = np.stack([ray_opt[..., 2], -ray_opt[..., 0], -ray_opt[..., 1]], axis=-1)
    ray = ray_body @ camera_rotation(cam).T
    origin = np.asarray(cam.extrinsic.position, dtype=np.float64)

    ground = ray[..., 2] < -1e-9
    image[:] = SKY_COLOR
    image[ground] = OFFROAD_COLOR
    if not stage.map.drivable or not ground.any():
        return

    s = -origin[2] / ray[ground][:, 2]
    hit_ego = origin[:2] + s[:, None] * ray[ground][:, :2]
    pose = stage.ego.pose
    c, sn = math.cos(pose.heading), math.sin(pose.heading)
    hit_world = np.stack(
        [pose.x + c * hit_ego[:, 0] - sn * hit_ego[:, 1], pose.y + sn * hit_ego[:, 0] + c * hit_ego[:, 1]], axis=-1
    )
    area = shapely.unary_union([Polygon(ring) for ring in stage.map.drivable])
    shapely.prepare(area)
    on_road = shapely.intersects_xy(area, hit_world[:, 0], hit_world[:, 1])
    rows, cols = np.nonzero(ground)
    image[rows[on_road], cols[on_road]] = ROAD_COLOR


def _draw_polyline(image: Image, points: FloatArray, cam: CameraModel, color: tuple[int, int, int], width: int) -> int:
    """
    Draw an ego-frame 3D polyline, clipping segments at the near plane.

    Returns:
        Number of vertices that project inside the image
    """
    opt = to_optical(points, cam)
    _, visible = project_points(points, cam)
    h, w = cam.height, cam.width
    for a, b in zip(opt[:-1], opt[1:], strict=True):
        if a[2] <= NEAR_PLANE and b[2] <= NEAR_PLANE:
            continue
        if a[2] <= NEAR_PLANE or b[2] <= NEAR_PLANE:
            front, back = (a, b) if a[2] > NEAR_PLANE else (b, a)
            t = (front[2] - NEAR_PLANE) / (front[2] - back[2])
            a, b = front, front + t * (back - front)
        pixels = [
            (
                int(round(float(cam.fx * p[0] / max(p[2], NEAR_PLANE) + cam.cx))),
                int(round(float(cam.fy * p[1] / max(p[2], NEAR_PLANE) + cam.cy))),
            )
            for p in (a, b)
        ]
        inside, p1, p2 = cv2.clipLine((0, 0, w, h), pixels[0], pixels[1])
        if inside:
            cv2.line(image, p1, p2, color, width, cv2.LINE_8)
    return int(np.count_nonzero(visible))


def _lane_boundaries(stage: ScenarioStage) -> list[FloatArray]:
    bounds = []
    for lane in stage.map.lanes:
        center = np.asarray(lane.centerline, dtype=np.float64)
        direction = np.asarray(lane.direction)
        per_vertex = np.concatenate([direction, direction[-1:]])
        normal = np.stack([-np.sin(per_vertex), np.cos(per_vertex)], axis=-1)
        bounds.append(center + lane.half_width * normal)
        bounds.append(center - lane.half_width * normal)
    return bounds


def render_overlay(
    stage: ScenarioStage,
    candidates: Sequence[tuple[str, Trajectory]],
    cfg: RenderConfig | None = None,
) -> Image:
    """
    Rasterise the stage from the front camera with labelled candidate paths.

    The scene is a flat ground plane: drivable area, lane boundaries and
    agent boxes at the stage start. Each candidate is drawn in its color
    with its label at the last visible sample.

    Args:
        stage: Scenario stage (camera and map)
        candidates: ``(label, trajectory)`` pairs in world coordinates
        cfg: Colors and line style

    Returns:
        ``(height, width, 3)`` BGR image

    Raises:
        EmptyCandidatesError: If no candidates are given
        InvalidConfigError: If there are more candidates than colors
        NoVisiblePointsError: If no candidate sample lands in the image
    """
    cfg = cfg or RenderConfig()
    if not candidates:
        raise EmptyCandidatesError("Nothing to render")
    if len(candidates) > len(cfg.colors):
        raise InvalidConfigError("More candidates than render colors", candidates=len(candidates), colors=len(cfg.colors))

    cam = stage.camera
    image: Image = np.zeros((cam.height, cam.width, 3), dtype=np.uint8)
    _paint_background(image, stage)

    for bound in _lane_boundaries(stage):
        _draw_polyline(image, _lift(world_to_ego(bound, stage)), cam, LANE_LINE_COLOR, 1)

    for agent in stage.agents:
        x, y, heading, _ = agent.states_at(np.array([0.0]))[0]
        corners = world_to_ego(box_corners(np.array([x, y]), heading, agent.length, agent.width), stage)
        ring = np.vstack([corners, corners[:1]])
        _draw_polyline(image, _lift(ring), cam, AGENT_COLOR, 2)
        _draw_polyline(image, _lift(ring, AGENT_HEIGHT), cam, AGENT_COLOR, 2)
        for corner in corners:
            _draw_polyline(image, np.array([[*corner, 0.0], [*corner, AGENT_HEIGHT]]), cam, AGENT_COLOR, 2)

    visible_total = 0
    for (label, traj), color in zip(candidates, cfg.colors, strict=False):
        points = _lift(world_to_ego(traj.xy, stage))
        visible_total += _draw_polyline(image, points, cam, color, cfg.line_width)
        uv, visible = project_points(points, cam)
        if visible.any():
            last = np.flatnonzero(visible)[-1]
            anchor = (int(round(float(uv[last, 0]))) + 4, int(round(float(uv[last, 1]))) - 4)
            cv2.putText(image, label, anchor, cv2.FONT_HERSHEY_SIMPLEX, cfg.label_scale, color, 2, cv2.LINE_8)

    if visible_total == 0:
        raise NoVisiblePointsError("No candidate sample projects into the image", scenario=stage.scenario_id)
    logger.debug("overlay_rendered", scenario=stage.scenario_id, candidates=len(candidates), visible=visible_total)
    return image


def encode_ppm(image: Image) -> bytes:
    """Binary PPM (P6) bytes of a BGR image."""
    ok, buf = cv2.imencode(".ppm", image, [cv2.IMWRITE_PXM_BINARY, 1])
    if not ok:
        raise InvalidConfigError("Image could not be encoded as PPM", shape=image.shape)
    return buf.tobytes()
