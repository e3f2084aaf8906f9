"""Convert native 3DSSG annotation files into the scene-graph JSON layout.

3DSSG ships ``objects.json`` and ``relationships.json`` with one entry per scan
under ``"scans"``. Boxes come from the per-scan ``semseg.v2.json`` oriented
boxes; :func:`aabb_from_obb` turns those into the axis-aligned boxes used for
edge filtering.
"""

from __future__ import annotations

import numpy as np

from .errors import MalformedDocument
from .graph import normalize_label


def aabb_from_obb(obb: dict) -> dict:
    """Axis-aligned hull of an oriented box ``{centroid, axesLengths, normalizedAxes}``."""
    try:
        center = np.asarray(obb["centroid"], dtype=float)
        lengths = np.asarray(obb["axesLengths"], dtype=float)
        axes = np.asarray(obb["normalizedAxes"], dtype=float).reshape(3, 3)
    except (KeyError, ValueError) as exc:
        raise MalformedDocument(f"bad oriented box: {exc}") from exc
    # rows of `axes` are the box axes
    half = np.abs(axes.T) @ (lengths / 2.0)
    return {"min": (center - half).tolist(), "max": (center + half).tolist()}


def boxes_from_semseg(semseg: dict) -> dict:
    """Map object id -> axis-aligned box dict from a ``semseg.v2.json`` document."""
    boxes = {}
    for group in semseg.get("segGroups", []):
        oid = int(group.get("objectId", group.get("id")))
        if "obb" in group:
            boxes[oid] = aabb_from_obb(group["obb"])
    return boxes


def _find_scan(doc, scan_id):
    for scan in doc.get("scans", []):
        if scan.get("scan") == scan_id:
            return scan
    raise MalformedDocument(f"scan {scan_id!r} not found")


def convert_scan(objects_doc: dict, relationships_doc: dict, scan_id: str, boxes=None) -> dict:
    """Build a scene-graph document for one scan.

    ``boxes`` maps integer object ids to ``{"min": [...], "max": [...]}``; objects
    without an entry are emitted without a bbox.
    """
    boxes = boxes or {}
    scan_objs = _find_scan(objects_doc, scan_id)
    objects = []
    for obj in scan_objs.get("objects", []):
        oid = int(obj["id"])
        attrs = []
        raw_attrs = obj.get("attributes", {})
        if isinstance(raw_attrs, dict):
            for values in raw_attrs.values():
                attrs.extend(values)
        else:
            attrs.extend(raw_attrs)
        entry = {"id": oid, "label": normalize_label(obj["label"]),
                 "attributes": [normalize_label(a) for a in attrs if normalize_label(a)]}
        if oid in boxes:
            entry["bbox"] = boxes[oid]
        objects.append(entry)
    objects.sort(key=lambda o: o["id"])

    relations = []
    try:
        scan_rels = _find_scan(relationships_doc, scan_id)
    except MalformedDocument:
        scan_rels = {"relationships": []}
    for rel in scan_rels.get("relationships", []):
        # native layout: [subject_id, object_id, predicate_index, predicate_name]
        src, dst, _, name = rel
        relations.append([int(src), normalize_label(name), int(dst)])
    return {"id": scan_id, "objects": objects, "relations": relations}
