"""Instance/solution file formats, CSV sidecars and SVG rendering.

Complex numbers serialize as [re, im] pairs; floats print with 17 significant
digits so round trips are bit-faithful.  JSON key order is fixed so identical
(instance, seed) pairs produce byte-identical outputs.
"""

from __future__ import annotations

import json
from typing import Dict, List, Optional, Sequence

import numpy as np

from .continua import (
    AnchorSet,
    ConnectivityPattern,
    HomotopyLabel,
    PolyContinuum,
)
from .surface import Surface, SurfacePoint

__all__ = [
    "dumps_json",
    "complex_pair",
    "parse_complex",
    "surface_from_dict",
    "surface_to_dict",
    "instance_from_dict",
    "continuum_to_dict",
    "continuum_from_dict",
    "measure_csv",
    "trajectories_csv",
    "render_svg",
]


def _fmt(x) -> str:
    if isinstance(x, float):
        if x != x or x in (float("inf"), float("-inf")):
            raise ValueError("non-finite float in output")
        return format(x, ".17g")
    return repr(x)


class _Encoder(json.JSONEncoder):
    def default(self, o):
        if isinstance(o, (np.floating,)):
            return float(o)
        if isinstance(o, (np.integer,)):
            return int(o)
        if isinstance(o, complex) or isinstance(o, np.complexfloating):
            return [float(o.real), float(o.imag)]
        if isinstance(o, np.ndarray):
            return o.tolist()
        return super().default(o)


def dumps_json(obj) -> str:
    """Deterministic JSON with 17-significant-digit floats."""
    txt = json.dumps(obj, cls=_Encoder, sort_keys=True, indent=1)
    # re-serialize floats at fixed precision
    def walk(o):
        if isinstance(o, dict):
            return {k: walk(v) for k, v in o.items()}
        if isinstance(o, list):
            return [walk(v) for v in o]
        if isinstance(o, float):
            return float(format(o, ".17g"))
        return o
    return json.dumps(walk(json.loads(txt)), sort_keys=True, indent=1)


def complex_pair(z: complex) -> List[float]:
    return [float(z.real), float(z.imag)]


def parse_complex(v) -> complex:
    if v is None:
        return None
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return complex(float(v[0]), float(v[1]))
    if isinstance(v, (int, float)):
        return complex(v)
    raise ValueError(f"expected a [re, im] pair, got {v!r}")


def surface_from_dict(d: Dict) -> Surface:
    kind = d.get("kind")
    if kind not in ("sphere", "torus"):
        raise ValueError(f"unknown surface kind {kind!r}")
    tau = parse_complex(d.get("tau")) if d.get("tau") is not None else None
    inf = d.get("infinity", None)
    inf_pt = SurfacePoint(parse_complex(inf)) if inf is not None \
        else SurfacePoint(None)
    coeff = parse_complex(d.get("chart_coeff", [1.0, 0.0]))
    return Surface(kind, tau, inf_pt, coeff)


def surface_to_dict(s: Surface) -> Dict:
    return {
        "kind": s.kind,
        "tau": complex_pair(s.tau) if s.kind == "torus" else None,
        "infinity": (complex_pair(complex(s.infinity.coord))
                     if s.infinity.coord is not None else None),
        "chart_coeff": complex_pair(complex(s.chart_coeff)),
    }


def instance_from_dict(d: Dict):
    """Parse an instance file into (surface, anchors, pattern, options)."""
    surface = surface_from_dict(d.get("surface", {}))
    anchors_raw = d.get("anchors")
    if not anchors_raw:
        raise ValueError("instance requires a nonempty 'anchors' list")
    anchors = AnchorSet(tuple(SurfacePoint(parse_complex(a))
                              for a in anchors_raw))
    labels = []
    for lab in d.get("pattern", []):
        winding = None
        if surface.kind == "torus":
            winding = (int(lab.get("m", 0)), int(lab.get("n", 0)))
        labels.append(HomotopyLabel(int(lab["i"]), int(lab["j"]), winding))
    pattern = ConnectivityPattern(len(anchors.points), labels)
    options = {
        "mesh": float(d["mesh"]) if "mesh" in d else None,
        "route": d.get("route"),
        "initial_continuum": d.get("initial_continuum"),
    }
    return surface, anchors, pattern, options


def continuum_to_dict(K: PolyContinuum) -> Dict:
    return {
        "nodes": [complex_pair(z) for z in K.nodes],
        "edges": [[int(a), int(b)] for a, b in K.edges],
        "anchor_indices": [int(i) for i in K.anchor_indices],
        "mesh": float(K.mesh),
    }


def continuum_from_dict(surface: Surface, d: Dict) -> PolyContinuum:
    nodes = [parse_complex(z) for z in d["nodes"]]
    edges = [(int(a), int(b)) for a, b in d["edges"]]
    anchors = [int(i) for i in d.get("anchor_indices", [])]
    mesh = float(d.get("mesh", 0.01))
    return PolyContinuum(surface, nodes, edges, anchors, mesh)


def measure_csv(result) -> str:
    disc = result.discretization
    w = result.measure.weights
    rows = ["panel,mid_re,mid_im,length,weight,density"]
    for i in range(disc.n):
        rows.append(",".join([
            str(i), _fmt(float(disc.mid[i].real)), _fmt(float(disc.mid[i].imag)),
            _fmt(float(disc.length[i])), _fmt(float(w[i])),
            _fmt(float(w[i] / disc.length[i])),
        ]))
    return "\n".join(rows) + "\n"


def trajectories_csv(trajs) -> str:
    rows = ["trajectory,point,re,im"]
    for tid, tr in enumerate(trajs):
        for k, z in enumerate(tr.points):
            rows.append(",".join([str(tid), str(k),
                                  _fmt(float(z.real)), _fmt(float(z.imag))]))
    return "\n".join(rows) + "\n"


def render_svg(K: Optional[PolyContinuum] = None,
               sigma: Sequence = (),
               trajectories: Sequence = (),
               anchors: Sequence[complex] = (),
               infinity: Optional[complex] = None,
               width: int = 640) -> str:
    """Standalone SVG: the continuum, dissection lines, sampled trajectories,
    anchor dots and the reference point."""
    pts = []
    if K is not None:
        pts.extend(K.nodes.tolist())
    for tr in list(sigma) + list(trajectories):
        pts.extend(np.asarray(tr.points).tolist())
    pts.extend(list(anchors))
    if infinity is not None:
        pts.append(infinity)
    if not pts:
        pts = [0, 1 + 1j]
    z = np.asarray(pts, dtype=complex)
    x0, x1 = float(z.real.min()), float(z.real.max())
    y0, y1 = float(z.imag.min()), float(z.imag.max())
    pad = 0.08 * max(x1 - x0, y1 - y0, 1e-6)
    x0, x1, y0, y1 = x0 - pad, x1 + pad, y0 - pad, y1 + pad
    scale = width / (x1 - x0)
    height = int(np.ceil((y1 - y0) * scale))

    def map_pt(w: complex) -> str:
        return (f"{format((w.real - x0) * scale, '.2f')},"
                f"{format((y1 - w.imag) * scale, '.2f')}")

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    for tr in trajectories:
        path = " ".join(map_pt(complex(p)) for p in tr.points)
        parts.append(f'<polyline points="{path}" fill="none" '
                     f'stroke="#9ecae1" stroke-width="0.7"/>')
    for tr in sigma:
        path = " ".join(map_pt(complex(p)) for p in tr.points)
        parts.append(f'<polyline points="{path}" fill="none" '
                     f'stroke="#888888" stroke-width="1" '
                     f'stroke-dasharray="4,3"/>')
    if K is not None:
        a, b = K.segment_arrays()
        for za, zb in zip(a, b):
            parts.append(f'<line x1="{map_pt(za).split(",")[0]}" '
                         f'y1="{map_pt(za).split(",")[1]}" '
                         f'x2="{map_pt(zb).split(",")[0]}" '
                         f'y2="{map_pt(zb).split(",")[1]}" '
                         f'stroke="black" stroke-width="1.6"/>')
    for e in anchors:
        cx, cy = map_pt(complex(e)).split(",")
        parts.append(f'<circle cx="{cx}" cy="{cy}" r="3.5" fill="#d62728"/>')
    if infinity is not None:
        cx, cy = map_pt(complex(infinity)).split(",")
        parts.append(f'<g stroke="#2ca02c" stroke-width="1.5">'
                     f'<line x1="{float(cx)-4:.2f}" y1="{cy}" '
                     f'x2="{float(cx)+4:.2f}" y2="{cy}"/>'
                     f'<line x1="{cx}" y1="{float(cy)-4:.2f}" '
                     f'x2="{cx}" y2="{float(cy)+4:.2f}"/></g>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
