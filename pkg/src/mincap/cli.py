"""Command-line front end: solve/capacity/boutroux/trace/verify plus the
theta and kernel-probe debugging subcommands.

Exit codes: 0 on success, 1 on input errors (with field diagnostics), 2 on
numerical failures (with a diagnostic JSON in the output directory).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .continua import PolyContinuum
from .equilibrium import discretize, equilibrium_measure
from .kernels import BipolarKernel, CauchyKernelContext, make_cauchy_context
from .optimizer import (
    ProblemInstance,
    Solution,
    build_initial_continuum,
    solve as solve_instance,
    solve_boutroux_route,
)
from .quaddiff import boutroux_residual, boutroux_solve, schiffer_residual
from .serialization import (
    complex_pair,
    continuum_from_dict,
    continuum_to_dict,
    dumps_json,
    instance_from_dict,
    measure_csv,
    parse_complex,
    render_svg,
    surface_from_dict,
    surface_to_dict,
    trajectories_csv,
)
from .surface import Surface
from .theta import Characteristic, ThetaContext, theta
from .trajectories import (
    build_critical_graph,
    classify_foliation,
    dissection,
    find_green_critical_points,
    graph_to_continuum,
    s_property_residual,
)

__all__ = ["main", "run"]


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mincap",
                                description="minimal-capacity continua")
    p.add_argument("subcommand",
                   choices=["solve", "capacity", "boutroux", "trace",
                            "verify", "theta", "kernel-probe"])
    p.add_argument("--instance", required=True, help="instance (JSON) path")
    p.add_argument("--solution", help="solution JSON (verify)")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--route", choices=["shape", "boutroux", "both"])
    p.add_argument("--mesh", type=float)
    p.add_argument("--tol.capacity", dest="tol_capacity", type=float)
    p.add_argument("--tol.boutroux", dest="tol_boutroux", type=float)
    p.add_argument("--tol.sproperty", dest="tol_sproperty", type=float)
    return p


def _load_instance(args):
    with open(args.instance) as fh:
        data = json.load(fh)
    surface, anchors, pattern, options = instance_from_dict(data)
    inst = ProblemInstance(
        surface, anchors, pattern,
        mesh=args.mesh or options.get("mesh") or 0.0,
        route=args.route or options.get("route") or "shape",
        capacity_tol=args.tol_capacity or 1e-5,
        sproperty_tol=args.tol_sproperty or 2e-2,
        boutroux_tol=args.tol_boutroux or 1e-9,
        seed=args.seed,
    )
    return inst, data, options


def _solution_payload(inst: ProblemInstance, sol: Solution) -> dict:
    return {
        "surface": surface_to_dict(inst.surface),
        "anchors": [complex_pair(z) for z in inst.anchors.coords()],
        "capacity": float(sol.capacity.capacity),
        "energy": float(sol.capacity.energy),
        "robin_constant": float(sol.capacity.robin_constant),
        "certificates": {k: (float(v) if isinstance(v, (int, float)) else v)
                         for k, v in sol.certificates.items()},
        "minimizer": continuum_to_dict(sol.minimizer),
        "seed": int(inst.seed),
        "mesh": float(inst.mesh),
        "metadata": sol.metadata,
    }


def _cmd_solve(args, out: Path) -> int:
    inst, _, _ = _load_instance(args)
    sol = solve_instance(inst)
    (out / "solution.json").write_text(dumps_json(_solution_payload(inst, sol)))
    (out / "measure.csv").write_text(measure_csv(sol.capacity))
    trajs = []
    if sol.quaddiff is not None:
        graph = build_critical_graph(sol.quaddiff, mesh=inst.mesh)
        trajs = graph.trajectories
    (out / "trajectories.csv").write_text(trajectories_csv(trajs))
    (out / "figure.svg").write_text(render_svg(
        K=sol.minimizer, trajectories=trajs,
        anchors=inst.anchors.coords().tolist(),
        infinity=inst.surface.infinity.coord))
    return 0


def _initial_for_capacity(inst: ProblemInstance, options) -> PolyContinuum:
    init = options.get("initial_continuum")
    if init:
        return continuum_from_dict(inst.surface, init)
    return build_initial_continuum(inst)


def _cmd_capacity(args, out: Path) -> int:
    inst, _, options = _load_instance(args)
    K = _initial_for_capacity(inst, options)
    kernel = BipolarKernel(inst.surface)
    result = equilibrium_measure(discretize(K, inst.mesh), kernel)
    rng = np.random.default_rng(inst.seed)
    span = max(np.abs(K.nodes - K.nodes.mean()).max(), 1.0)
    grid = K.nodes.mean() + span * (rng.uniform(-2, 2, 24)
                                    + 1j * rng.uniform(-2, 2, 24))
    keep = result.distance_to_support(grid) > 2 * inst.mesh
    samples = [[complex_pair(z)[0], complex_pair(z)[1], float(g)]
               for z, g in zip(grid[keep],
                               np.atleast_1d(result.green(grid[keep])))]
    payload = {
        "capacity": float(result.capacity),
        "energy": float(result.energy),
        "robin_constant": float(result.robin_constant),
        "green_samples": samples,
        "seed": int(inst.seed),
    }
    (out / "capacity.json").write_text(dumps_json(payload))
    (out / "weights.csv").write_text(measure_csv(result))
    return 0


def _cmd_boutroux(args, out: Path) -> int:
    inst, _, _ = _load_instance(args)
    sol = solve_boutroux_route(inst, with_certificates=False)
    qd = sol.quaddiff
    res = boutroux_residual(qd)
    payload = {
        "zeros": [complex_pair(z) for z in qd.zeros],
        "zero_multiplicities": [int(m) for m in qd.zero_mults],
        "scale": complex_pair(complex(qd.scale)),
        "residual_norm": float(res.max_norm()),
        "periods": [complex_pair(p) for p in res.periods],
        "biresidue_defect": [float(res.biresidue_defect.real),
                             float(res.biresidue_defect.imag)],
        "capacity": float(sol.capacity.capacity),
        "seed": int(inst.seed),
    }
    (out / "boutroux.json").write_text(dumps_json(payload))
    return 0


def _cmd_trace(args, out: Path) -> int:
    inst, _, _ = _load_instance(args)
    sol = solve_boutroux_route(inst, with_certificates=False)
    qd = sol.quaddiff
    graph = build_critical_graph(qd, mesh=inst.mesh)
    result = sol.capacity
    # dissection from the located critical points of the Green's function
    zeros_off = [complex(z) for z, m in zip(qd.zeros, qd.zero_mults)
                 if m % 2 == 0]
    crit = find_green_critical_points(result, np.asarray(zeros_off)) \
        if zeros_off else np.array([], dtype=complex)
    sigma = dissection(result, crit) if len(crit) else []
    adjacency = {
        "vertices": [complex_pair(v) for v in graph.vertices],
        "vertex_kind": graph.vertex_kind,
        "edges": [[int(a), int(b)] for a, b in graph.edges],
    }
    (out / "trajectories.csv").write_text(
        trajectories_csv(graph.trajectories + graph.extra))
    (out / "critical_graph.json").write_text(dumps_json(adjacency))
    sample = classify_foliation(result, sol.minimizer)
    foliation = [type("T", (), {"points": np.array(
        [p, p + 0.15 * n])})() for p, n in
        zip(sample.points[::4], sample.normals[::4])]
    (out / "figure.svg").write_text(render_svg(
        K=sol.minimizer, sigma=sigma, trajectories=foliation,
        anchors=inst.anchors.coords().tolist(),
        infinity=inst.surface.infinity.coord))
    return 0


def _cmd_verify(args, out: Path) -> int:
    if not args.solution:
        raise KeyError("verify requires --solution")
    inst, _, _ = _load_instance(args)
    with open(args.solution) as fh:
        stored = json.load(fh)
    K = continuum_from_dict(inst.surface, stored["minimizer"])
    kernel = BipolarKernel(inst.surface)
    mesh = float(stored.get("mesh", inst.mesh))
    result = equilibrium_measure(discretize(K, mesh), kernel)
    seed = int(stored.get("seed", inst.seed))
    rng = np.random.default_rng(seed + 1)
    cert = {
        "capacity": float(result.capacity),
        "robin_constant": float(result.robin_constant),
        "s_property_residual": float(s_property_residual(result, K)),
    }
    try:
        cctx = make_cauchy_context(inst.surface, inst.anchors.coords(),
                                   avoid=K.nodes, rng=rng)
        from .optimizer import _schiffer_probes
        probes = _schiffer_probes(inst, K)
        cert["schiffer_residual"] = float(max(
            abs(schiffer_residual(result.measure, kernel, cctx, x))
            for x in probes))
    except ValueError:
        cert["schiffer_residual"] = float("nan")
    deltas = {}
    for key in ("capacity", "robin_constant"):
        if key in stored:
            deltas[key] = abs(cert[key] - float(stored[key]))
    for key, val in stored.get("certificates", {}).items():
        if key in cert and isinstance(val, (int, float)):
            deltas[key] = abs(cert[key] - float(val))
    payload = {"certificates": cert, "recomputation_deltas": deltas,
               "seed": seed}
    (out / "verify.json").write_text(dumps_json(payload))
    return 0


def _cmd_theta(args, out: Path) -> int:
    with open(args.instance) as fh:
        data = json.load(fh)
    tau = np.array([[parse_complex(v) for v in row]
                    for row in data["period_matrix"]])
    ctx = ThetaContext(tau, float(data.get("target_abs_error", 1e-13)))
    ch = Characteristic.of(data.get("characteristic", {}).get("alpha",
                                                              [0] * ctx.genus),
                           data.get("characteristic", {}).get("beta",
                                                              [0] * ctx.genus))
    z = np.array([parse_complex(v) for v in data["z"]])
    val = theta(ctx, ch, z)
    (out / "theta.json").write_text(dumps_json({"value": complex_pair(val)}))
    return 0


def _cmd_kernel_probe(args, out: Path) -> int:
    with open(args.instance) as fh:
        data = json.load(fh)
    surface = surface_from_dict(data["surface"])
    kernel = BipolarKernel(surface)
    probe = data.get("probe", {})
    kind = probe.get("kind", "bipolar")
    vals = []
    if kind == "bipolar":
        q = parse_complex(probe["q"])
        for z in probe["points"]:
            vals.append(float(kernel.green_point(parse_complex(z), q)))
    elif kind == "omega":
        q = parse_complex(probe["q"])
        for z in probe["points"]:
            vals.append(complex_pair(complex(
                np.asarray(kernel.omega(parse_complex(z), q)))))
    elif kind == "cauchy":
        anchors = [parse_complex(a) for a in data.get("anchors", [])]
        rng = np.random.default_rng(int(data.get("seed", args.seed)))
        cctx = make_cauchy_context(surface, anchors, rng=rng)
        q = parse_complex(probe["q"])
        for z in probe["points"]:
            vals.append(complex_pair(complex(cctx.evaluate(parse_complex(z), q))))
    else:
        raise KeyError(f"unknown probe kind {kind!r}")
    (out / "kernel_probe.json").write_text(dumps_json({"values": vals}))
    return 0


_COMMANDS = {
    "solve": _cmd_solve,
    "capacity": _cmd_capacity,
    "boutroux": _cmd_boutroux,
    "trace": _cmd_trace,
    "verify": _cmd_verify,
    "theta": _cmd_theta,
    "kernel-probe": _cmd_kernel_probe,
}


def run(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        return _COMMANDS[args.subcommand](args, out)
    except (KeyError, TypeError, json.JSONDecodeError, FileNotFoundError,
            ValueError) as exc:
        if _is_input_error(exc):
            print(f"input error: {exc}", file=sys.stderr)
            return 1
        diag = {"error": str(exc), "type": type(exc).__name__}
        (out / "diagnostic.json").write_text(dumps_json(diag))
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


_INPUT_MARKERS = (
    "invalid period matrix", "unknown surface kind", "expected a [re, im]",
    "anchors", "inadmissible pattern", "label index", "requires",
    "No such file", "Expecting", "unknown probe kind",
)


def _is_input_error(exc: Exception) -> bool:
    if isinstance(exc, (KeyError, TypeError, json.JSONDecodeError,
                        FileNotFoundError)):
        return True
    msg = str(exc)
    return any(m in msg for m in _INPUT_MARKERS)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
