"""Macro-scale benchmark problems: mesh, supports and load cases."""

import numpy as np

from lvto.fea import LoadCase, MacroMesh

PRESETS = ("l-beam", "mbb-multi", "half-mbb")


class BenchmarkProblem:
    name: str
    mesh: MacroMesh
    loads: list[LoadCase]
    vmax: float

    def __init__(self, name: str, mesh: MacroMesh, loads: list[LoadCase], vmax: float):
        self.name = name
        self.mesh = mesh
        self.loads = loads
        self.vmax = vmax

    def __repr__(self) -> str:
        loads = f"{len(self.loads)} load cases"
        return f"BenchmarkProblem({self.name!r}, {self.mesh}, {loads}, vmax={self.vmax})"


def l_beam(nx: int = 40, ny: int = 40, cutout: float = 0.6, load: float = 1.0) -> BenchmarkProblem:
    """Square with the top-right block removed, clamped along the top of the
    vertical arm and loaded downward at the tip of the horizontal arm."""

    if not 0.0 < cutout < 1.0:
        raise ValueError(f"cutout must be in (0, 1), got {cutout}")

    arm_x = nx - round(cutout * nx)
    arm_y = ny - round(cutout * ny)
    if arm_x < 1 or arm_y < 1:
        raise ValueError(f"cutout {cutout} leaves no material on a {nx}x{ny} mesh")

    ex, ey = np.meshgrid(np.arange(nx), np.arange(ny))
    active = ~((ex >= arm_x) & (ey >= arm_y))
    mesh = MacroMesh(nx, ny, active.ravel())

    fixed = [dof for i in range(arm_x + 1) for dof in mesh.dofs(i, ny)]
    F = np.zeros(mesh.ndof)
    F[mesh.dofs(nx, arm_y)[1]] = -load

    return BenchmarkProblem("l-beam", mesh, [LoadCase("tip", F, fixed)], vmax=0.6)


def mbb_multi(nx: int = 60, ny: int = 30, load: float = 1.0) -> BenchmarkProblem:
    """Simply supported beam under two alternative load sets on its bottom edge."""

    mesh = MacroMesh(nx, ny)
    fixed = [*mesh.dofs(0, 0), mesh.dofs(nx, 0)[1]]

    center = np.zeros(mesh.ndof)
    center[mesh.dofs(nx // 2, 0)[1]] = -load

    quarters = np.zeros(mesh.ndof)
    quarters[mesh.dofs(nx // 4, 0)[1]] = -0.5 * load
    quarters[mesh.dofs(3 * nx // 4, 0)[1]] = -0.5 * load

    loads = [LoadCase("center", center, fixed), LoadCase("quarters", quarters, fixed)]
    return BenchmarkProblem("mbb-multi", mesh, loads, vmax=0.5)


def half_mbb(nx: int = 40, ny: int = 16, load: float = 1.0) -> BenchmarkProblem:
    mesh = MacroMesh(nx, ny)
    fixed = [mesh.dofs(0, j)[0] for j in range(ny + 1)]
    fixed.append(mesh.dofs(nx, 0)[1])

    F = np.zeros(mesh.ndof)
    F[mesh.dofs(0, ny)[1]] = -load

    return BenchmarkProblem("half-mbb", mesh, [LoadCase("top-left", F, fixed)], vmax=0.36)


def make_problem(
    name: str,
    nx: int | None = None,
    ny: int | None = None,
    cutout: float = 0.6,
    load: float = 1.0,
) -> BenchmarkProblem:
    size = {k: v for k, v in (("nx", nx), ("ny", ny)) if v is not None}
    match name:
        case "l-beam":
            return l_beam(cutout=cutout, load=load, **size)
        case "mbb-multi":
            return mbb_multi(load=load, **size)
        case "half-mbb":
            return half_mbb(load=load, **size)
        case _:
            raise ValueError(f"unknown problem {name!r}, expected one of {', '.join(PRESETS)}")
