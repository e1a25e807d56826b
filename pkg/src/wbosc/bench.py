"""Servo latency benchmark: priority layout x orientation type x threading.

Each cell runs the five-task compound (two Cartesian position tasks, two
orientation tasks, one posture task) against a frozen robot state so the
numbers isolate controller cost.  Per-phase means and standard deviations
(read, update model, compute command, emit events, write) are reported per
cell over the measured cycles.
"""

import copy
import io
from dataclasses import dataclass

import numpy as np

from .assembly import AssembledController
from .config import load_config
from .description import load_description_file
from .model import RobotState
from .servo import PHASES

LEVEL_LAYOUTS = {
    2: {"rightHandPosition": 0, "leftHandPosition": 0,
        "rightHandOrientation": 0, "leftHandOrientation": 0, "posture": 1},
    3: {"rightHandPosition": 0, "leftHandPosition": 0,
        "rightHandOrientation": 1, "leftHandOrientation": 1, "posture": 2},
    5: {"rightHandPosition": 0, "leftHandPosition": 1,
        "rightHandOrientation": 2, "leftHandOrientation": 3, "posture": 4},
}

_BASE_CONFIG = None


def _base_spec():
    global _BASE_CONFIG
    if _BASE_CONFIG is None:
        from . import fixtures
        _BASE_CONFIG = fixtures.read_config("dreamer22_disassembly")
    return load_config(_BASE_CONFIG)


def build_cell_spec(levels, orientation):
    spec = _base_spec()
    if orientation == "3d":
        for task in spec.tasks:
            if task.type == "Orientation2DTask":
                task.type = "Orientation3DTask"
                task.parameters = {"link": task.parameters["link"],
                                   "kp": task.parameters.get("kp", 60.0),
                                   "kd": task.parameters.get("kd", 3.0)}
    layout = LEVEL_LAYOUTS[levels]
    for entry in spec.compound:
        entry.priority = layout[entry.name]
    spec.bindings = []
    spec.events = []
    return spec


class _FrozenInterface:
    def __init__(self, position):
        self._state = RobotState(0.0, np.asarray(position, dtype=float),
                                 np.zeros(len(position)), np.zeros(len(position)))

    def read(self):
        return self._state.copy()

    def write(self, command):
        pass


@dataclass
class BenchCell:
    levels: int
    orientation: str
    threading: str
    phases: dict      # phase -> (mean_s, std_s)

    @property
    def label(self):
        return f"{self.levels}-level/{self.orientation}/{self.threading}"

    def mean_ms(self, phase):
        return self.phases[phase][0] * 1e3

    def std_ms(self, phase):
        return self.phases[phase][1] * 1e3


def run_cell(description, levels, orientation, threading_mode, cycles=1000,
             warmup=50):
    spec = build_cell_spec(levels, orientation)
    posture = spec.task("posture").parameters["goalPosition"]
    interface = _FrozenInterface(posture)
    single = threading_mode == "single"
    ctl = AssembledController(description, spec, interface=interface,
                              single_threaded=single,
                              history=cycles + warmup)
    with ctl:
        ctl.start()
        ctl.run(cycles=warmup)
        ctl.run(cycles=cycles)
        phases = ctl.runtime.phase_stats(last_n=cycles)
    return BenchCell(levels, orientation, threading_mode, phases)


def run_matrix(robot_path, cycles=1000, progress=None):
    description = load_description_file(robot_path)
    cells = []
    for levels in (2, 3, 5):
        for orientation in ("2d", "3d"):
            for mode in ("multi", "single"):
                if progress is not None:
                    progress(f"{levels}-level {orientation} {mode}")
                cells.append(run_cell(description, levels, orientation, mode,
                                      cycles=cycles))
    return cells


def format_csv(cells):
    out = io.StringIO()
    out.write("cell," + ",".join(PHASES) + ",total\n")
    for cell in cells:
        row = [cell.label]
        for phase in PHASES + ("total",):
            mean, std = cell.phases[phase]
            row.append(f"{mean * 1e3:.4f}+-{std * 1e3:.4f}")
        out.write(",".join(row) + "\n")
    return out.getvalue()


def format_table(cells):
    header = ["cell"] + [p for p in PHASES] + ["total"]
    rows = [header]
    for cell in cells:
        row = [cell.label]
        for phase in PHASES + ("total",):
            mean, std = cell.phases[phase]
            row.append(f"{mean * 1e3:.3f}±{std * 1e3:.3f}")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row))
             for row in rows]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n(all values ms, mean±std)"
