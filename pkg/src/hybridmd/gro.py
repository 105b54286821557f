"""Reader and writer for the fixed-width GROMACS ``.gro`` coordinate format."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SimBox, State, wrap_positions
from .errors import GroParseError


@dataclass
class GroAtoms:
    """Per-atom labels carried by a ``.gro`` file (the partial topology)."""

    residue_numbers: list
    residue_names: list
    atom_names: list
    title: str = ""

    @property
    def n_atoms(self) -> int:
        return len(self.atom_names)


def _float_field(line, start, stop, lineno, what):
    text = line[start:stop]
    try:
        return float(text)
    except ValueError:
        raise GroParseError(f"cannot read {what} from columns {start + 1}-{stop}: {text!r}",
                            lineno) from None


def read_gro(text: str) -> tuple[GroAtoms, State]:
    """Parse a single ``.gro`` frame.

    Returns the atom labels and a :class:`State` with positions, optional
    velocities (zero when absent) and the box.
    """
    lines = text.splitlines()
    if len(lines) < 3:
        raise GroParseError("file too short: need title, atom count and box lines",
                            len(lines) + 1)
    title = lines[0].rstrip("\n")
    try:
        n = int(lines[1].strip())
    except ValueError:
        raise GroParseError(f"atom count is not an integer: {lines[1]!r}", 2) from None
    if n < 0:
        raise GroParseError("negative atom count", 2)
    atom_lines = lines[2:-1]
    if len(atom_lines) != n:
        raise GroParseError(f"atom-count line says {n} but {len(atom_lines)} atom lines present",
                            2 + min(n, len(atom_lines)) + 1)

    pos = np.zeros((n, 3))
    vel = np.zeros((n, 3))
    resnr, resname, atomname = [], [], []
    for k, line in enumerate(atom_lines):
        lineno = k + 3
        if len(line.rstrip()) < 44:
            raise GroParseError(f"atom record shorter than 44 columns ({len(line.rstrip())})",
                                lineno)
        try:
            resnr.append(int(line[0:5]))
        except ValueError:
            raise GroParseError(f"bad residue number {line[0:5]!r}", lineno) from None
        resname.append(line[5:10].strip())
        atomname.append(line[10:15].strip())
        for axis in range(3):
            pos[k, axis] = _float_field(line, 20 + 8 * axis, 28 + 8 * axis, lineno, "position")
        if len(line.rstrip()) > 44:
            if len(line.rstrip()) < 68:
                raise GroParseError("partial velocity record", lineno)
            for axis in range(3):
                vel[k, axis] = _float_field(line, 44 + 8 * axis, 52 + 8 * axis, lineno,
                                            "velocity")

    box_fields = lines[-1].split()
    if len(box_fields) < 3:
        raise GroParseError("box line needs three floats", len(lines))
    try:
        lengths = [float(x) for x in box_fields[:3]]
    except ValueError:
        raise GroParseError(f"bad box line {lines[-1]!r}", len(lines)) from None
    if len(box_fields) > 3 and any(float(x) != 0.0 for x in box_fields[3:]):
        raise GroParseError("triclinic boxes are not supported", len(lines))
    try:
        box = SimBox(tuple(lengths))
    except ValueError as exc:
        raise GroParseError(str(exc), len(lines)) from None
    state = State(pos, vel, None, box)
    return GroAtoms(resnr, resname, atomname, title), state


def _canonical_positions(positions, box):
    """Wrap and round to 3 decimals so that a re-read file writes identically."""
    out = np.round(wrap_positions(positions, box), 3)
    for axis in range(3):
        if box.periodic[axis]:
            length = round(box.lengths[axis], 5)
            out[out[:, axis] >= length, axis] -= length
            out[:, axis] = np.round(out[:, axis], 3)
    return out + 0.0


def write_gro(state: State, names, title: str = "hybridmd", residue_names=None,
              residue_numbers=None, velocities: bool = True) -> str:
    """Format ``state`` as a ``.gro`` frame.

    ``names`` is either a sequence of atom names or a :class:`GroAtoms`.
    Positions are wrapped into the primary box.
    """
    if isinstance(names, GroAtoms):
        residue_names = names.residue_names if residue_names is None else residue_names
        residue_numbers = names.residue_numbers if residue_numbers is None else residue_numbers
        names = names.atom_names
    n = state.n_atoms
    if len(names) != n:
        raise ValueError(f"{len(names)} names for {n} atoms")
    if residue_names is None:
        residue_names = ["RES"] * n
    if residue_numbers is None:
        residue_numbers = range(1, n + 1)
    pos = _canonical_positions(state.positions, state.box)
    vel = np.round(state.velocities, 4) + 0.0
    out = [title.replace("\n", " "), f"{n:5d}"]
    for k in range(n):
        line = (f"{int(residue_numbers[k]) % 100000:5d}{residue_names[k][:5]:<5s}"
                f"{names[k][:5]:>5s}{(k + 1) % 100000:5d}"
                f"{pos[k, 0]:8.3f}{pos[k, 1]:8.3f}{pos[k, 2]:8.3f}")
        if velocities:
            line += f"{vel[k, 0]:8.4f}{vel[k, 1]:8.4f}{vel[k, 2]:8.4f}"
        out.append(line)
    a, b, c = state.box.lengths
    out.append(f"{a:10.5f}{b:10.5f}{c:10.5f}")
    return "\n".join(out) + "\n"


def write_gro_topology(state: State, topo, title: str = "hybridmd") -> str:
    return write_gro(state, topo.atom_names, title=title, residue_names=topo.residue_names,
                     residue_numbers=topo.residue_numbers)
