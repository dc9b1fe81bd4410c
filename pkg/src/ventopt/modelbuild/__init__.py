"""Algebraic design model: construction, text export and solution checks."""
from pathlib import Path

from .expr import Const, ExprError, Op, Var, parse, to_sexpr
from .model import (ACOUSTIC_FAMILIES, FAMILIES, OFFSET, BigM, BuildError, Constraint, DesignModel, VarDecl,
                    build_model, compute_bigM, vname)
from .textio import ModelFormatError, ParsedModel, export_model, parse_model
from .verify import (CheckReport, VerificationError, assignment_from_design, assignment_from_solution,
                     check_solution, dump_assignment, load_assignment)

MANIFEST_PATH = Path(__file__).resolve().parent.parent / "data" / "tag_manifest.txt"


def tag_manifest() -> set:
    """Tags a coupled build is expected to emit."""
    lines = MANIFEST_PATH.read_text().splitlines()
    return {ln.split("#", 1)[0].strip() for ln in lines if ln.split("#", 1)[0].strip()}


__all__ = ["Const", "Var", "Op", "ExprError", "parse", "to_sexpr", "FAMILIES", "ACOUSTIC_FAMILIES", "OFFSET",
           "BigM", "BuildError", "Constraint", "DesignModel", "VarDecl", "build_model", "compute_bigM", "vname",
           "ModelFormatError", "ParsedModel", "export_model", "parse_model", "CheckReport", "VerificationError",
           "assignment_from_design", "assignment_from_solution", "check_solution", "dump_assignment",
           "load_assignment", "tag_manifest", "MANIFEST_PATH"]
