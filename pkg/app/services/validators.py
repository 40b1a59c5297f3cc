"""Validation of experiment configs beyond the schema."""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import pydantic

from app.models.experiment import STOCHASTIC_COMMANDS, CommandName, ExperimentConfig

logger = logging.getLogger(__name__)


class ValidationError(Exception):
    """Raised for configs that cannot be run; carries every message found."""

    def __init__(self, messages: List[str]):
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))


REQUIRED_SECTIONS: Dict[CommandName, List[str]] = {
    CommandName.DISTANCE: ["points"],
    CommandName.ORBIT: ["points", "radius"],
    CommandName.DIRICHLET: ["points"],
    CommandName.MEASURE: ["region"],
    CommandName.MODULUS: ["family"],
    CommandName.DILATATION: ["map", "points"],
    CommandName.VERIFY_POLETSKY: ["map", "family", "density"],
    CommandName.VERIFY_INVERSE: ["map", "family", "density"],
    CommandName.FMO: ["density", "eps_max", "levels"],
    CommandName.EQUICONTINUITY: ["map", "radii"],
}

POINT_COUNTS = {CommandName.DISTANCE: 2, CommandName.ORBIT: 1}


class ConfigValidator:
    """Validator for experiment configs."""

    @staticmethod
    def validate_point(values: Optional[List[float]], n: int, name: str) -> List[str]:
        """
        Validate one point of B^n.

        Returns:
            List of validation error messages (empty if valid)
        """
        if values is None:
            return []
        errors = []
        if len(values) != n:
            errors.append(f"{name} must have {n} coordinates (got: {len(values)})")
        elif sum(v * v for v in values) >= 1.0:
            errors.append(f"{name} must lie inside the unit ball (got: {values})")
        return errors

    @staticmethod
    def validate_experiment(config: ExperimentConfig) -> List[str]:
        """
        Cross-field checks the schema cannot express.

        Returns:
            List of validation error messages (empty if valid)
        """
        errors = []
        command = config.command
        n = config.group.dimension

        for section in REQUIRED_SECTIONS[command]:
            if getattr(config, section) is None:
                errors.append(f"{section} is required for command '{command.value}'")

        if command in STOCHASTIC_COMMANDS and config.seeds is None:
            errors.append(f"seeds is required for stochastic command '{command.value}'")

        if config.group.kind == "cyclic" and config.group.length is None:
            errors.append("group.length is required for a cyclic group")
        if config.group.kind == "schottky2d" and (config.group.dimension != 2 or not config.group.pairs):
            errors.append("group.pairs is required and group.dimension must be 2 for a Schottky group")

        points = config.points or []
        expected = POINT_COUNTS.get(command)
        if expected is not None and config.points is not None and len(points) != expected:
            errors.append(f"points must hold {expected} point(s) for command '{command.value}' (got: {len(points)})")
        for index, point in enumerate(points):
            errors.extend(ConfigValidator.validate_point(point, n, f"points[{index}]"))
        errors.extend(ConfigValidator.validate_point(config.center, n, "center"))

        if config.radii is not None:
            if any(r <= 0 for r in config.radii):
                errors.append("radii must be positive")
            if any(b >= a for a, b in zip(config.radii, config.radii[1:])):
                errors.append("radii must be strictly decreasing")

        if config.map is not None:
            errors.extend(ConfigValidator._validate_map(config))
        if config.family is not None:
            errors.extend(ConfigValidator._validate_family(config))
        if config.density is not None and config.density.kind in ("annulus_extremal", "ring_test"):
            d = config.density
            if d.r1 is None or d.r2 is None or not 0 < d.r1 < d.r2:
                errors.append("density needs 0 < r1 < r2")
        return errors

    @staticmethod
    def _validate_map(config: ExperimentConfig) -> List[str]:
        errors = []
        spec = config.map
        n = config.group.dimension
        if spec.kind == "moebius" and spec.mobius is None:
            errors.append("map.mobius is required for a Möbius map")
        if spec.kind in ("linear_chart", "jump") and spec.radius is None:
            errors.append(f"map.radius is required for map '{spec.kind}'")
        if spec.kind == "linear_chart":
            if spec.matrix is None or len(spec.matrix) != n or any(len(row) != n for row in spec.matrix):
                errors.append(f"map.matrix must be {n}x{n}")
        if spec.kind == "jump" and (spec.shift is None or len(spec.shift) != n):
            errors.append(f"map.shift must have {n} coordinates")
        if spec.kind == "fm_family" and spec.r0 is None:
            errors.append("map.r0 is required for the f_m family")
        if spec.ms is not None and any(m < 1 for m in spec.ms):
            errors.append("map.ms must hold integers >= 1")
        errors.extend(ConfigValidator.validate_point(spec.center, n, "map.center"))
        return errors

    @staticmethod
    def _validate_family(config: ExperimentConfig) -> List[str]:
        errors = []
        spec = config.family
        if spec.kind in ("annulus", "hyperbolic_ring"):
            if spec.r1 is None or spec.r2 is None or not 0 < spec.r1 < spec.r2:
                errors.append("family needs 0 < r1 < r2")
        if spec.kind == "box_crossing":
            if spec.low is None or spec.high is None:
                errors.append("family.low and family.high are required for a box family")
            elif any(lo >= hi for lo, hi in zip(spec.low, spec.high)):
                errors.append("family.low must lie below family.high in every coordinate")
        if spec.kind == "explicit":
            if not spec.paths:
                errors.append("family.paths is required for an explicit family")
            if spec.domain is None:
                errors.append("family.domain is required for an explicit family")
        return errors


def _format_pydantic(error: pydantic.ValidationError) -> List[str]:
    messages = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"]) or "<root>"
        messages.append(f"{location}: {item['msg']}")
    return messages


def load_config(source: Union[str, Path, Dict[str, Any]]) -> ExperimentConfig:
    """
    Parse and validate an experiment config from a path, JSON text or a dict.

    Raises:
        ValidationError: with line/column for malformed JSON and field paths otherwise
    """
    if isinstance(source, dict):
        data = source
    else:
        text = Path(source).read_text() if isinstance(source, Path) or not str(source).lstrip().startswith("{") else str(source)
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ValidationError([f"malformed JSON at line {e.lineno}, column {e.colno}: {e.msg}"]) from e
    if not isinstance(data, dict):
        raise ValidationError(["config must be a JSON object"])

    try:
        config = ExperimentConfig.model_validate(data)
    except pydantic.ValidationError as e:
        raise ValidationError(_format_pydantic(e)) from e

    errors = ConfigValidator.validate_experiment(config)
    if errors:
        logger.warning(f"config rejected with {len(errors)} error(s)")
        raise ValidationError(errors)
    return config
