"""
Run configuration for falling-sphere.

A run is described by a single JSON file. Every key is documented in
``docs/formats.md``; environment variables override nothing.
"""

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace as _replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from .exceptions import ConfigurationError
from .geometry import CutoffSpec, ModalBasis, build_basis


DEFAULT_OUTPUT_DIR = "falling_sphere_out"
ALLOWED_MODES = (0, 1, 2, 3)
RADIAL_MAP_KINDS = ("inverse", "algebraic", "truncation")
EIGEN_METHODS = ("auto", "shift-invert", "dense")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")

# Keys that do not change any computed number.
_NON_NUMERIC_KEYS = (
    "output_dir",
    "log_level",
    "lambda_min",
    "lambda_max",
    "step_policy",
    "modes",
    "bracket",
    "refinement_gate",
)


@dataclass(frozen=True)
class Resolution:
    """Meridional degree ``L`` and radial resolution ``N`` of a modal basis."""

    L: int = 4
    N: int = 10


@dataclass(frozen=True)
class StepPolicy:
    """
    Continuation step policy.

    When ``points`` is set the branch is computed on a uniform grid of that
    many points; otherwise steps adapt between ``min_step`` and ``max_step``.
    """

    initial: float = 0.0025
    min_step: float = 1e-6
    max_step: float = 1.0
    growth: float = 1.5
    points: Optional[int] = 5


@dataclass(frozen=True)
class Tolerances:
    newton: float = 1e-10
    eigen: float = 1e-8
    root: float = 1e-8
    energy: float = 1e-8
    quadrature: float = 1e-8
    overlap: float = 0.9
    gap: float = 1e-6


@dataclass(frozen=True)
class RadialMapSpec:
    kind: str = "inverse"
    scale: float = 1.0
    r_max: float = 50.0


@dataclass(frozen=True)
class QuadratureSpec:
    margin: int = 8


@dataclass(frozen=True)
class ManufacturedSpec:
    """Closed-form operator family used for self-tests of the bifurcation tools."""

    enabled: bool = False
    lambda_star: float = 4.0
    spread: float = 0.5
    power: int = 2


@dataclass(frozen=True)
class EigenSpec:
    count: int = 4
    shift: float = 1.0
    method: str = "auto"
    dense_limit: int = 400


@dataclass(frozen=True)
class RunConfig:
    """
    Complete description of a run.

    Construct through :meth:`from_dict` or :func:`load_config` so that every
    value is validated.
    """

    resolution: Resolution = field(default_factory=Resolution)
    resolution_by_mode: Dict[int, Resolution] = field(default_factory=dict)
    lambda_min: float = 0.0
    lambda_max: float = 0.01
    step_policy: StepPolicy = field(default_factory=StepPolicy)
    modes: Tuple[int, ...] = (0, 1)
    tolerances: Tolerances = field(default_factory=Tolerances)
    radial_map: RadialMapSpec = field(default_factory=RadialMapSpec)
    cutoff: CutoffSpec = field(default_factory=CutoffSpec)
    quadrature: QuadratureSpec = field(default_factory=QuadratureSpec)
    output_dir: str = DEFAULT_OUTPUT_DIR
    seed: int = 12345
    log_level: str = "INFO"
    manufactured: ManufacturedSpec = field(default_factory=ManufacturedSpec)
    eigen: EigenSpec = field(default_factory=EigenSpec)
    bracket: Optional[Tuple[float, float]] = None
    refinement_gate: bool = False

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """
        Check every documented invariant.

        Raises:
            ConfigurationError: If any value is out of range
        """
        for res in [self.resolution, *self.resolution_by_mode.values()]:
            if res.L < 1 or res.N < 2:
                raise ConfigurationError(
                    f"Resolution needs L >= 1 and N >= 2, got L={res.L}, N={res.N}"
                )
        if not self.modes:
            raise ConfigurationError("At least one azimuthal mode must be configured")
        bad = [m for m in self.modes if m not in ALLOWED_MODES]
        if bad:
            raise ConfigurationError(f"Modes must lie in {ALLOWED_MODES}, got {bad}")
        for name, value in asdict(self.tolerances).items():
            if not value > 0:
                raise ConfigurationError(f"Tolerance '{name}' must be positive, got {value}")
        if self.tolerances.overlap > 1:
            raise ConfigurationError("Overlap threshold must not exceed 1")
        if self.lambda_min < 0 or self.lambda_max < 0:
            raise ConfigurationError("Galilei range must be non-negative")
        if self.lambda_max < self.lambda_min:
            raise ConfigurationError(
                f"lambda_max ({self.lambda_max}) is below lambda_min ({self.lambda_min})"
            )
        policy = self.step_policy
        if policy.points is not None and policy.points < 1:
            raise ConfigurationError("step_policy.points must be at least 1")
        if not (0 < policy.min_step <= policy.initial <= policy.max_step):
            raise ConfigurationError(
                "step_policy needs 0 < min_step <= initial <= max_step"
            )
        if policy.growth < 1:
            raise ConfigurationError("step_policy.growth must be >= 1")
        if self.radial_map.kind not in RADIAL_MAP_KINDS:
            raise ConfigurationError(
                f"Unknown radial map '{self.radial_map.kind}', expected one of {RADIAL_MAP_KINDS}"
            )
        if self.radial_map.scale <= 0 or self.radial_map.r_max <= 1:
            raise ConfigurationError("radial_map needs scale > 0 and r_max > 1")
        if self.cutoff.r_a >= self.cutoff.r_b or self.cutoff.r_a < 1:
            raise ConfigurationError(
                f"cutoff needs 1 <= r_a < r_b, got r_a={self.cutoff.r_a}, r_b={self.cutoff.r_b}"
            )
        if self.eigen.count < 1:
            raise ConfigurationError("eigen.count must be at least 1")
        if self.eigen.method not in EIGEN_METHODS:
            raise ConfigurationError(f"eigen.method must be one of {EIGEN_METHODS}")
        if self.manufactured.lambda_star <= 0 or self.manufactured.power < 1:
            raise ConfigurationError("manufactured family needs lambda_star > 0, power >= 1")
        if not (0 < self.manufactured.spread <= 1):
            raise ConfigurationError("manufactured.spread must lie in (0, 1]")
        if self.bracket is not None:
            lo, hi = self.bracket
            if not (0 <= lo < hi):
                raise ConfigurationError(f"bracket must satisfy 0 <= lo < hi, got {self.bracket}")
        for m in self.modes:
            if self.resolution_for(m).L < m:
                raise ConfigurationError(
                    f"Mode {m} needs L >= {m}, got L={self.resolution_for(m).L}"
                )
        if self.log_level.upper() not in LOG_LEVELS:
            raise ConfigurationError(f"log_level must be one of {LOG_LEVELS}")

    def resolution_for(self, m: int) -> Resolution:
        """Return the resolution configured for azimuthal mode ``m``."""
        return self.resolution_by_mode.get(m, self.resolution)

    def basis(self, m: int, sector: str = "even", scale: float = 1.0) -> ModalBasis:
        """Build the modal basis of mode ``m`` at the configured resolution."""
        res = self.resolution_for(m)
        radial = (self.radial_map.kind, self.radial_map.scale, self.radial_map.r_max)
        return build_basis(m, res.L, res.N, sector=sector, scale=scale,
                           margin=self.quadrature.margin, radial_map=radial)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["modes"] = list(self.modes)
        data["resolution_by_mode"] = {
            str(m): asdict(r) for m, r in sorted(self.resolution_by_mode.items())
        }
        data["bracket"] = list(self.bracket) if self.bracket is not None else None
        return data

    def numerics_dict(self) -> Dict[str, Any]:
        """Return the part of the configuration that affects computed numbers."""
        data = self.to_dict()
        for key in _NON_NUMERIC_KEYS:
            data.pop(key, None)
        return data

    def fingerprint(self) -> str:
        """SHA-256 of the canonical JSON dump of :meth:`numerics_dict`."""
        payload = json.dumps(self.numerics_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def replace(self, **changes: Any) -> "RunConfig":
        """Return a validated copy with some fields changed."""
        return _replace(self, **changes)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        """
        Build a validated configuration from a plain dictionary.

        Args:
            data: Parsed JSON content; missing keys take their defaults

        Returns:
            RunConfig instance

        Raises:
            ConfigurationError: On unknown keys or invalid values
        """
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"Unknown configuration keys: {unknown}")
        try:
            kwargs: Dict[str, Any] = {}
            if "resolution" in data:
                kwargs["resolution"] = Resolution(**data["resolution"])
            if "resolution_by_mode" in data:
                kwargs["resolution_by_mode"] = {
                    int(m): Resolution(**r) for m, r in data["resolution_by_mode"].items()
                }
            for key in ("lambda_min", "lambda_max"):
                if key in data:
                    kwargs[key] = float(data[key])
            if "step_policy" in data:
                kwargs["step_policy"] = StepPolicy(**data["step_policy"])
            if "modes" in data:
                kwargs["modes"] = tuple(int(m) for m in data["modes"])
            if "tolerances" in data:
                kwargs["tolerances"] = Tolerances(**data["tolerances"])
            if "radial_map" in data:
                kwargs["radial_map"] = RadialMapSpec(**data["radial_map"])
            if "cutoff" in data:
                kwargs["cutoff"] = CutoffSpec(**data["cutoff"])
            if "quadrature" in data:
                kwargs["quadrature"] = QuadratureSpec(**data["quadrature"])
            if "manufactured" in data:
                kwargs["manufactured"] = ManufacturedSpec(**data["manufactured"])
            if "eigen" in data:
                kwargs["eigen"] = EigenSpec(**data["eigen"])
            if data.get("bracket") is not None:
                lo, hi = data["bracket"]
                kwargs["bracket"] = (float(lo), float(hi))
            for key in ("output_dir", "log_level"):
                if key in data:
                    kwargs[key] = str(data[key])
            if "seed" in data:
                kwargs["seed"] = int(data["seed"])
            if "refinement_gate" in data:
                kwargs["refinement_gate"] = bool(data["refinement_gate"])
        except ConfigurationError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"Malformed configuration: {e}") from e
        return cls(**kwargs)


def load_config(path: Union[str, Path]) -> RunConfig:
    """
    Load and validate a JSON run configuration.

    Args:
        path: Path to the JSON file

    Returns:
        Validated RunConfig

    Raises:
        ConfigurationError: If the file is missing, unreadable or invalid
    """
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ConfigurationError(f"Configuration file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Configuration file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"Configuration file {path} must hold a JSON object")
    return RunConfig.from_dict(data)


def save_config(config: RunConfig, path: Union[str, Path]) -> None:
    """Persist a configuration atomically through a temporary file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_suffix(".tmp")
    with tmp_path.open("w", encoding="utf-8") as f:
        json.dump(config.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp_path, path)


def diff_numerics(stored: Dict[str, Any], current: Dict[str, Any]) -> List[str]:
    """
    List the numeric settings that differ between two configurations.

    Args:
        stored: ``numerics_dict()`` saved alongside a record
        current: ``numerics_dict()`` of the running configuration

    Returns:
        Human-readable ``key: stored != current`` lines, dotted for nested keys
    """
    differences: List[str] = []

    def walk(a: Any, b: Any, prefix: str) -> None:
        if isinstance(a, dict) and isinstance(b, dict):
            for key in sorted(set(a) | set(b)):
                walk(a.get(key), b.get(key), f"{prefix}.{key}" if prefix else str(key))
        elif a != b:
            differences.append(f"{prefix}: {a!r} != {b!r}")

    walk(stored, current, "")
    return differences
