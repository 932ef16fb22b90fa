"""Radio propagation by deterministic ray tracing.

Subpackages cover scene geometry and BVH queries, electromagnetic field
transforms, material interaction models, stochastic sampling, multipath
solving, and Monte Carlo radio maps, plus scene file IO and a command line
front end.
"""

__version__ = "0.1.0"

from .paths import (  # noqa: E402
    PathConfig,
    PathSet,
    RadioDevice,
    SceneModel,
    ValidPath,
    baseband_gains,
    compute_paths,
    frequency_response,
)

from .radiomap import (  # noqa: E402
    MeasurementGrid,
    RadioMapConfig,
    RadioMapResult,
    compute_radio_map,
    compute_radio_map_diffraction,
    compute_radio_map_sbr,
)

from .sceneio import (  # noqa: E402
    LoadedScene,
    SceneDescription,
    load_mesh_obj,
    load_scene,
    read_paths_csv,
    read_radio_map_csv,
    write_mesh_obj,
    write_paths,
    write_radio_map,
    write_scene,
)

__all__ = [
    "PathConfig",
    "PathSet",
    "RadioDevice",
    "SceneModel",
    "ValidPath",
    "baseband_gains",
    "compute_paths",
    "frequency_response",
    "MeasurementGrid",
    "RadioMapConfig",
    "RadioMapResult",
    "compute_radio_map",
    "compute_radio_map_diffraction",
    "compute_radio_map_sbr",
    "LoadedScene",
    "SceneDescription",
    "load_mesh_obj",
    "load_scene",
    "read_paths_csv",
    "read_radio_map_csv",
    "write_mesh_obj",
    "write_paths",
    "write_radio_map",
    "write_scene",
    "__version__",
]
