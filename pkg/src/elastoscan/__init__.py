"""Locating rigid scatterers in a homogeneous elastic medium from one far-field pattern.

Modules
-------
core        material, incident waves, Kupradze tensor, sphere quadrature
geometry    reference shapes, placements and scenes
farfield    far-field containers and the exact translation/rotation relations
forward     method-of-fundamental-solutions forward solver
asymptotic  polarization tensors and the Foldy point-scatterer model
library     reference libraries of precomputed signatures
imaging     indicator functions and the detection schemes S, R and M
io, cli     file formats and the ``elastoscan`` command
"""

__version__ = "0.1.0"

from .core import IncidentWave, InputError, Material, SphereGrid, make_sphere_grid, wavenumbers
from .geometry import Scene, component, make_shape
from .farfield import FarField, add_noise, rotate_farfield, split_ps, translate_farfield
from .forward import MfsConfig, simulate_farfield
from .asymptotic import polarization_tensor, small_scene_farfield
from .library import ReferenceLibrary, build_library, rotation_net
from .imaging import (Detection, SamplingMesh, indicator_extended, indicator_small, scheme_m,
                      scheme_r, scheme_s)
