"""Numerical atlas of homoclinic unfoldings of planar dissipative maps.

Map families and precision-controlled orbits, saddles and their linearizing
charts, invariant manifolds and tangencies, strips of Hénon-like returns and
their normalization, period-doubling loci and attractor classification.
"""

from .attractors import (AttractorCensus, AttractorRecord, basin_census, classify_attractor,
                         collet_eckmann_proxy, lyapunov)
from .cascade import (CascadeRecord, CoexistencePoint, PDCurve, cascade_in_slice,
                      continue_coexistence, find_2pd_points, pd_curve, pd_point,
                      secondary_tangencies)
from .exceptions import AtlasError
from .family import (MapFamily, OrbitSegment, ParamPoint, PolynomialFamily, UnfoldingModel,
                     cubic_henon_family, henon_family, iterate_orbit, linear_family, load_family)
from .manifolds import (ManifoldArc, ManifoldPairSource, TangencyEvent, continue_tangency_locus,
                        detect_tangency, find_homoclinic_intersections, grow_manifold,
                        unfolding_speed)
from .saddle import (LinearizationChart, Saddle, SaddleLinearizer, check_nonresonance,
                     find_periodic_point, linearize)
from .strip import (HenonStrip, ReturnMapData, ReturnMapNormalizer, TransitData, build_strip,
                    find_critical_point, model_transit, normalize, scaling_probe, strong_sink,
                    strong_sink_locus)
from .sweep import SweepJob, run_sweep

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
