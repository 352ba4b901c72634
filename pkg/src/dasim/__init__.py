"""Cycle-approximate simulator of a shared-L1 manycore cluster.

Models how data placement across the multi-banked L1 scratchpad of a
hierarchically interconnected PE cluster turns into stalls, and how a
runtime-programmable remapping of heap regions onto physically adjacent
banks recovers PE utilization on transformer kernels.
"""

from .topology import (ClusterTopology, HierarchyLevel, access_level,
                       desk_default, local_fraction, terapool_default)
from .remap import (MapConfig, MapKind, PhysicalLocation, das, das_inverse,
                    das_map, interleaved, interleaved_map, resolve,
                    resolve_array, segment_transfer)
from .alloc import (AllocationError, FreeBlock, FreeError, Heap, das_free,
                    das_malloc, heap_init, region_lookup)

__version__ = "0.1.0"
