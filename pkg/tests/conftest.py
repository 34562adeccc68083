"""Shared fixtures; the expensive benchmark builds are session-scoped."""

import numpy as np
import pytest

from msrsb import bench
from msrsb.basis import build_basis_vector
from msrsb.bench import CaseArtifacts, _basis_config
from msrsb.mesh import build_structured_mesh
from msrsb.partition import build_support_regions, partition_structured_nodes


@pytest.fixture(scope="session")
def art_2d_mpfa():
    cfg = bench.load_config("2d_mpfa")
    return bench.build_case(cfg, basis_overrides={"track_invariants": True})


@pytest.fixture(scope="session")
def art_3d_field():
    cfg = bench.load_config("3d_field")
    return bench.build_case(cfg, basis_overrides={"track_invariants": True})


@pytest.fixture(scope="session")
def art_geomech():
    """3D geomechanics artifacts at coarsening ratios 7 and 5.

    The fine system is assembled once; only partition and basis differ.
    """
    cfg = bench.load_config("3d_geomech_cart")
    cfg = dict(cfg)
    cfg.pop("sweep", None)
    art7 = bench.build_case(cfg, basis_overrides={"track_invariants": True})
    part5 = build_support_regions(
        art7.mesh, partition_structured_nodes(art7.mesh, (5, 5, 5))
    )
    bconf = _basis_config(cfg, track_invariants=True)
    prol5 = build_basis_vector(art7.A, part5, bconf, art7.n_sd)
    art5 = CaseArtifacts(cfg, art7.mesh, art7.A, art7.f, part5, prol5, art7.n_sd)
    return {7: art7, 5: art5}


@pytest.fixture(scope="session")
def mesh_20():
    return build_structured_mesh(20, 20)
