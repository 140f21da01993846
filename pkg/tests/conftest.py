"""Shared fixtures: a tiny coupled scene that runs end to end in seconds."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from elastotr.assembly import assemble_operators
from elastotr.mesh import build_dofmap, generate_mesh
from elastotr.pipeline import experiments_for, imaging_horizon, wavelength_pipeline
from elastotr.scene import InclusionLayout, desk_scene

settings.register_profile("repo", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def tiny_scene(inclusions=(InclusionLayout(1.5, 0.8, (0.5, 0.5), "malignant"),), **kw):
    """3 x 2.5 wavelength box with one skin layer and an 11-element SRA."""
    args = dict(width=3.0, height=2.5, fluid_depth=1.0, sra_standoff=0.4,
                sra_extent=(0.5, 2.5), receiver_count=11, skin_thickness=0.25)
    args.update(kw)
    return desk_scene(list(inclusions), **args)


@pytest.fixture(scope="session")
def scene():
    return tiny_scene()


@pytest.fixture(scope="session")
def lw(scene):
    return scene.wavelength


@pytest.fixture(scope="session")
def mesh(scene, lw):
    return generate_mesh(scene, 0.25 * lw)


@pytest.fixture(scope="session")
def dofmap(mesh):
    return build_dofmap(mesh, 2)


@pytest.fixture(scope="session")
def ops(mesh, dofmap, scene):
    return assemble_operators(mesh, dofmap, scene)


@pytest.fixture(scope="session")
def pipeline(scene):
    return wavelength_pipeline(scene, h_forward=0.25, h_reverse=0.2,
                               t_final=imaging_horizon(scene))


@pytest.fixture(scope="session")
def experiment_result(pipeline, scene):
    return pipeline.run_experiment(experiments_for(scene)[0], coeff=0.1, seed=1,
                                   variants=("full", "component_u2", "divergence"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
