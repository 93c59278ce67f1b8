"""
Desk-scale adaptation checks on cfg/default.yaml. Each run takes minutes on
a CPU, so the whole module only runs with UADAN_RUN_SLOW=1.
"""

import json
from pathlib import Path

import pytest

from cli.commands import cmd_ablate, cmd_gen, cmd_sweep_xi
from cli.experiment import ExperimentSpec
from training.ablation_mode import AblationMode

pytestmark = pytest.mark.slow

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / "cfg" / "default.yaml"
SLACK = 0.01


@pytest.fixture(scope="module")
def desk_spec(tmp_path_factory) -> ExperimentSpec:
    spec = ExperimentSpec.from_file(DEFAULT_CONFIG, out=str(tmp_path_factory.mktemp("desk")))
    cmd_gen(spec)
    return spec


@pytest.fixture(scope="module")
def ablation(desk_spec):
    return {AblationMode.parse(row.label): row for row in cmd_ablate(desk_spec)}


def test_adaptation_beats_source_only(ablation):
    assert all(row.failures == 0 for row in ablation.values())
    assert ablation[AblationMode.UADAN].median >= ablation[AblationMode.BASELINE].median + 0.05


def test_ablation_chain(ablation):
    m = {mode: row.median for mode, row in ablation.items()}
    assert m[AblationMode.BASELINE] < m[AblationMode.IMAGE_AL]
    assert m[AblationMode.IMAGE_AL] <= m[AblationMode.IMAGE_UA_AL] + SLACK
    assert m[AblationMode.IMAGE_UA_AL] <= m[AblationMode.UADAN_NO_UGCL] + SLACK
    assert m[AblationMode.UADAN_NO_UGCL] <= m[AblationMode.UADAN] + SLACK
    assert m[AblationMode.BASELINE] < m[AblationMode.UADAN]


def test_best_xi_is_interior(desk_spec):
    cmd_sweep_xi(desk_spec)
    with open(desk_spec.reports_root / "sweep_xi.json", "r", encoding="utf-8") as f:
        report = json.load(f)
    assert report["xi0_instance_loss_zero"] is True
    best = report["best_xi_per_seed"]
    interior = [seed for seed, xi in best.items() if xi is not None and 0.0 < xi < 1.0]
    assert len(interior) >= 4, best
