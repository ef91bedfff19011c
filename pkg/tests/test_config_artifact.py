import copy
import json

import numpy as np
import pytest

from rompc import config as cf
from rompc import models
from rompc.artifact import OfflineArtifact, PipelineError, artifact_digest, synthesize


def test_builtin_configs_validate():
    for name in cf.BUILTIN_CONFIGS:
        cfg, base = cf.load_config(name)
        assert base is None and cfg["model"]["builtin"] == name


@pytest.mark.parametrize("mutate", [
    lambda c: c.pop("weights"),
    lambda c: c["reduction"].update(n=0),
    lambda c: c["weights"].update(N=0),
    lambda c: c.update(extra=1),
    lambda c: c["scenarios"].append({"name": "x", "disturbance": "gaussian"}),
    lambda c: c["bounds"].update(eps_x=0.0),
])
def test_invalid_configs_rejected(mutate):
    cfg = cf.builtin_config("synthetic")
    mutate(cfg)
    with pytest.raises(cf.ConfigError):
        cf.validate_config(cfg)


def test_missing_model_file(tmp_path):
    cfg = cf.builtin_config("synthetic")
    cfg["model"] = {"file": "nope.json"}
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    with pytest.raises(cf.ConfigError):
        cf.load_config(str(path))


def test_unknown_source():
    with pytest.raises(cf.ConfigError):
        cf.load_config("not-a-config")


def test_config_hash_is_canonical():
    a = cf.builtin_config("synthetic")
    b = json.loads(json.dumps(a, sort_keys=False))
    b = dict(reversed(list(b.items())))
    assert cf.config_hash(a) == cf.config_hash(b) and len(cf.config_hash(a)) == 16
    c = copy.deepcopy(a)
    c["weights"]["N"] = 11
    assert cf.config_hash(c) != cf.config_hash(a)


def test_model_file_is_inlined(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps(models.synthetic_system().to_dict()))
    cfg = cf.builtin_config("synthetic")
    cfg["model"] = {"file": "m.json"}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    loaded, base = cf.load_config(str(tmp_path / "c.json"))
    resolved = cf.resolve_config(loaded, base)
    assert "inline" in resolved["model"]
    assert cf.build_model(resolved["model"]).plant == models.synthetic_system().plant


def test_weight_matrix_forms():
    assert np.array_equal(cf.weight_matrix(2.0, 2), 2 * np.eye(2))
    assert np.array_equal(cf.weight_matrix([1.0, 3.0], 2), np.diag([1.0, 3.0]))
    assert np.array_equal(cf.weight_matrix({"diag": [1.0, 3.0]}, 2), np.diag([1.0, 3.0]))
    assert cf.weight_matrix(None, 2) is None
    rom = models.synthetic_system().plant
    W = cf.weight_matrix({"output_weight": [2.0, 0.0], "state_weight": 1.0}, 6, rom)
    assert W[0, 0] == 3.0 and W[1, 1] == 1.0
    with pytest.raises(cf.ConfigError):
        cf.weight_matrix([1.0], 2)
    with pytest.raises(cf.ConfigError):
        cf.weight_matrix({"output_weight": [1.0]}, 2)


def test_artifact_roundtrip_is_byte_identical(tmp_path, synthetic_artifact):
    art = synthetic_artifact
    path = art.save(tmp_path / "a.json")
    back = OfflineArtifact.load(path)
    assert back.to_json() == art.to_json()
    assert artifact_digest(back) == artifact_digest(art)
    assert not list(tmp_path.glob("*.tmp"))


def test_artifact_contents(synthetic_artifact):
    art = synthetic_artifact
    assert art.config_hash == cf.config_hash(art.config)
    assert art.tau == 64
    assert [tuple(a) for a in art.escalation] == [(4, "D_not_in_D0"), (8, "D_not_in_D0"),
                                                  (16, "ok"), (32, "ok"), (64, "ok")]
    assert art.setpoint_index([2.0]) == 0
    with pytest.raises(KeyError):
        art.setpoint_index([3.0])
    art.problem(0).check()
    art.problem(0, naive=True)


def test_reduction_stage_error():
    cfg = cf.builtin_config("beam")
    cfg["reduction"]["n"] = 1
    with pytest.raises(PipelineError) as exc:
        synthesize(cf.resolve_config(cfg))
    assert exc.value.stage == "reduction"


def test_infeasible_setpoint_reports_targets_stage():
    cfg = cf.builtin_config("synthetic")
    cfg["setpoints"] = [[50.0]]
    cfg["bounds"].update(tau=16, tau_max=16)
    with pytest.raises(PipelineError) as exc:
        synthesize(cf.resolve_config(cfg))
    assert exc.value.stage == "targets"
