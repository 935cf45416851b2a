"""Scenario files: parsing, validation, registries, output-dir precedence."""

import copy
import json
from importlib.resources import files

import numpy as np
import pytest

import setmem.benchmark as bm
from setmem.scenario import (
    OUT_DIR_ENV,
    ConfigError,
    load_scenario,
    resolve_out_dir,
    scenario_from_dict,
)

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

CONFIG_DIR = files("setmem.configs")
BUNDLED = ("attack_free", "replay", "fdi_control", "fdi_channel")


def bundled_path(name):
    return str(CONFIG_DIR / f"{name}.toml")


@pytest.fixture()
def base_dict():
    with open(bundled_path("attack_free"), "rb") as fh:
        return tomllib.load(fh)


class TestBundledConfigs:
    @pytest.mark.parametrize("name", BUNDLED)
    def test_loads(self, name):
        cfg = load_scenario(bundled_path(name))
        assert cfg.name == name
        assert cfg.horizon == 50
        assert cfg.topology.n_agents == 2
        assert cfg.snapshots == (22, 23, 24)

    def test_attack_parameters(self):
        replay = load_scenario(bundled_path("replay")).attack
        assert replay.kind == "replay"
        assert replay.record_window == (5, 10)
        assert replay.active_window == (20, 25)
        assert replay.targets == (0, 1)

        control = load_scenario(bundled_path("fdi_control")).attack
        assert control.kind == "fdi_control"
        np.testing.assert_array_equal(control.injection, [4.0, 4.0])

        channel = load_scenario(bundled_path("fdi_channel")).attack
        assert channel.kind == "fdi_channel"
        assert channel.targets == ((1, 0),)
        assert channel.channel_mode == "replace"
        np.testing.assert_array_equal(channel.injection, [5.0, 5.0])

    def test_models_match_library_benchmark(self):
        cfg = load_scenario(bundled_path("attack_free"))
        for built, reference in zip(cfg.models, bm.benchmark_models()):
            for rb, rr in zip(built.rules, reference.rules):
                for field in ("A", "B", "M", "C", "D", "A_leader"):
                    np.testing.assert_array_equal(
                        getattr(rb, field), getattr(rr, field))
            for field in ("H1", "E1", "H2", "E2", "H3", "E3", "H4", "E4"):
                np.testing.assert_array_equal(
                    getattr(built.bounds, field), getattr(reference.bounds, field))

    def test_wired_callables_follow_benchmark(self):
        cfg = load_scenario(bundled_path("attack_free"))
        assert cfg.noise(7) == bm.noise(7)
        np.testing.assert_array_equal(cfg.schedule_Q(13), bm.schedule_Q(13))
        x = np.array([0.4, -0.2])
        u = np.array([0.1, 0.3])
        np.testing.assert_array_equal(
            cfg.plant(1, x, u, 0.05), bm.simulate_plant(2, x, u, 0.05))
        assert cfg.measure(0, x, 0.01) == bm.measure(1, x, 0.01)


class TestJsonMirror:
    def test_same_layout_loads_identically(self, base_dict, tmp_path):
        path = tmp_path / "mirror.json"
        path.write_text(json.dumps(base_dict))
        via_json = load_scenario(path)
        via_toml = load_scenario(bundled_path("attack_free"))
        assert via_json.horizon == via_toml.horizon
        assert via_json.attack == via_toml.attack
        np.testing.assert_array_equal(via_json.x0_leader, via_toml.x0_leader)
        for a, b in zip(via_json.P0, via_toml.P0):
            np.testing.assert_array_equal(a, b)
        # name falls back to the file stem
        assert via_json.name == "attack_free"  # explicit name key wins

    def test_unknown_extension_rejected(self, tmp_path):
        path = tmp_path / "scenario.yaml"
        path.write_text("horizon: 50")
        with pytest.raises(ConfigError, match="toml or .json"):
            load_scenario(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="no such file"):
            load_scenario(tmp_path / "nope.toml")

    def test_invalid_toml_reported(self, tmp_path):
        path = tmp_path / "broken.toml"
        path.write_text("horizon = = 50")
        with pytest.raises(ConfigError, match="invalid TOML"):
            load_scenario(path)


class TestValidation:
    def reject(self, data, match):
        with pytest.raises(ConfigError, match=match):
            scenario_from_dict(data)

    def test_missing_horizon(self, base_dict):
        d = copy.deepcopy(base_dict)
        del d["horizon"]
        self.reject(d, "horizon")

    def test_bad_rule_matrix(self, base_dict):
        d = copy.deepcopy(base_dict)
        d["agents"][0]["rules"][0]["A"] = [[0.5, -0.3]]  # not square
        self.reject(d, r"agents\[0\]")

    def test_missing_bounds(self, base_dict):
        d = copy.deepcopy(base_dict)
        del d["agents"][1]["bounds"]["H3"]
        self.reject(d, "missing matrices")

    def test_unknown_membership_family(self, base_dict):
        d = copy.deepcopy(base_dict)
        d["agents"][0]["memberships"]["family"] = "gaussian"
        self.reject(d, "unknown family")

    def test_dimension_disagreement_across_agents(self, base_dict):
        d = copy.deepcopy(base_dict)
        for rule in d["agents"][1]["rules"]:
            rule["M"] = [[1.0, 0.0], [1.0, 0.0]]  # second noise channel
        d["agents"][1]["bounds"]["E2"] = [[0.0, 0.0], [0.0, 0.0]]
        self.reject(d, "disagree")

    def test_bad_attack_kind(self, base_dict):
        d = copy.deepcopy(base_dict)
        d["attack"] = {"kind": "jamming"}
        self.reject(d, "unknown kind")

    def test_replay_windows_must_not_touch(self, base_dict):
        d = copy.deepcopy(base_dict)
        d["attack"] = {"kind": "replay", "record": [5, 20],
                       "active": [20, 25], "targets": [0]}
        self.reject(d, "attack")

    def test_injection_length_checked(self, base_dict):
        d = copy.deepcopy(base_dict)
        d["attack"] = {"kind": "fdi_control", "active": [20, 25],
                       "injection": [4.0], "targets": [0]}
        self.reject(d, "length")

    def test_channel_edge_range_checked(self, base_dict):
        d = copy.deepcopy(base_dict)
        d["attack"] = {"kind": "fdi_channel", "active": [20, 25],
                       "injection": [5.0, 5.0], "edges": [[2, 0]]}
        self.reject(d, "bad edge")

    def test_target_agent_range_checked(self, base_dict):
        d = copy.deepcopy(base_dict)
        d["attack"] = {"kind": "fdi_control", "active": [20, 25],
                       "injection": [4.0, 4.0], "targets": [0, 5]}
        self.reject(d, "targets")

    def test_snapshots_inside_horizon(self, base_dict):
        d = copy.deepcopy(base_dict)
        d["output"]["snapshots"] = [10, 50]
        self.reject(d, "snapshots")

    def test_tol_range(self, base_dict):
        d = copy.deepcopy(base_dict)
        d["solver"]["tol"] = 1e-2
        self.reject(d, "tol")

    def test_initial_shape_must_be_spd(self, base_dict):
        d = copy.deepcopy(base_dict)
        d["initial"]["P"] = [[1.0, 2.0], [2.0, 1.0]]  # indefinite
        self.reject(d, "initial")

    def test_topology_must_be_square(self, base_dict):
        d = copy.deepcopy(base_dict)
        d["topology"]["adjacency"] = [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]
        self.reject(d, "topology")

    def test_dynamics_agent_count(self, base_dict):
        d = copy.deepcopy(base_dict)
        d["agents"] = d["agents"][:1]
        d["topology"] = {"adjacency": [[0.0]], "pinning": [1.0]}
        d["initial"]["x_true"] = [[0.0, 0.0]]
        d["initial"]["x_estimate"] = [[1.0, 1.0]]
        self.reject(d, "2 agents")


class TestInitialForms:
    def test_scalar_matrix_and_per_agent_lists(self, base_dict):
        d = copy.deepcopy(base_dict)
        d["initial"]["P"] = 100.0
        cfg_scalar = scenario_from_dict(d)
        d2 = copy.deepcopy(base_dict)
        d2["initial"]["P"] = [[100.0, 0.0], [0.0, 100.0]]
        cfg_mat = scenario_from_dict(d2)
        d3 = copy.deepcopy(base_dict)
        d3["initial"]["P"] = [[[100.0, 0.0], [0.0, 100.0]]] * 2
        cfg_list = scenario_from_dict(d3)
        for cfg in (cfg_scalar, cfg_mat, cfg_list):
            for P in cfg.P0:
                np.testing.assert_array_equal(P, 100.0 * np.eye(2))

    def test_shared_estimate_vector_broadcasts(self, base_dict):
        d = copy.deepcopy(base_dict)
        d["initial"]["x_estimate"] = [1.0, 1.0]
        cfg = scenario_from_dict(d)
        assert len(cfg.x0_estimate) == 2
        for vec in cfg.x0_estimate:
            np.testing.assert_array_equal(vec, [1.0, 1.0])


class TestGenerators:
    def test_seeded_uniform_is_deterministic_and_admissible(self, base_dict):
        d = copy.deepcopy(base_dict)
        d["schedules"] = {"weights": "benchmark_decay",
                          "noise": "seeded_uniform", "seed": 11}
        cfg = scenario_from_dict(d)
        again = scenario_from_dict(copy.deepcopy(d))
        draws = [cfg.noise(k) for k in range(60)]
        for k, (w, v) in enumerate(draws):
            assert isinstance(w, float) and isinstance(v, float)
            assert w * w <= float(cfg.schedule_Q(k)[0, 0]) + 1e-12
            assert v * v <= float(cfg.schedule_R(k)[0, 0]) + 1e-12
            assert (w, v) == again.noise(k)
        # draws vary across steps
        assert len({w for w, _ in draws}) > 50

    def test_zero_noise(self, base_dict):
        d = copy.deepcopy(base_dict)
        d["schedules"] = {"weights": "benchmark_decay", "noise": "zero"}
        cfg = scenario_from_dict(d)
        assert cfg.noise(17) == (0.0, 0.0)

    def test_constant_weights(self, base_dict):
        d = copy.deepcopy(base_dict)
        d["schedules"] = {"weights": "constant", "q": 0.5, "r": 2.0,
                          "noise": "zero"}
        cfg = scenario_from_dict(d)
        np.testing.assert_array_equal(cfg.schedule_Q(0), [[0.5]])
        np.testing.assert_array_equal(cfg.schedule_R(42), [[2.0]])


class TestOutDir:
    def test_precedence(self, base_dict, monkeypatch):
        cfg = scenario_from_dict(copy.deepcopy(base_dict))
        monkeypatch.delenv(OUT_DIR_ENV, raising=False)
        assert resolve_out_dir(cfg) == cfg.out_dir
        monkeypatch.setenv(OUT_DIR_ENV, "/tmp/envdir")
        assert resolve_out_dir(cfg) == "/tmp/envdir"
        assert resolve_out_dir(cfg, "/tmp/flagdir") == "/tmp/flagdir"
