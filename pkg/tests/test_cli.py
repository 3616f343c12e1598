import json

import pytest

from misspec.cli import config_hash, load_config, main

FAST = {
    "bound": {"grids": {"t_delta": 41, "delta_sup": 21, "alpha": 201}},
    "construct": {"grid_resolution": 60},
    "regret": {"n": 60, "sequences": 2, "grid_size": 64},
    "aha": {"n": 60, "K": 3, "d": 3, "test_size": 100},
    "experiment": {"d": 3, "n_grid": [30], "K": 2, "schedules": [["const", 1.0]], "test_size": 100,
                   "replications": 2},
    "bvm": {"seeds": 1, "n_list": [100], "grid_size": 201},
    "demo": {},
    "mixability": {"k_list": [2], "grid_resolution": 11},
}


def run(tmp_path, command, cfg, *extra, out="out"):
    path = tmp_path / f"{command}.json"
    path.write_text(json.dumps(cfg))
    return main([command, "--config", str(path), "--out", str(tmp_path / out), *extra])


def read_outputs(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


@pytest.mark.parametrize("command", sorted(FAST))
def test_rerun_is_byte_identical(tmp_path, command):
    assert run(tmp_path, command, FAST[command], "--seed", "3", out="a") == 0
    assert run(tmp_path, command, FAST[command], "--seed", "3", out="b") == 0
    a, b = read_outputs(tmp_path / "a"), read_outputs(tmp_path / "b")
    assert a and a == b
    assert not any(name.endswith(".tmp") for name in a)


def test_existing_outputs_need_force(tmp_path):
    assert run(tmp_path, "demo", {}) == 0
    assert run(tmp_path, "demo", {}) == 2
    assert run(tmp_path, "demo", {}, "--force") == 0


def test_malformed_config_writes_nothing(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["bound", "--config", str(path), "--out", str(tmp_path / "out")]) == 2
    assert not (tmp_path / "out").exists()


def test_epsilon_out_of_range_rejected(tmp_path):
    assert run(tmp_path, "construct", {"epsilon": 0.9}) == 2
    assert not (tmp_path / "out").exists()


def test_infeasible_construction_exit_three(tmp_path):
    assert run(tmp_path, "construct", {"t": 0.5, "y": 0.5, "grid_resolution": 40}) == 3


def test_construct_default_passes(tmp_path):
    assert run(tmp_path, "construct", {}) == 0
    cert = json.loads((tmp_path / "out" / "certificate.json").read_text())
    assert cert["status"] == "pass"
    assert cert["meta"]["seed"] == 0


def test_construct_zero_gamma(tmp_path):
    assert run(tmp_path, "construct", {"gamma": 0.0, "grid_resolution": 60}) == 0
    cert = json.loads((tmp_path / "out" / "certificate.json").read_text())
    assert cert["certificate"]["lecam_value"] == 0.0


def test_verify_reloads_instance(tmp_path):
    assert run(tmp_path, "construct", FAST["construct"]) == 0
    inst = str(tmp_path / "out" / "instance.json")
    assert run(tmp_path, "verify", {"instance": inst, "grid_resolution": 60}, out="v") == 0
    a = json.loads((tmp_path / "out" / "certificate.json").read_text())["certificate"]
    b = json.loads((tmp_path / "v" / "certificate.json").read_text())["certificate"]
    assert a["sep_bruteforce"] == b["sep_bruteforce"]


def test_bound_zero_gamma(tmp_path):
    cfg = dict(FAST["bound"], radii={"gamma": 0.0})
    assert run(tmp_path, "bound", cfg) == 0
    doc = json.loads((tmp_path / "out" / "bound.json").read_text())
    assert doc["lambda"] == 0.0 and doc["linearity_lower_bound"] == 0.0


def test_bound_small_radius_logistic(tmp_path):
    cfg = dict(FAST["bound"], loss={"family": "logistic"}, radii={"R": 1.0, "B": 1.0, "gamma": 1.0, "n": 10_000})
    assert run(tmp_path, "bound", cfg) == 0
    doc = json.loads((tmp_path / "out" / "bound.json").read_text())
    assert doc["lambda"] > 0
    assert doc["closed_form_bound"]["value"] == pytest.approx(min(1 / 100, 1 / 10_000))


def test_demo_table(tmp_path):
    assert run(tmp_path, "demo", {"n_list": [10, 100, 1000]}) == 0
    lines = (tmp_path / "out" / "demo.csv").read_text().splitlines()
    assert lines[0].startswith("n,risk_best_theta,risk_mixture")
    mix = [float(line.split(",")[2]) for line in lines[1:]]
    assert len(mix) == 3 and mix[0] > mix[1] > mix[2]


def test_mixability_table(tmp_path):
    assert run(tmp_path, "mixability", {"k_list": [2], "grid_resolution": 21}) == 0
    doc = json.loads((tmp_path / "out" / "mixability.json").read_text())
    assert doc["table"] == {"log": 1.0, "squared": 1.0, "hellinger": 3.0, "quadratic": 0.5}
    holds = {(c["rule"], c["eta"]): c["holds"] for c in doc["checks"]}
    assert holds[("hellinger", 27 / 8)] and not holds[("log", 2.0)]


def test_seed_changes_hash():
    a = load_config("demo", None, 1)
    b = load_config("demo", None, 2)
    assert config_hash("demo", a) != config_hash("demo", b)


def test_unknown_key_rejected(tmp_path):
    assert run(tmp_path, "regret", {"nonsense": 1}) == 2
