import json

import pytest

from grainpipe.config import DEFAULTS, SEED_ENV, load_config, merge, parse_override
from grainpipe.manifest import ManifestError, check_labels, manifest_to_dict, parse_manifest


def test_defaults_untouched():
    cfg = load_config(env={})
    assert cfg == DEFAULTS
    cfg["grid"]["rho_tol"] = 99
    assert DEFAULTS["grid"]["rho_tol"] == 10.0


def test_layering(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 4, "grid": {"rho_tol": 7}}))
    cfg = load_config(path, ["grid.rho_tol=8", "spectra.natural_log=true"], env={})
    assert cfg["seed"] == 4
    assert cfg["grid"]["rho_tol"] == 8
    assert cfg["grid"]["theta_tol_deg"] == 2.0
    assert cfg["spectra"]["natural_log"] is True


def test_seed_env(tmp_path):
    assert load_config(env={SEED_ENV: "17"})["seed"] == 17
    assert load_config(overrides=["seed=3"], env={SEED_ENV: "17"})["seed"] == 3


def test_override_parsing():
    assert parse_override("a.b=1") == {"a": {"b": 1}}
    assert parse_override("a=text") == {"a": "text"}
    assert parse_override("a=[1, 2]") == {"a": [1, 2]}
    with pytest.raises(ValueError):
        parse_override("novalue")


def test_unknown_keys_rejected():
    with pytest.raises(KeyError):
        load_config(overrides=["grid.nope=1"], env={})
    with pytest.raises(TypeError):
        load_config(overrides=["grid=3"], env={})


def test_merge_is_recursive():
    assert merge({"a": {"b": 1, "c": 2}}, {"a": {"c": 3}}) == {"a": {"b": 1, "c": 3}}


def _doc():
    return {
        "seed": 5,
        "dishes": [
            {
                "dish_id": "dish01",
                "variety": "V1",
                "reference": {"rgb_frame": "d/ref.cube.json"},
                "days": [{"day": 1, "rgb_frame": "d/day1_rgb.cube.json"}, {"day": 0, "rgb_frame": "d/day0.cube.json"}],
                "germination": {"2,3": {"1": False, "2": True, "3": True}},
            }
        ],
    }


def test_manifest_parse_and_round_trip(tmp_path):
    m = parse_manifest(_doc(), tmp_path)
    d = m.dish("dish01")
    assert [e.day for e in d.days] == [0, 1]
    assert d.reference_frame == tmp_path / "d/ref.cube.json"
    assert d.germinated_by((2, 3), 2) is True and d.germinated_by((0, 0), 2) is None
    again = parse_manifest(manifest_to_dict(m), tmp_path)
    assert manifest_to_dict(again) == manifest_to_dict(m)
    assert m.seed == 5


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: d["dishes"][0]["days"].append({"day": 1}),
        lambda d: d["dishes"][0]["days"].append({"day": 6}),
        lambda d: d["dishes"].append(dict(d["dishes"][0])),
        lambda d: d["dishes"][0]["germination"].update({"5,0": {"1": True}}),
        lambda d: d["dishes"][0]["germination"].update({"1,1": {"0": True}}),
        lambda d: d["dishes"][0]["germination"].update({"1,1": {"2": True, "3": False}}),
        lambda d: d.pop("dishes"),
    ],
)
def test_bad_manifests(mutate):
    doc = _doc()
    mutate(doc)
    with pytest.raises(ManifestError):
        parse_manifest(doc)


def test_check_labels():
    check_labels({1: False, 2: False, 3: True, 4: True, 5: True})
    with pytest.raises(ManifestError):
        check_labels({1: True, 2: False})
