import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochwave.config import (
    DEFAULT_SEED,
    ConfigError,
    default_config,
    parse_config,
    validate,
)


def write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def test_minimal_config_fills_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, {"problem": "linear", "s": 0.5}), verb="temporal")
    assert cfg.seed == DEFAULT_SEED
    assert cfg.M == 100 and cfg.T == 1.0
    assert cfg.k == [2.0**-e for e in range(1, 6)]
    assert cfg.k_exact == 2.0**-9


def test_non_multiple_step_rejected(tmp_path):
    with pytest.raises(ConfigError) as exc:
        parse_config(write(tmp_path, {"k": [0.3], "k_exact": 0.25}), verb="temporal")
    assert exc.value.key == "k[0]"
    assert "k[0]" in str(exc.value)


def test_override_beats_file(tmp_path):
    cfg = parse_config(write(tmp_path, {"M": 70}), {"M": 50}, verb="temporal")
    assert cfg.M == 50
    cfg = parse_config(write(tmp_path, {"M": 70}), {"M": None}, verb="temporal")
    assert cfg.M == 70


@pytest.mark.parametrize("data, key", [
    ({"bogus": 1}, "bogus"),
    ({"M": "many"}, "M"),
    ({"M": 1}, "M"),
    ({"h": [0.125, 0.3]}, "h[1]"),
    ({"k": [0.5, -1]}, "k[1]"),
    ({"k_exact": 0.5}, "k[0]"),
    ({"T": 1.1}, "k_exact"),
    ({"schemes": ["stm", "rk4"]}, "schemes[1]"),
    ({"components": [3]}, "components[0]"),
    ({"problem": "sine-gordon"}, "problem"),
    ({"verb": "spatial"}, "verb"),
    ({"seed": -1}, "seed"),
])
def test_errors_name_the_key(tmp_path, data, key):
    with pytest.raises(ConfigError) as exc:
        parse_config(write(tmp_path, data), verb="temporal")
    assert exc.value.key == key


def test_unreadable_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        parse_config(bad)
    with pytest.raises(ConfigError):
        parse_config(write(tmp_path, [1, 2]))


def test_sv_needs_half_steps_on_the_base_grid(tmp_path):
    data = {"k": [0.5, 0.375], "k_exact": 0.125, "T": 3.0, "schemes": ["stm", "sv"]}
    with pytest.raises(ConfigError) as exc:
        parse_config(write(tmp_path, data), verb="compare")
    assert exc.value.key == "k[1]"


def test_spatial_reference_must_be_finer(tmp_path):
    with pytest.raises(ConfigError) as exc:
        parse_config(write(tmp_path, {"h": [0.25, 2.0**-8]}), verb="spatial")
    assert exc.value.key == "h[1]"


def test_trace_checkpoints_divide_steps(tmp_path):
    with pytest.raises(ConfigError) as exc:
        parse_config(write(tmp_path, {"checkpoints": 7}), verb="trace")
    assert exc.value.key == "checkpoints"


@pytest.mark.parametrize("verb", ["spatial", "temporal", "compare", "trace", "sine-gordon",
                                  "defect"])
def test_defaults_validate(verb):
    validate(default_config(verb))
    validate(default_config(verb, paper_scale=True))


def test_paper_scale_switch():
    cfg = parse_config(None, {"paper_scale": True}, verb="temporal")
    assert cfg.h == [2.0**-9, 2.0**-10, 2.0**-11] and cfg.k_exact == 2.0**-6
    assert parse_config(None, {"paper_scale": True}, verb="trace").M == 15000


def test_digest_ignores_threads():
    a, b = default_config("temporal"), default_config("temporal")
    b.threads = 8
    assert a.digest() == b.digest()
    b.seed = 7
    assert a.digest() != b.digest()


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 4), st.integers(1, 3))
def test_power_of_two_grids_accepted(lo, span, gap):
    ks = [2.0**-e for e in range(lo, lo + span + 1)]
    cfg = parse_config(None, {"k": ks, "k_exact": 2.0**-(lo + span + gap)}, verb="temporal")
    assert cfg.k == ks


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 40), st.integers(1, 9))
def test_non_multiples_rejected(n, frac):
    k_exact = 2.0**-6
    k = (n + frac / 10) * k_exact
    with pytest.raises(ConfigError):
        parse_config(None, {"k": [k], "k_exact": k_exact}, verb="temporal")
