import pytest

from pararealnet.config import SCHEMA, ConfigError, defaults, parse_config


def test_empty_text_gives_defaults():
    assert parse_config("").sections == defaults().sections
    assert parse_config("# nothing\n\n   \n").sections == defaults().sections


def test_single_override():
    cfg = parse_config("[model]\nN = 3")
    assert cfg["model"]["N"] == 3
    expected = defaults()
    expected["model"]["N"] = 3
    assert cfg.sections == expected.sections


def test_unknown_key_names_line():
    with pytest.raises(ConfigError, match="line 2") as info:
        parse_config("[model]\nn_subnets = 3")
    assert info.value.line == 2


@pytest.mark.parametrize("text, line", [
    ("[nosuch]", 1),
    ("[model]\nN = three", 2),
    ("[model]\n\nN 3", 3),
    ("N = 3", 1),
    ("[model\nN = 3", 1),
    ("[train]\naugment = maybe", 2),
])
def test_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.line == line


def test_typed_values_and_comments():
    cfg = parse_config("""
# a run
[train]
lr = 0.05     # trailing comment
milestones = 3, 6,9
augment = yes
[output]
dir = runs/a   
""")
    assert cfg["train"]["lr"] == 0.05
    assert cfg["train"]["milestones"] == [3, 6, 9]
    assert cfg["train"]["augment"] is True
    assert cfg["output"]["dir"] == "runs/a"


def test_defaults_are_independent_copies():
    a = defaults()
    a["train"]["milestones"].append(7)
    assert defaults()["train"]["milestones"] == [80, 120]
    assert set(SCHEMA) == {"model", "train", "data", "exec", "ode", "gradcheck", "consistency", "output"}
