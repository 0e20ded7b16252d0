import pytest

from dsgtlab.config import ConfigError, parse_config, parse_config_text, serialize, with_value

MINIMAL = """
[problem]
kind = least_squares
[topology]
kind = ring
n = 4
[algorithm]
kind = dsgt
[run]
K = 10
seeds = 1
"""


def test_minimal_config_gets_defaults(tmp_path):
    cfg = parse_config_text(MINIMAL, base_dir=tmp_path)
    assert cfg.run.stride == 1
    assert cfg.run.divergence_threshold == 1e6
    assert cfg.schedule.kind == "cap"
    assert cfg.run.seeds == (1,)
    assert cfg.n == 4


def test_missing_algorithm_names_key():
    text = MINIMAL.replace("[algorithm]\nkind = dsgt\n", "")
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text)
    assert exc.value.key == "algorithm.kind"
    assert "algorithm.kind" in str(exc.value)


def test_unknown_key_names_key_and_line():
    text = MINIMAL.replace("n = 4", "n = 4\nwidth = 3")
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text)
    assert exc.value.key == "topology.width"
    assert exc.value.line == 7


def test_type_mismatch_names_key_and_line():
    text = MINIMAL.replace("K = 10", "K = ten")
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text)
    assert exc.value.key == "run.K" and exc.value.line == 10


@pytest.mark.parametrize(
    "change,key",
    [
        (("kind = least_squares", "kind = hinge"), "problem.kind"),
        (("kind = dsgt", "kind = adam"), "algorithm.kind"),
        (("seeds = 1", "seeds = 1\nstride = 0"), "run.stride"),
        (("n = 4", "n = 4\nmatrix = missing.txt"), "topology.matrix"),
        (("kind = least_squares", "kind = least_squares\nproportions = 0.5, 0.5"), "problem.proportions"),
        (("kind = least_squares", "kind = least_squares\neta = 1.5"), "problem.eta"),
        (("kind = dsgt", "kind = dsgt\n[schedule]\nkind = constant"), "schedule.gamma0"),
    ],
)
def test_semantic_errors(change, key):
    with pytest.raises(ConfigError) as exc:
        parse_config_text(MINIMAL.replace(*change))
    assert exc.value.key == key


def test_unknown_section_and_duplicates():
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config_text(MINIMAL + "[extras]\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text(MINIMAL.replace("K = 10", "K = 10\nK = 11"))


def test_comments_and_round_trip(tmp_path):
    text = MINIMAL.replace("n = 4", "n = 4   # four nodes\n# a comment line") + "\nstride = 3\n"
    path = tmp_path / "exp.cfg"
    path.write_text(text)
    cfg = parse_config(path)
    assert cfg.run.stride == 3
    again = parse_config_text(serialize(cfg), base_dir=tmp_path)
    assert again == cfg
    assert serialize(again) == serialize(cfg)


def test_round_trip_with_every_type(tmp_path):
    text = """
[problem]
kind = logistic
samples = 40
dim = 3
separation = 1.5
proportions = 0.25, 0.25, 0.5
shuffle = no
eta = 0.25
[topology]
kind = path
n = 3
[algorithm]
kind = dpsgd
x0 = 1, 2, 3
[schedule]
kind = diminishing
a = 0.1
p = 0.75
[run]
K = 5
seeds = 3, 1, 2
epsilon = 1e-3
bound = true
"""
    cfg = parse_config_text(text, base_dir=tmp_path)
    assert cfg.problem.shuffle is False and cfg.run.bound is True
    assert parse_config_text(serialize(cfg), base_dir=tmp_path) == cfg


def test_relative_paths_resolve_against_config_dir(tmp_path):
    (tmp_path / "w.txt").write_text("0.5 0.5\n0.5 0.5\n")
    (tmp_path / "exp.cfg").write_text(MINIMAL.replace("n = 4", "n = 2\nmatrix = w.txt"))
    cfg = parse_config(tmp_path / "exp.cfg")
    assert cfg.topology.matrix == str((tmp_path / "w.txt").resolve())


def test_with_value_revalidates():
    cfg = parse_config_text(MINIMAL)
    assert with_value(cfg, "run.K", 20).run.K == 20
    with pytest.raises(ConfigError):
        with_value(cfg, "run.K", -1)
    with pytest.raises(ConfigError):
        with_value(cfg, "run.bogus", 1)
