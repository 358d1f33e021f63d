import logging
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distillbox import transforms as tf
from distillbox.builtins import default_registry
from distillbox.config.experiment import (ConfigError, apply_overrides, build_experiment, load_config_file,
                                          parse_override)
from distillbox.config.instantiate import InstantiationError, ReferenceCycleError, instantiate, resolve_config
from distillbox.config.parser import ConfigSyntaxError, Tagged, parse_config, serialize_config
from distillbox.config.registry import Registry, RegistryError, register
from distillbox.distillation import LossTermSpec, WeightedSumLoss

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


# -- parser ---------------------------------------------------------------

def test_minimal_mapping():
    assert parse_config("a: 1") == {"a": 1}


def test_parse_is_deterministic():
    assert parse_config("a: [1, 1]") == parse_config("a: [1, 1]") == {"a": [1, 1]}


def test_scalars():
    cfg = parse_config("""
i: 3
f: 0.5
e: 1e-3
neg: -2
t: true
n: null
tilde: ~
s: hello world
q: "quoted # not a comment"
sq: 'it''s'
inf: .inf
""")
    assert cfg == {"i": 3, "f": 0.5, "e": 1e-3, "neg": -2, "t": True, "n": None, "tilde": None,
                   "s": "hello world", "q": "quoted # not a comment", "sq": "it's", "inf": math.inf}
    assert isinstance(cfg["i"], int) and isinstance(cfg["e"], float)


def test_nested_blocks_and_sequences():
    cfg = parse_config("""
top:
  list:
  - a
  - b: 1
    c: [1, {x: 2}]
  other:
    - 1
    - - 2
      - 3
""")
    assert cfg == {"top": {"list": ["a", {"b": 1, "c": [1, {"x": 2}]}], "other": [1, [2, 3]]}}


def test_multiline_flow():
    assert parse_config("a: [1,\n  2, 3]\nb: 4") == {"a": [1, 2, 3], "b": 4}


def test_transform_listing_tree_shape():
    tree = parse_config((CONFIGS / "image_transform.yaml").read_text())
    assert isinstance(tree, Tagged) and tree.tag == "import_call"
    leaves = tree.value["init"]["kwargs"]["transforms"]
    assert len(leaves) == 4
    assert all(isinstance(t, Tagged) and t.tag == "import_call" for t in leaves)
    assert [t.value["key"] for t in leaves] == ["transform.random_crop", "transform.random_horizontal_flip",
                                                  "transform.to_tensor", "transform.normalize"]
    assert leaves[2].value["init"] is None  # bare `init:`


@pytest.mark.parametrize("text, needle, line", [
    ("a: 1\na: 2", "duplicate key", 2),
    ("a: !import_get x", "unknown tag", 1),
    ("a: &x 1", "anchors", 1),
    ("a: |\n  text", "block scalars", 1),
    ("a: 1\n---\nb: 2", "multiple documents", 2),
    ("a:\n\t- 1", "tab", 2),
    ("a: [1, 2", "unterminated", 1),
    ("a: 1\n   b: 2", "indentation", 2),
])
def test_syntax_errors_carry_position(text, needle, line):
    with pytest.raises(ConfigSyntaxError, match=needle) as info:
        parse_config(text)
    assert info.value.line == line


def test_comments_ignored():
    assert parse_config("# header\na: 1  # trailing\nb: 'x#y'") == {"a": 1, "b": "x#y"}


def test_tag_forms():
    cfg = parse_config("r: !ref a.b\nc: !import_call {key: k}\nd: !import_call\n  key: k2\n")
    assert cfg["r"] == Tagged("ref", "a.b")
    assert cfg["c"] == Tagged("import_call", {"key": "k"})
    assert cfg["d"] == Tagged("import_call", {"key": "k2"})


keys = st.text("abcdefghij_", min_size=1, max_size=6)
scalars = st.one_of(st.integers(-10**6, 10**6), st.booleans(), st.none(),
                    st.floats(allow_nan=False, allow_infinity=False, width=64),
                    st.text("abc xyz-#:'\"[]{}", max_size=8))
trees = st.recursive(scalars, lambda kids: st.one_of(st.lists(kids, max_size=3),
                                                     st.dictionaries(keys, kids, max_size=3)), max_leaves=12)


@settings(max_examples=200, deadline=None)
@given(st.dictionaries(keys, trees, min_size=1, max_size=4))
def test_serialize_round_trip(tree):
    assert parse_config(serialize_config(tree)) == tree


def test_serialize_round_trip_shipped_configs():
    for path in sorted(CONFIGS.glob("*.yaml")):
        tree = load_config_file(path)
        assert parse_config(serialize_config(tree)) == tree, path.name


# -- registry ---------------------------------------------------------------

def test_registry_round_trip_and_errors():
    reg = Registry()
    def b():
        return 1
    assert register(reg, "model.mlp", "model", b) is reg
    assert reg.lookup("model.mlp") is b
    assert reg.kind("model.mlp") == "model"
    with pytest.raises(RegistryError, match="duplicate"):
        register(reg, "model.mlp", "model", b)
    with pytest.raises(RegistryError, match="unknown registry key"):
        reg.lookup("absent")
    with pytest.raises(RegistryError, match="kind"):
        reg.register("x", "gadget", b)


def test_registry_decorator_and_freeze():
    reg = Registry()

    @reg.register("other.answer", "other")
    def answer():
        return 42

    assert reg.lookup("other.answer")() == 42
    reg.freeze()
    with pytest.raises(RegistryError, match="read-only"):
        reg.register("other.late", "other", answer)


# -- instantiation -------------------------------------------------------------

def test_untagged_scalars_identity():
    assert instantiate(42, default_registry()) == 42
    assert instantiate({"a": [1, "x"]}, default_registry()) == {"a": [1, "x"]}


def test_transform_config_builds_same_pipeline():
    built = instantiate(load_config_file(CONFIGS / "image_transform.yaml"), default_registry())
    mean = (0.49139968, 0.48215827, 0.44653124)
    std = (0.24703233, 0.24348505, 0.26158768)
    by_hand = tf.Compose((tf.RandomCrop(32, 4), tf.RandomHorizontalFlip(0.5), tf.ToTensor(),
                          tf.Normalize(mean, std)))
    assert built == by_hand
    img = np.random.default_rng(0).integers(0, 256, size=(32, 32, 3)).astype(np.uint8)
    for seed in range(5):
        a = built(img, np.random.default_rng(seed))
        b = by_hand(img, np.random.default_rng(seed))
        np.testing.assert_array_equal(a.data, b.data)


def test_transform_steps_match_manual_application():
    img = np.arange(4 * 4 * 3, dtype=np.uint8).reshape(4, 4, 3)
    rng = np.random.default_rng(1)
    out = tf.Compose((tf.RandomHorizontalFlip(1.0), tf.ToTensor(), tf.Normalize((0.5,) * 3, (0.25,) * 3)))(img, rng)
    expected = (img[:, ::-1, :].transpose(2, 0, 1) / 255.0 - 0.5) / 0.25
    np.testing.assert_allclose(out.data, expected, rtol=0, atol=1e-15)


def test_permuted_kwargs_equal_objects():
    a = parse_config("""
!import_call
key: loss.weighted_sum
init:
  kwargs:
    terms:
      - {kind: cross_entropy, weight: 0.3}
      - {tau: 4.0, weight: 0.7, kind: kd_kl}
""")
    b = parse_config("""
!import_call
key: loss.weighted_sum
init:
  kwargs:
    terms:
      - {weight: 0.3, kind: cross_entropy}
      - {kind: kd_kl, weight: 0.7, tau: 4.0}
""")
    reg = default_registry()
    oa, ob = instantiate(a, reg), instantiate(b, reg)
    by_hand = WeightedSumLoss((LossTermSpec("cross_entropy", 0.3), LossTermSpec("kd_kl", 0.7, tau=4.0)))
    assert oa == ob == by_hand


def test_post_order_logging(caplog):
    tree = load_config_file(CONFIGS / "image_transform.yaml")
    with caplog.at_level(logging.INFO, logger="distillbox.config.instantiate"):
        instantiate(tree, default_registry())
    keys = [r.args[0] for r in caplog.records]
    assert keys == ["transform.random_crop", "transform.random_horizontal_flip", "transform.to_tensor",
                    "transform.normalize", "transform.compose"]


def test_int_widened_to_float():
    opt = instantiate(parse_config("!import_call {key: optimizer.sgd, init: {kwargs: {lr: 1}}}"),
                      default_registry())
    assert isinstance(opt.lr, float)


def test_instantiation_errors_name_path():
    reg = default_registry()
    with pytest.raises(InstantiationError, match=r"a\.b.*unknown registry key"):
        resolve_config(parse_config("a:\n  b: !import_call {key: nope}"), reg)
    with pytest.raises(InstantiationError, match="bad arguments"):
        instantiate(parse_config("!import_call {key: optimizer.sgd, init: {kwargs: {rate: 1}}}"), reg)
    with pytest.raises(InstantiationError, match="unknown fields"):
        instantiate(parse_config("!import_call {key: optimizer.sgd, args: [1]}"), reg)


def test_refs_and_cycles():
    reg = default_registry()
    cfg = parse_config("""
opt: !import_call {key: optimizer.sgd, init: {kwargs: {lr: 0.5}}}
same: !ref opt
lr: !ref opt.lr
ctx: !ref outside.value
""")
    out = resolve_config(cfg, reg, context={"outside": {"value": 7}})
    assert out["same"] is out["opt"]
    assert out["lr"] == 0.5 and out["ctx"] == 7
    with pytest.raises(ReferenceCycleError, match="cycle"):
        resolve_config(parse_config("a: !ref b\nb: !ref a"), reg)
    with pytest.raises(InstantiationError, match="undefined"):
        resolve_config(parse_config("a: !ref missing.path"), reg)


# -- experiment plans ---------------------------------------------------------------

def test_blobs_ce_plan():
    plan = build_experiment(load_config_file(CONFIGS / "blobs_ce.yaml"), default_registry())
    assert not plan.box.is_distillation
    assert plan.num_epochs == 30


def test_blobs_kd_teacher_frozen():
    plan = build_experiment(load_config_file(CONFIGS / "blobs_kd.yaml"), default_registry())
    assert plan.box.is_distillation
    assert all(not p.requires_grad for p in plan.teacher.parameters())
    assert all(p.requires_grad for p in plan.student.parameters())


def test_missing_section():
    cfg = load_config_file(CONFIGS / "blobs_ce.yaml")
    del cfg["train"]
    with pytest.raises(ConfigError, match="missing required section 'train'"):
        build_experiment(cfg, default_registry())


@pytest.mark.parametrize("override, needle", [
    ("models.student.model.init.kwargs.out_dim=4", "head width 4"),
    ("models.student.model.init.kwargs.in_dim=3", "input width 3"),
    ("train.num_epochs=0", "train.num_epochs"),
    ("train.metrics=[f1]", "unknown metric"),
    ("datasets.key=dataset.nope", "unknown registry key"),
])
def test_plan_validation_errors(override, needle):
    cfg = apply_overrides(load_config_file(CONFIGS / "blobs_ce.yaml"), [override])
    with pytest.raises(ConfigError, match=needle):
        build_experiment(cfg, default_registry())


def test_requires_checked_up_front():
    cfg = load_config_file(CONFIGS / "blobs_ce.yaml")
    cfg["requires"] = ["model.mlp", "model.transformer"]
    with pytest.raises(ConfigError, match="model.transformer"):
        build_experiment(cfg, default_registry())


def test_kd_needs_criterion():
    cfg = load_config_file(CONFIGS / "blobs_kd.yaml")
    del cfg["train"]["criterion"]
    with pytest.raises(ConfigError, match="criterion"):
        build_experiment(cfg, default_registry())


def test_unknown_slot_rejected():
    cfg = apply_overrides(load_config_file(CONFIGS / "blobs_kd.yaml"),
                          [("train.criterion.terms.1.slots", {"teacher": "teacher.hidden"})])
    with pytest.raises(ConfigError, match="teacher.hidden"):
        build_experiment(cfg, default_registry())


def test_overrides():
    assert parse_override("a.b=1e-3") == ("a.b", 1e-3)
    assert parse_override("x=[1, 2]") == ("x", [1, 2])
    assert parse_override("s=text") == ("s", "text")
    cfg = load_config_file(CONFIGS / "blobs_ce.yaml")
    new = apply_overrides(cfg, ["train.optimizer.init.kwargs.lr=0.5", "seed=3"])
    assert new["train"]["optimizer"].value["init"]["kwargs"]["lr"] == 0.5 and new["seed"] == 3
    assert cfg["seed"] == 0  # original untouched
    with pytest.raises(ConfigError, match="does not exist"):
        apply_overrides(cfg, ["train.nothere.lr=1"])
    with pytest.raises(ConfigError, match="not of the form"):
        parse_override("seed")


def test_override_equals_edited_file():
    text = (CONFIGS / "blobs_ce.yaml").read_text()
    edited = parse_config(text.replace("lr: 0.1", "lr: 0.3").replace("seed: 0", "seed: 5"))
    overridden = apply_overrides(parse_config(text), ["train.optimizer.init.kwargs.lr=0.3", "seed=5"])
    assert edited == overridden
    from distillbox.training.loop import Runner
    r1 = Runner(build_experiment(edited, default_registry())).run()
    r2 = Runner(build_experiment(overridden, default_registry())).run()
    assert r1.dev == r2.dev and r1.test == r2.test


def test_same_config_same_object_graph_outputs():
    cfg = load_config_file(CONFIGS / "blobs_kd.yaml")
    a = build_experiment(cfg, default_registry())
    b = build_experiment(cfg, default_registry())
    for (na, pa), (nb, pb) in zip(a.student.named_parameters(), b.student.named_parameters()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()
