import numpy as np
import pytest

from dynef.basis import custom_bank, raised_cosine_bank
from dynef.model import ModelParams
from dynef.tasks import (
    ImageExample,
    TwoLayerSpec,
    augment_rotations,
    build_two_layer_graphs,
    classify,
    encode_example,
    evaluate_accuracy,
    label_encode,
    load_dataset,
    rate_decode,
    rate_encode,
    synthetic_digits,
    write_dataset,
)


def test_two_input_single_group_topology():
    g = build_two_layer_graphs(TwoLayerSpec(2, (("digit", 2),)))
    assert set(g.causal.edges) == {(0, 2), (0, 3), (1, 2), (1, 3), (2, 2), (3, 3)}
    assert g.lateral.edges == ((2, 3),)


def test_two_groups_two_lateral_edges():
    spec = TwoLayerSpec(5)
    g = build_two_layer_graphs(spec)
    assert len(g.lateral) == 2
    comps = [c for c in g.lateral.reach.components if len(c) > 1]
    assert [list(c) for c in comps] == [u.tolist() for u in spec.group_units()]


def test_no_lateral_variant():
    spec = TwoLayerSpec(4)
    with_lat = build_two_layer_graphs(spec)
    without = build_two_layer_graphs(spec, lateral=False)
    assert len(without.lateral) == 0
    assert without.causal == with_lat.causal


def test_larger_groups_are_cliques():
    g = build_two_layer_graphs(TwoLayerSpec(1, (("digit", 4),)))
    assert len(g.lateral) == 6


def test_rate_encoding_extremes():
    assert not rate_encode(np.zeros(5), 100, seed=1).any()
    train = rate_encode(np.ones(1), 100_000, seed=2)
    assert abs(train.mean() - 0.5) < 0.005


def test_rate_encoding_concentration():
    p = np.array([0.0, 0.2, 0.4, 0.8, 1.0])
    T = 20_000
    rates = rate_encode(p, T, seed=3).mean(axis=1)
    q = 0.5 * p
    assert np.all(np.abs(rates - q) <= 3 * np.sqrt(q * (1 - q) / T) + 1e-12)


def test_rate_encoding_rejects_bad_pixels():
    with pytest.raises(ValueError):
        rate_encode(np.array([1.2]), 3)


def test_label_pattern():
    out = label_encode(0, 2, 8)
    np.testing.assert_array_equal(out[0], [1, 0, 0, 0, 1, 0, 0, 0])
    assert not out[1].any()
    np.testing.assert_array_equal(label_encode(1, 2, 3)[1], [1, 0, 0])
    assert label_encode(0, 2, 0).shape == (2, 0)


def test_label_phase():
    np.testing.assert_array_equal(label_encode(1, 2, 9, phase=4)[1], [0, 0, 0, 1, 0, 0, 0, 1, 0])
    with pytest.raises(ValueError):
        label_encode(2, 2, 8)


@pytest.mark.parametrize("T", [1, 3, 4, 5, 40])
@pytest.mark.parametrize("cls", [0, 1, 2])
def test_decode_inverts_label_encode(T, cls):
    trains = label_encode(cls, 3, T)
    counts = trains.sum(axis=1)
    assert counts[cls] == -(-T // 4)
    assert rate_decode([counts]) == (cls,)


def test_rate_decode_examples():
    assert rate_decode([[5, 2]]) == (0,)
    assert rate_decode([[3, 3]]) == (0,)
    assert rate_decode([[1, 4], [7, 0]]) == (1, 0)


def test_encode_example_layout():
    spec = TwoLayerSpec(4, T=12, label_phase=2)
    ex = ImageExample(np.full((2, 2), 0.5), digit=1, orientation=1)
    x = encode_example(ex, spec, seed=0)
    assert x.symbols.shape == (8, 12)
    np.testing.assert_array_equal(x.symbols[5], label_encode(1, 2, 12, 2)[1])
    np.testing.assert_array_equal(x.symbols[7], label_encode(1, 2, 12, 2)[1])
    assert not x.symbols[4].any() and not x.symbols[6].any()


def saturating_model(spec, bank, winner):
    g = build_two_layer_graphs(spec)
    p = ModelParams.zeros(g, 2, bank.K)
    p.theta[spec.n_inputs:] = -30.0
    for units in spec.group_units():
        p.theta[units[winner]] = 30.0
    return g, p


def test_classify_saturated_neuron_wins():
    spec = TwoLayerSpec(4, T=16)
    bank = custom_bank([[1.0]])
    g, p = saturating_model(spec, bank, winner=1)
    rng = np.random.default_rng(0)
    for k in range(5):
        trains = rng.integers(0, 2, (4, 16))
        assert classify(p, g, bank, trains, spec, seed=k) == (1, 1)


def test_classify_exclusion_and_determinism():
    spec = TwoLayerSpec(3, (("digit", 3),), T=30)
    bank = raised_cosine_bank(2, 4)
    g = build_two_layer_graphs(spec)
    p = ModelParams.zeros(g, 2, 2)
    p.theta[3:] = 2.0
    p.U[...] = -1e9
    trains = np.random.default_rng(1).integers(0, 2, (3, 30))
    from dynef.model import sample_sequence
    x = sample_sequence(p, g, bank, 30, 4, clamp={u: trains[u] for u in range(3)})
    assert x.symbols[3:].sum(axis=0).max() <= 1
    assert classify(p, g, bank, trains, spec, seed=7) == classify(p, g, bank, trains, spec, seed=7)


def test_untrained_model_near_chance():
    spec = TwoLayerSpec(64, T=40)
    bank = raised_cosine_bank(2, 4)
    g = build_two_layer_graphs(spec)
    rng = np.random.default_rng(5)
    p = ModelParams.zeros(g, 2, 2)
    p.theta[...] = rng.uniform(-1, 1, p.theta.shape)
    p.V[...] = rng.uniform(-0.05, 0.05, p.V.shape)
    test = augment_rotations(synthetic_digits(50, 8, seed=9), seed=9)
    acc = evaluate_accuracy(p, g, bank, test, spec, seed=0)
    assert all(abs(a - 0.5) <= 0.1 for a in acc.values())


def test_rotation_augmentation_doubles():
    base = synthetic_digits(3, 8, seed=0)
    aug = augment_rotations(base, seed=1)
    assert len(aug) == 12
    assert [e.orientation for e in aug] == [0] * 6 + [1] * 6
    for e in aug:
        assert e.pixels.min() >= 0 and e.pixels.max() <= 1
    assert not np.allclose(aug[6].pixels, aug[0].pixels)


def test_dataset_roundtrip(tmp_path):
    exs = synthetic_digits(2, 16, seed=3)
    path = tmp_path / "d.csv"
    write_dataset(exs, path)
    back = load_dataset(path)
    assert len(back) == 4
    assert back[0].pixels.shape == (16, 16)
    np.testing.assert_array_equal([e.digit for e in back], [e.digit for e in exs])
    np.testing.assert_allclose(back[1].pixels, exs[1].pixels)
    assert len(load_dataset(path, augment=True)) == 8


def test_dataset_256_pixels(tmp_path):
    path = tmp_path / "one.csv"
    header = ",".join(f"p{k}" for k in range(256)) + ",label\n"
    path.write_text(header + ",".join(["0.5"] * 256) + ",7\n")
    (ex,) = load_dataset(path)
    assert ex.pixels.shape == (16, 16) and ex.raw_label == "7"


def test_empty_dataset_warns(tmp_path, caplog):
    path = tmp_path / "empty.csv"
    path.write_text("")
    assert load_dataset(path) == []
    assert "empty" in caplog.text


def test_dataset_errors_report_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c,d,label\n0,0,0,0,1\n0,x,0,0,1\n")
    with pytest.raises(ValueError, match=r"bad\.csv:3"):
        load_dataset(path)
    path.write_text("a,b,c,d,label\n0,0,1.5,0,1\n")
    with pytest.raises(ValueError, match=r":2"):
        load_dataset(path)
