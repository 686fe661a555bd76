import math

import numpy as np
import pytest

from depkit.errors import BadParameters, EmptyDataset
from depkit.model import Affine, Network, ReLU, cross_entropy, random_network, softmax
from depkit.metrics import (
    KindReport,
    Perturbation,
    PerturbationReport,
    box_blur,
    fgsm,
    heatmap_pgm,
    label_probability,
    occlusion_sensitivity,
    parse_kinds,
    perturb,
    perturbation_loss,
)


def drop_net(p_pert=0.166, high=50.0):
    """One-pixel, two-class net: P(class 0) is ~1.0 at x=0 and p_pert at x=1."""
    target = math.log(p_pert / (1 - p_pert))
    return Network(1, (Affine([[-(high - target)], [0.0]], [high, 0.0]),))


def test_haze_identity_and_full():
    img = np.random.default_rng(0).random((5, 4, 3))
    assert np.array_equal(perturb(img, Perturbation("haze", {"alpha": 0.0})), img)
    assert np.all(perturb(img, Perturbation("haze", {"alpha": 1.0})) == 1.0)


@pytest.mark.parametrize("kind, params", [
    ("snow", {"density": 0.0}), ("saltpepper", {"density": 0.0}), ("blur", {"radius": 1}),
])
def test_zero_parameter_identity(kind, params):
    img = np.random.default_rng(1).random((6, 6, 2))
    assert np.array_equal(perturb(img, Perturbation(kind, params), seed=3), img)


def test_gaussian_mean_abs_change():
    img = np.full((200, 200, 1), 0.5)
    sigma = 0.05
    out = perturb(img, Perturbation("gaussian", {"sigma": sigma}), seed=42)
    expected = sigma * math.sqrt(2 / math.pi)
    assert abs(np.mean(np.abs(out - img)) - expected) / expected < 0.05


@pytest.mark.parametrize("kind", ["gaussian", "haze", "fog", "snow", "saltpepper", "blur"])
def test_clamped_and_deterministic(kind):
    img = np.random.default_rng(2).random((8, 8, 3))
    pert = Perturbation(kind, {"sigma": 0.8} if kind == "gaussian" else {})
    a = perturb(img, pert, seed=5)
    b = perturb(img, pert, seed=5)
    assert a.shape == img.shape
    assert np.all((a >= 0) & (a <= 1))
    assert np.array_equal(a, b)


def test_snow_and_saltpepper_counts():
    img = np.full((10, 10, 3), 0.5)
    snow = perturb(img, Perturbation("snow", {"density": 0.2, "brightness": 0.9}), seed=1)
    changed = np.any(snow != 0.5, axis=2)
    assert changed.sum() == 20 and np.all(snow[changed] == 0.9)
    sp = perturb(img, Perturbation("saltpepper", {"density": 0.1}), seed=1)
    assert (sp == 0).all(axis=2).sum() == 5 and (sp == 1).all(axis=2).sum() == 5


def test_box_blur_clamps_edges():
    img = np.zeros((3, 3, 1))
    img[0, 0, 0] = 9.0
    out = box_blur(img, 2)  # 3x3 kernel
    # corner window with edge replication holds the 9 four times
    assert out[0, 0, 0] == pytest.approx(4.0)
    assert out[1, 1, 0] == pytest.approx(1.0)
    assert out[2, 2, 0] == pytest.approx(0.0)


def test_fog_is_haze_then_blur():
    img = np.random.default_rng(4).random((6, 6, 1))
    fog = perturb(img, Perturbation("fog", {"alpha": 0.4, "blur_radius": 2}))
    manual = box_blur(0.6 * img + 0.4, 2)
    np.testing.assert_allclose(fog, manual)


def test_bad_parameters():
    for kind, params in [("gaussian", {"sigma": 0}), ("haze", {"alpha": 1.5}), ("blur", {"radius": 0}),
                         ("blur", {"radius": 1.5}), ("fgsm", {"epsilon": -1}), ("snow", {"colour": 1})]:
        with pytest.raises(BadParameters):
            Perturbation(kind, params)
    with pytest.raises(BadParameters):
        Perturbation("rain")
    with pytest.raises(BadParameters):
        perturb(np.zeros((2, 2, 1)), Perturbation("fgsm"))


def test_parse_kinds():
    kinds = parse_kinds("gaussian,haze:alpha=0.5,fog:alpha=0.2;blur_radius=3")
    assert [k.kind for k in kinds] == ["gaussian", "haze", "fog"]
    assert kinds[1].params == {"alpha": 0.5}
    assert kinds[2].params == {"alpha": 0.2, "blur_radius": 3.0}
    with pytest.raises(BadParameters):
        parse_kinds("haze:alpha=x")


def test_fgsm_zero_gradient():
    net = Network(4, (Affine(np.zeros((2, 4)), np.zeros(2)),))
    img = np.random.default_rng(0).random((2, 2, 1))
    assert np.array_equal(fgsm(net, img, 0, 0.1), img)


def test_fgsm_optimal_on_linear_model(rng):
    # with two classes the loss is a monotone function of one linear form,
    # so the signed step is the exact maximizer over the L-inf ball
    w = rng.normal(size=(2, 6))
    net = Network(6, (Affine(w, rng.normal(size=2)),))
    img = rng.uniform(0.3, 0.7, (2, 3, 1))
    eps, label = 0.05, 1
    best = cross_entropy(net, fgsm(net, img, label, eps).ravel(), label)
    x = img.ravel()
    for bits in range(2**6):
        d = np.array([1.0 if bits >> i & 1 else -1.0 for i in range(6)]) * eps
        assert cross_entropy(net, x + d, label) <= best + 1e-12
    for d in rng.uniform(-eps, eps, (200, 6)):
        assert cross_entropy(net, x + d, label) <= best + 1e-12
    assert best > cross_entropy(net, x, label)


def test_fgsm_first_order_increase():
    rng = np.random.default_rng(9)
    wins = trials = 0
    while trials < 200:
        net = random_network(rng, [3, 4, 2])
        x = rng.uniform(0.2, 0.8, (3, 1, 1))
        label = int(rng.integers(2))
        h = net.layers[0].weights @ x.ravel() + net.layers[0].bias
        if np.min(np.abs(h)) < 0.01:
            continue  # too close to a ReLU kink
        trials += 1
        adv = fgsm(net, x, label, 1e-3)
        wins += cross_entropy(net, adv.ravel(), label) >= cross_entropy(net, x.ravel(), label)
    assert wins >= 0.95 * trials


def test_loss_arithmetic_834():
    net = drop_net()
    img = np.zeros((1, 1, 1))
    assert label_probability(net, img, 0) == 1.0
    report = perturbation_loss(net, [(img, 0)], [Perturbation("haze", {"alpha": 1.0})])
    assert report.kinds[0].losses[0] == pytest.approx(0.834, abs=1e-12)
    assert report.quantity("AVERAGE_LOSS") == {"haze": report.kinds[0].losses[0]}


def test_identity_perturbation_zero_loss(rng):
    net = random_network(rng, [4, 5, 3])
    data = [(rng.random((2, 2, 1)), int(rng.integers(3))) for _ in range(5)]
    rep = perturbation_loss(net, data, [Perturbation("haze", {"alpha": 0.0})])
    assert rep.kinds[0].average_loss == 0.0 and rep.kinds[0].max_loss == 0.0


def test_aggregation_and_clamping():
    k = KindReport(Perturbation("haze"), [0.2, 0.6], [0.2, 0.6])
    assert k.average_loss == pytest.approx(0.4) and k.max_loss == 0.6
    rep = PerturbationReport([k])
    assert rep.quantity("MAX_LOSS") == {"haze": 0.6}
    with pytest.raises(BadParameters):
        rep.quantity("MEDIAN_LOSS")
    # a perturbation that raises confidence counts as zero loss, raw drop kept
    net = Network(1, (Affine([[50.0], [0.0]], [-25.0, 0.0]),))
    r = perturbation_loss(net, [(np.full((1, 1, 1), 0.5), 0)], [Perturbation("haze", {"alpha": 1.0})])
    assert r.kinds[0].losses == [0.0]
    assert r.kinds[0].raw_drops[0] == pytest.approx(-0.5)


def test_report_reproducible_and_order_free(rng):
    net = random_network(rng, [16, 6, 3])
    data = [(rng.random((4, 4, 1)), int(rng.integers(3))) for _ in range(6)]
    kinds = parse_kinds("gaussian,snow,saltpepper,fgsm")
    a = perturbation_loss(net, data, kinds, seed=7).to_dict()
    b = perturbation_loss(net, data, kinds, seed=7).to_dict()
    assert a == b
    # each kind computed alone gives the same numbers
    for i, k in enumerate(kinds):
        alone = perturbation_loss(net, data, [k], seed=7).to_dict()["kinds"][0]
        assert alone == a["kinds"][i]
    for k in a["kinds"]:
        losses = [e["loss"] for e in k["per_example"]]
        assert k["average_loss"] == sum(losses) / len(losses)
        assert k["max_loss"] == max(losses)


def test_empty_dataset():
    with pytest.raises(EmptyDataset):
        perturbation_loss(drop_net(), [], [Perturbation("haze")])


def test_occlusion_matches_recomputation(rng):
    net = random_network(rng, [16, 5, 3])
    img = rng.random((4, 4, 1))
    heat, max_drop = occlusion_sensitivity(net, img, 2, patch_size=2, stride=2)
    assert heat.shape == (2, 2)
    p0 = softmax(net_logits(net, img))[2]
    for r in range(2):
        for c in range(2):
            occ = img.copy()
            occ[2 * r : 2 * r + 2, 2 * c : 2 * c + 2] = 0.5
            assert heat[r, c] == pytest.approx(p0 - softmax(net_logits(net, occ))[2], abs=1e-15)
    assert max_drop == heat.max()


def net_logits(net, img):
    h = img.ravel()
    for layer in net.layers:
        h = np.asarray(layer.weights) @ h + layer.bias if isinstance(layer, Affine) else np.maximum(h, 0)
    return h


def test_occlusion_noop_cases(rng):
    net = random_network(rng, [25, 4, 2])
    const = np.full((5, 5, 1), 0.5)
    heat, _ = occlusion_sensitivity(net, const, 0, patch_size=2, stride=1)
    assert heat.shape == (4, 4) and np.all(heat == 0)
    blind = Network(25, (Affine(np.zeros((2, 25)), [1.0, 0.0]), ReLU()))
    heat, _ = occlusion_sensitivity(blind, rng.random((5, 5, 1)), 1, patch_size=3, stride=2)
    assert heat.shape == (2, 2) and np.all(heat == 0)


def test_occlusion_bad_parameters(rng):
    net = random_network(rng, [4, 2])
    with pytest.raises(BadParameters):
        occlusion_sensitivity(net, np.zeros((2, 2, 1)), 0, patch_size=3)
    with pytest.raises(BadParameters):
        occlusion_sensitivity(net, np.zeros((2, 2, 1)), 0, patch_size=1, stride=0)


def test_heatmap_pgm():
    data = heatmap_pgm(np.array([[0.0, 1.0], [0.5, 0.25]]))
    header, pixels = data[:11], data[11:]
    assert header == b"P5\n2 2\n255\n"
    assert list(pixels) == [0, 255, 128, 64]
