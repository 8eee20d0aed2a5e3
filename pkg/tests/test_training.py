import json
import math

import numpy as np
import pytest

from gantransfer.autodiff import Tensor, bce, no_grad
from gantransfer.data import synth_fixture_dataset
from gantransfer.errors import (
    EmptyBatch,
    EmptyDataset,
    InvalidHyperparameter,
    InvalidLabel,
    MissingGradient,
    NonFiniteLoss,
    ShapeMismatch,
    TooSmall,
)
from gantransfer.models import HEAD, build_backbone, build_discriminator, build_generator
from gantransfer.training import (
    ClassifierConfig,
    GanTrainConfig,
    Optimizer,
    adam,
    gan_train_step,
    minimax_value,
    optimizer_step,
    predict,
    sgd,
    train_classifier,
    train_gan,
)
from gantransfer.training.gan import generator_loss, sample_noise, value_from_probabilities

from _oracles import scalar_adam


def _p(value):
    return {"w": Tensor(np.array([value], dtype=np.float64), requires_grad=True)}


# -- optimizers ------------------------------------------------------------------------

def test_sgd_example():
    params = _p(1.0)
    params["w"].grad = np.array([0.5])
    optimizer_step(params, sgd(0.1))
    assert params["w"].data[0] == pytest.approx(0.95)
    assert params["w"].grad is None


def test_adam_zero_gradient_keeps_param():
    params = _p(3.0)
    opt = adam()
    params["w"].grad = np.zeros(1)
    opt.step(params)
    assert params["w"].data[0] == 3.0
    assert opt.t == 1


def test_adam_single_step_matches_scalar_oracle():
    params = _p(0.0)
    opt = Optimizer("adam", lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
    params["w"].grad = np.array([1.0])
    opt.step(params)
    assert params["w"].data[0] == pytest.approx(scalar_adam(0.0, [1.0], lr=0.1), abs=1e-12)
    assert params["w"].data[0] == pytest.approx(-0.1, rel=1e-6)


def test_adam_many_steps_match_scalar_oracle():
    rng = np.random.default_rng(0)
    grads = rng.normal(size=25)
    params = _p(0.7)
    opt = Optimizer("adam", lr=0.05, beta1=0.5, beta2=0.99)
    for g in grads:
        params["w"].grad = np.array([g])
        opt.step(params)
    assert opt.t == 25
    assert params["w"].data[0] == pytest.approx(scalar_adam(0.7, grads, 0.05, 0.5, 0.99), abs=1e-12)


def test_missing_gradient():
    with pytest.raises(MissingGradient):
        adam().step(_p(1.0))


def test_optimizer_validation():
    with pytest.raises(InvalidHyperparameter):
        Optimizer("rmsprop")
    with pytest.raises(InvalidHyperparameter):
        Optimizer("adam", lr=0)
    with pytest.raises(InvalidHyperparameter):
        Optimizer("adam", beta1=1.0)


def test_optimizer_state_round_trip():
    params = _p(1.0)
    opt = adam(0.01)
    for g in (0.3, -0.2):
        params["w"].grad = np.array([g])
        opt.step(params)
    clone = Optimizer.from_hyper(opt.hyper())
    clone.load_state_arrays(opt.state_arrays())
    assert clone.t == 2
    np.testing.assert_array_equal(clone.m["w"], opt.m["w"])
    np.testing.assert_array_equal(clone.v["w"], opt.v["w"])


# -- minimax objective ------------------------------------------------------------------

def _tiny_pair(seed=0, dtype=np.float32):
    G = build_generator(latent_dim=4, base_channels=4, out_size=8, seed=seed, dtype=dtype)
    D = build_discriminator(in_size=8, base_channels=4, seed=seed + 1, dtype=dtype)
    return G, D


def test_minimax_value_half_everywhere():
    G, D = _tiny_pair()
    last = [s.name for s in D.layers if s.kind == "conv"][-1]
    D.params[f"{last}.weight"].data[...] = 0.0  # sigmoid(0) = 0.5 for every input
    real = np.zeros((4, 1, 8, 8), np.float32)
    z = np.ones((4, 4), np.float32)
    assert minimax_value(D, G, real, z) == pytest.approx(2 * math.log(0.5), abs=1e-6)
    assert value_from_probabilities([0.5], [0.5]) == pytest.approx(-1.386294, abs=1e-6)


def test_minimax_value_at_discriminator_optimum():
    assert value_from_probabilities([1 - 1e-7] * 3, [1e-7] * 3) == pytest.approx(0.0, abs=1e-6)


def test_minimax_value_recombines_bce():
    G, D = _tiny_pair(3, np.float64)
    rng = np.random.default_rng(3)
    real = rng.uniform(-1, 1, (5, 1, 8, 8))
    z = rng.standard_normal((6, 4))
    v = minimax_value(D, G, real, z)
    with no_grad():
        p_real = D(real, train=False)
        p_fake = D(G(z, train=False), train=False)
    assert v == pytest.approx(-bce(p_real, 1.0).item() - bce(p_fake, 0.0).item(), abs=1e-10)
    direct = np.mean(np.log(p_real.data)) + np.mean(np.log(1 - p_fake.data))
    assert v == pytest.approx(direct, abs=1e-10)


def test_minimax_value_is_monotone():
    rng = np.random.default_rng(0)
    for _ in range(50):
        pr, pf = rng.uniform(0.05, 0.95, 8), rng.uniform(0.05, 0.95, 8)
        base = value_from_probabilities(pr, pf)
        i = rng.integers(8)
        up = pr.copy()
        up[i] += 0.01
        assert value_from_probabilities(up, pf) > base
        down = pf.copy()
        down[i] += 0.01
        assert value_from_probabilities(pr, down) < base


def test_minimax_empty_batch():
    G, D = _tiny_pair()
    with pytest.raises(EmptyBatch):
        minimax_value(D, G, np.zeros((0, 1, 8, 8), np.float32), np.ones((2, 4), np.float32))


# -- one adversarial step ----------------------------------------------------------------

def _d_loss(D, real, fake):
    probe = D.copy()
    with no_grad():
        return (bce(probe(real, train=True), 1.0) + bce(probe(fake, train=True), 0.0)).item()


def test_discriminator_step_does_not_increase_its_loss():
    cfg = GanTrainConfig(iterations=1, batch_size=8, latent_dim=4, lr_d=1e-3, lr_g=1e-3, base_channels=4)
    failures = 0
    for seed in range(20):
        G, D = _tiny_pair(seed)
        data = np.random.default_rng(seed).uniform(-1, 1, (8, 1, 8, 8)).astype(np.float32)
        rng = np.random.default_rng(100 + seed)
        # replay the step's first noise draw to recover the exact fake batch
        with no_grad():
            fake = G(sample_noise(np.random.default_rng(100 + seed), 8, 4), train=True)
        fake = fake.data
        before = _d_loss(D, data, fake)
        gan_train_step(G, D, data, cfg, adam(1e-3, 0.5), adam(1e-3, 0.5), rng)
        after = _d_loss(D, data, fake)
        failures += after > before
    assert failures <= 2


def test_minimax_and_non_saturating_push_the_same_way():
    G, D = _tiny_pair(4, np.float64)
    z = np.random.default_rng(4).standard_normal((8, 4))
    grads = {}
    for variant in ("non_saturating", "minimax"):
        G.zero_grad()
        generator_loss(D(G(z, train=True), train=False), variant).backward()
        grads[variant] = np.concatenate([p.grad.ravel() for p in G.params.values()])
    assert float(grads["non_saturating"] @ grads["minimax"]) > 0


def test_generator_loss_values():
    p = Tensor([0.25, 0.25], dtype=np.float64)
    assert generator_loss(p, "non_saturating").item() == pytest.approx(-math.log(0.25))
    assert generator_loss(p, "minimax").item() == pytest.approx(math.log(0.75))
    with pytest.raises(InvalidHyperparameter):
        generator_loss(p, "wasserstein")


class _Spy(Optimizer):
    """Adam that records, at each step, which of ``watch``'s params carry gradients."""

    def __init__(self, watch, **kw):
        super().__init__("adam", **kw)
        self.watch = watch
        self.seen = []

    def step(self, params):
        self.seen.append([k for k, p in self.watch.params.items() if p.grad is not None])
        super().step(params)


def test_gradient_isolation():
    G, D = _tiny_pair(5)
    opt_d = _Spy(G, lr=2e-4, beta1=0.5)
    opt_g = _Spy(D, lr=2e-4, beta1=0.5)
    G_before = G.checksum(include_buffers=False)
    cfg = GanTrainConfig(iterations=1, batch_size=4, latent_dim=4, d_steps=2, base_channels=4)
    data = np.zeros((4, 1, 8, 8), np.float32)
    gan_train_step(G, D, data, cfg, opt_g, opt_d, np.random.default_rng(0))
    assert opt_d.seen == [[], []]  # D steps never touched G's gradients
    assert opt_g.seen == [[]]  # and the G step carried no D gradients
    assert G.checksum(include_buffers=False) != G_before


def test_generator_step_leaves_discriminator_parameters():
    G, D = _tiny_pair(6)
    cfg = GanTrainConfig(iterations=1, batch_size=4, latent_dim=4, base_channels=4)
    data = np.zeros((4, 1, 8, 8), np.float32)
    opt_d = adam(2e-4, 0.5)
    snapshots = []

    class Recorder(Optimizer):
        def step(self, params):
            snapshots.append(D.checksum(include_buffers=False))
            super().step(params)

    gan_train_step(G, D, data, cfg, Recorder("adam", 2e-4, 0.5), opt_d, np.random.default_rng(0))
    # D parameters at the start of the G step equal the final ones
    assert snapshots == [D.checksum(include_buffers=False)]


def test_step_shape_mismatch():
    G, D = _tiny_pair()
    cfg = GanTrainConfig(batch_size=2, latent_dim=4, base_channels=4)
    with pytest.raises(ShapeMismatch):
        gan_train_step(G, D, np.zeros((2, 1, 16, 16), np.float32), cfg, adam(), adam(), np.random.default_rng(0))


def test_nonfinite_loss_aborts():
    G, D = _tiny_pair()
    D.params["d1.weight"].data[...] = np.nan
    cfg = GanTrainConfig(batch_size=2, latent_dim=4, base_channels=4)
    with pytest.raises(NonFiniteLoss) as info:
        gan_train_step(G, D, np.zeros((2, 1, 8, 8), np.float32), cfg, adam(), adam(), np.random.default_rng(0))
    assert info.value.diagnostics


# -- full GAN runs ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def blobs():
    return synth_fixture_dataset("blobs", 64, 8, 0.05, seed=0).of_class(0)


def _cfg(**kw):
    base = dict(iterations=5, batch_size=16, latent_dim=8, base_channels=4, seed=0)
    base.update(kw)
    return GanTrainConfig(**base)


def test_zero_iterations_returns_models_unchanged(blobs):
    G0 = build_generator(8, 4, 8, seed=1)
    D0 = build_discriminator(8, 4, seed=2)
    gs, ds = G0.checksum(), D0.checksum()
    G, D, report = train_gan(blobs, _cfg(iterations=0), G0, D0)
    assert (G.checksum(), D.checksum()) == (gs, ds)
    assert len(report) == 0
    assert not G.meta["trained"]


def test_train_gan_is_deterministic(blobs, tmp_path):
    a = train_gan(blobs, _cfg(log_path=str(tmp_path / "a.jsonl")))
    b = train_gan(blobs, _cfg())
    assert a[2].checksum == b[2].checksum
    assert a[2].g_loss == b[2].g_loss
    assert a[0].meta["trained"]
    rows = [json.loads(line) for line in (tmp_path / "a.jsonl").read_text().splitlines()]
    assert len(rows) == 5 and rows[0]["iteration"] == 1
    assert set(rows[0]) == {"iteration", "g_loss", "d_loss", "d_real", "d_fake"}


def test_report_series_lengths(blobs):
    _, _, report = train_gan(blobs, _cfg(iterations=7))
    assert len(report.g_loss) == len(report.d_loss) == len(report.d_real) == len(report.d_fake) == 7


def test_different_seeds_differ(blobs):
    assert train_gan(blobs, _cfg(seed=1))[2].checksum != train_gan(blobs, _cfg(seed=2))[2].checksum


def test_too_few_images(blobs):
    with pytest.raises(TooSmall):
        train_gan(blobs.subset(range(3)), _cfg())


def test_config_validation():
    with pytest.raises(InvalidHyperparameter):
        GanTrainConfig(batch_size=0)
    with pytest.raises(InvalidHyperparameter):
        GanTrainConfig(g_loss="hinge")
    with pytest.raises(InvalidHyperparameter):
        GanTrainConfig(iterations=-1)


def test_discriminator_separates_real_from_frozen_generator(blobs):
    """With G fixed, training D alone drives D(real) above D(fake)."""
    G = build_generator(8, 4, 8, seed=3)
    D = build_discriminator(8, 4, seed=4)
    real = blobs.model_input()[:32]
    rng = np.random.default_rng(0)
    opt = adam(1e-3, 0.5)
    for _ in range(60):
        with no_grad():
            fake = G(sample_noise(rng, 32, 8), train=False)
        D.zero_grad()
        (bce(D(real, train=True), 1.0) + bce(D(fake, train=True), 0.0)).backward()
        opt.step(D.trainable())
    with no_grad():
        pr = D(real, train=False).data.mean()
        pf = D(G(sample_noise(rng, 32, 8), train=False), train=False).data.mean()
    assert pr > pf


# -- classifier -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def bars16():
    return synth_fixture_dataset("bars", 20, 16, 0.15, seed=0)


def test_classifier_memorises_eight_images():
    ds = synth_fixture_dataset("bars", 4, 16, 0.3, seed=5)
    model = build_backbone("resnet18_mini", 16, seed=0)
    _, report = train_classifier(model, ds, ClassifierConfig("resnet18_mini", epochs=200, batch_size=8, seed=0))
    assert min(report.loss) < 0.05


def test_zero_epochs_leaves_model(bars16):
    model = build_backbone("alexnet_mini", 16, seed=0)
    before = model.checksum()
    _, report = train_classifier(model, bars16, ClassifierConfig("alexnet_mini", epochs=0))
    assert model.checksum() == before and len(report) == 0


def test_frozen_training_keeps_backbone(bars16):
    model = build_backbone("resnet18_mini", 16, seed=0)
    backbone = {k: v.copy() for k, v in model.state_arrays().items() if HEAD not in k}
    head = model.params[HEAD + ".weight"].data.copy()
    train_classifier(model, bars16, ClassifierConfig("resnet18_mini", epochs=2, batch_size=8, freeze=True))
    after = model.state_arrays()
    assert all(np.array_equal(after[k], v) for k, v in backbone.items())
    assert not np.array_equal(model.params[HEAD + ".weight"].data, head)


def test_classifier_is_deterministic(bars16):
    cfg = ClassifierConfig("squeezenet_mini", epochs=2, batch_size=8, seed=3)
    a = train_classifier(build_backbone("squeezenet_mini", 16, seed=1), bars16, cfg)[1]
    b = train_classifier(build_backbone("squeezenet_mini", 16, seed=1), bars16, cfg)[1]
    assert a.checksum == b.checksum and a.loss == b.loss


def test_classifier_errors(bars16):
    model = build_backbone("alexnet_mini", 16)
    cfg = ClassifierConfig("alexnet_mini", epochs=1)
    with pytest.raises(EmptyDataset):
        train_classifier(model, bars16.subset([]), cfg)
    with pytest.raises(InvalidLabel):
        train_classifier(model, (np.zeros((2, 1, 16, 16)), np.array([0, 2])), cfg)
    model.params["c1.weight"].data[...] = np.nan
    with pytest.raises(NonFiniteLoss):
        train_classifier(model, bars16, cfg)


def test_predict_shapes(bars16):
    model = build_backbone("googlenet_mini", 16)
    pred = predict(model, bars16, batch_size=7)
    assert pred.shape == (len(bars16),) and set(pred) <= {0, 1}
    assert predict(model, bars16.subset([])).shape == (0,)
