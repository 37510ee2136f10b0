import numpy as np
import pytest
import torch
import torch.nn.functional as F

from unitvc.bins import BinGrid, gaussian_bin_weights
from unitvc.config import SystemConfig
from unitvc.networks import (
    AttributeVector,
    Discriminator,
    ResidualStack,
    VoiceConversionModel,
    decode_durations,
    length_regulate,
    lengths_to_mask,
    nearest_interpolate,
)
from unitvc.training import lsgan_gen_loss

torch.set_num_threads(1)


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    return VoiceConversionModel(SystemConfig.toy()).double().eval()


def attr(model, kind, seed, batch=1):
    g = torch.Generator().manual_seed(seed)
    return AttributeVector(torch.randn(batch, model.cfg.model.d_a, generator=g, dtype=torch.float64), kind)


def prosody_inputs(n=50, seed=0):
    g = torch.Generator().manual_seed(seed)
    grid = SystemConfig().grid
    pitch = torch.randn(1, n, generator=g, dtype=torch.float64) * 30
    energy = torch.rand(1, n, generator=g, dtype=torch.float64) * 50
    voicing = (torch.rand(1, n, generator=g) > 0.3).long()
    return (gaussian_bin_weights(pitch, BinGrid.pitch(grid)), voicing,
            gaussian_bin_weights(energy, BinGrid.energy(grid), clamp=True))


def units_for(n=50, k=4):
    units = torch.tensor([[3, 1, 7, 2][:k]])
    base = n // k
    durations = torch.full((1, k), base)
    durations[0, -1] += n - base * k
    return units, durations


# -- configuration -------------------------------------------------------------

def test_default_block_counts():
    m = SystemConfig().model
    assert (m.filter_blocks, m.source_blocks, m.energy_blocks,
            m.duration_blocks, m.pitch_energy_blocks) == (16, 16, 4, 2, 6)


def test_model_stacks_have_configured_depth(model):
    assert len(model.filter.stack) == 16
    assert len(model.source.stack) == 16
    assert len(model.energy.stack) == 4
    assert len(model.duration_net.stack) == 2
    assert len(model.pitch_energy_net.stack) == 6


# -- building blocks -----------------------------------------------------------

def test_length_regulate_matches_repeat():
    x = torch.randn(2, 3, 4)
    durations = torch.tensor([[2, 3, 1], [1, 1, 2]])
    out, lengths = length_regulate(x, durations)
    assert lengths.tolist() == [6, 4]
    for b in range(2):
        expected = torch.repeat_interleave(x[b], durations[b], dim=0)
        assert torch.equal(out[b, :lengths[b]], expected)
        assert (out[b, lengths[b]:] == 0).all()


@pytest.mark.parametrize("t_in,t_out", [(6, 10), (10, 6), (7, 7), (1, 5)])
def test_nearest_interpolate_matches_torch(t_in, t_out):
    x = torch.randn(1, t_in, 3)
    ours = nearest_interpolate(x, torch.tensor([t_in]), torch.tensor([t_out]))
    ref = F.interpolate(x.transpose(1, 2), size=t_out, mode="nearest").transpose(1, 2)
    assert torch.equal(ours, ref)


def test_stack_shapes_and_interpolation():
    torch.manual_seed(0)
    stack = ResidualStack(5, 16, 7, 4, interp_after=2).double()
    x = torch.randn(1, 6, 5, dtype=torch.float64)
    n = torch.tensor([6])
    assert stack(x, n, torch.tensor([10])).shape == (1, 10, 7)
    # identity interpolation when the target equals the input length
    assert torch.equal(stack(x, n, n), stack(x, n))
    with pytest.raises(ValueError):
        ResidualStack(5, 16, 7, 4, interp_after=4)


def test_stack_padding_does_not_leak():
    torch.manual_seed(0)
    stack = ResidualStack(5, 16, 7, 3).double()
    x = torch.randn(1, 6, 5, dtype=torch.float64)
    padded = torch.cat([x, 100 * torch.randn(1, 4, 5, dtype=torch.float64)], dim=1)
    a = stack(x, torch.tensor([6]))
    b = stack(padded, torch.tensor([6]))
    torch.testing.assert_close(a, b[:, :6], rtol=0, atol=1e-12)
    assert (b[:, 6:] == 0).all()


def test_lengths_to_mask():
    assert lengths_to_mask(torch.tensor([1, 3]), 3).tolist() == [[True, False, False], [True, True, True]]


# -- encoders ------------------------------------------------------------------

def test_encoder_length_independent_shape(model):
    for seconds in (1, 3):
        wave = torch.randn(1, 16000 * seconds, dtype=torch.float64) * 0.1
        a = model.encode_attribute(wave, kind="s")
        assert a.values.shape == (1, model.cfg.model.d_a) and a.kind == "s"


def test_encoder_deterministic(model):
    wave = torch.randn(1, 8000, dtype=torch.float64) * 0.1
    assert torch.equal(model.encode_attribute(wave, kind="p").values,
                       model.encode_attribute(wave, kind="p").values)


def test_encoder_pool_permutation_invariant(model):
    enc = model.encoders["r"]
    wave = torch.randn(1, 8000, dtype=torch.float64) * 0.1
    h, mask = enc.backbone(wave)
    perm = torch.randperm(h.shape[1])
    torch.testing.assert_close(enc.pool(h[:, perm], mask[:, perm]), enc.pool(h, mask),
                               rtol=0, atol=1e-12)


def test_encoder_too_short(model):
    with pytest.raises(ValueError, match="shorter than one backbone frame"):
        model.encode_attribute(torch.zeros(1, 100, dtype=torch.float64), kind="s")


def test_encoder_feature_seam(model):
    feats = torch.randn(2, 30, model.cfg.model.encoder_channels, dtype=torch.float64)
    out = model.encode_attribute(None, kind="p", features=feats)
    assert out.values.shape == (2, model.cfg.model.d_a)


def test_encoders_have_disjoint_parameters(model):
    ids = [{id(p) for p in model.encoders[k].parameters()} for k in "prs"]
    assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])


def test_padded_batch_matches_single(model):
    wave = torch.randn(1, 9000, dtype=torch.float64) * 0.1
    padded = torch.cat([wave, torch.randn(1, 3000, dtype=torch.float64)], dim=1)
    a = model.encode_attribute(wave, torch.tensor([9000]), "s").values
    b = model.encode_attribute(padded, torch.tensor([9000]), "s").values
    torch.testing.assert_close(a, b, rtol=0, atol=1e-10)


# -- prosody -------------------------------------------------------------------

def test_duration_shape_and_kind(model):
    units = torch.tensor([[1, 2, 3, 4, 5, 6, 7]])
    out = model.predict_duration(units, torch.tensor([7]), attr(model, "r", 0))
    assert out.shape == (1, 7)
    with pytest.raises(ValueError, match="kind"):
        model.predict_duration(units, torch.tensor([7]), attr(model, "p", 0))


def test_decode_durations_rule():
    x = torch.log(torch.tensor([2.0, 3.4, 1.2, 1e6]))
    # exp(x) - 1 = 1, 2.4, 0.2, ~1e6 -> 1, 2, clamp to 1, clamp to 100
    assert decode_durations(x).tolist() == [1, 2, 1, 100]


def test_pitch_energy_shapes(model):
    units, durations = units_for(50)
    p, v, e, lengths = model.predict_pitch_energy(units, durations, attr(model, "p", 0))
    g = model.cfg.grid
    assert p.shape == (1, 50, g.pitch_count) and v.shape == (1, 50)
    assert e.shape == (1, 50, g.energy_count) and lengths.tolist() == [50]
    probs = torch.sigmoid(p)
    assert ((probs > 0) & (probs < 1)).all()
    with pytest.raises(ValueError, match="kind"):
        model.predict_pitch_energy(units, durations, attr(model, "s", 0))


# -- synthesizer ---------------------------------------------------------------

def test_filter_shape(model):
    units = torch.tensor([[1, 2, 3]])
    durations = torch.tensor([[2, 3, 1]])
    out = model.filter_forward(units, durations, attr(model, "s", 0), torch.tensor([10]))
    assert out.shape == (1, 10, 80)
    with pytest.raises(ValueError):
        model.filter_forward(units, durations, attr(model, "s", 0), torch.tensor([0]))


def test_source_and_energy_shapes(model):
    pitch_bw, voicing, energy_bw = prosody_inputs(50)
    n = torch.tensor([50])
    assert model.source_forward(pitch_bw, voicing, attr(model, "s", 0), n).shape == (1, 50, 80)
    assert model.energy_forward(energy_bw, n).shape == (1, 50)
    with pytest.raises(ValueError):
        model.source_forward(pitch_bw, voicing[:, :49], attr(model, "s", 0), n)


def test_source_depends_on_speaker(model):
    pitch_bw, voicing, _ = prosody_inputs(50)
    n = torch.tensor([50])
    a = model.source_forward(pitch_bw, voicing, attr(model, "s", 0), n)
    b = model.source_forward(pitch_bw, voicing, attr(model, "s", 1), n)
    assert (a - b).abs().max() > 0


def test_synthesize_shape_and_additivity(model):
    pitch_bw, voicing, energy_bw = prosody_inputs(50)
    units, durations = units_for(50)
    mel, parts = model.synthesize(pitch_bw, voicing, energy_bw, units, durations,
                                  attr(model, "s", 0), torch.tensor([50]))
    assert mel.shape == (1, 50, 80)
    assert torch.equal(mel, parts["source"] + parts["filter"] + parts["energy"].unsqueeze(-1))
    assert torch.isfinite(mel).all()


def test_fresh_model_forward_is_finite(model):
    wave = torch.randn(1, 16000, dtype=torch.float64) * 0.3
    for k in "prs":
        assert torch.isfinite(model.encode_attribute(wave, kind=k).values).all()
    units, durations = units_for(50)
    out = model.predict_pitch_energy(units, durations, attr(model, "p", 3))
    assert all(torch.isfinite(t).all() for t in out[:3])


# -- discriminator -------------------------------------------------------------

def test_discriminator_shape_and_determinism():
    torch.manual_seed(0)
    d = Discriminator(8, 5).eval()
    mel = torch.randn(2, 50, 80)
    s = d(mel)
    assert s.shape[0] == 2 and s.shape[1] == 50 and s.numel() > 0
    assert torch.equal(s, d(mel))
    with pytest.raises(ValueError, match="too short"):
        d(torch.randn(1, 2, 80))


def test_adversarial_gradient_reaches_fake_input():
    torch.manual_seed(0)
    d = Discriminator(4, 3).double()
    fake = torch.randn(1, 6, 16, dtype=torch.float64, requires_grad=True)
    lengths = torch.tensor([6])
    lsgan_gen_loss(d, fake, lengths).backward()
    analytic = fake.grad[0, 2, 5].item()
    eps = 1e-6
    with torch.no_grad():
        up, down = fake.clone(), fake.clone()
        up[0, 2, 5] += eps
        down[0, 2, 5] -= eps
        fd = (lsgan_gen_loss(d, up, lengths) - lsgan_gen_loss(d, down, lengths)).item() / (2 * eps)
    assert analytic != 0
    assert abs(fd - analytic) <= 1e-6 * max(1.0, abs(fd))


def test_unit_embedding_width(model):
    assert model.unit_embedding.weight.shape == (model.cfg.units.vocab_size, model.cfg.model.d_e)
    assert np.isclose(SystemConfig().model.d_e, 128)
