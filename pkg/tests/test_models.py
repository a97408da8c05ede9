import numpy as np
import pytest
import torch
from scipy.stats import binomtest

from mmssl.errors import ShapeMismatch
from mmssl.models import (
    Decoder,
    Encoder,
    EncoderConfig,
    ProjectionHead,
    decode,
    encode,
    flatten_locations,
    init_weights,
    project_local,
    state_checksum,
)


@pytest.fixture(scope="module")
def encoder():
    torch.manual_seed(0)
    return init_weights(Encoder()).eval()


def test_shape_ladder(encoder):
    sizes = []
    x = torch.randn(2, 1, 64, 64, 64)
    with torch.no_grad():
        h = x
        for block in encoder.blocks:
            h = block(h)
            sizes.append(tuple(h.shape[1:]))
        z, c = encoder(x)
    assert sizes == [(32, 32, 32, 32), (64, 16, 16, 16), (128, 8, 8, 8), (256, 4, 4, 4)]
    assert tuple(z.shape) == (2, 64)
    assert tuple(c.shape) == (2, 128, 8, 8, 8)
    assert tuple(encoder.head(h).shape) == (2, 64, 1, 1, 1)


def test_rejects_bad_input(encoder):
    with pytest.raises(ShapeMismatch):
        encoder(torch.zeros(1, 1, 32, 32, 32))
    with pytest.raises(ShapeMismatch):
        encoder(torch.zeros(1, 2, 64, 64, 64))
    with pytest.raises(ShapeMismatch):
        Decoder()(torch.zeros(1, 32))
    with pytest.raises(ShapeMismatch):
        ProjectionHead()(torch.zeros(1, 64, 8, 8, 8))


def _zero_all(model):
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
    return model


def test_zero_weights_give_zero_latent():
    enc = _zero_all(Encoder()).eval()
    z, _ = encode(enc, torch.zeros(1, 1, 64, 64, 64))
    assert torch.count_nonzero(z) == 0
    dec = _zero_all(Decoder()).eval()
    assert torch.count_nonzero(decode(dec, torch.zeros(2, 64))) == 0


def test_eval_determinism(encoder):
    x = torch.randn(1, 1, 64, 64, 64)
    with torch.no_grad():
        a, ca = encoder(x)
        b, cb = encoder(x)
    assert torch.equal(a, b) and torch.equal(ca, cb)


def test_decode_shape_and_round_trip_loop(encoder):
    dec = init_weights(Decoder()).eval()
    x = torch.randn(1, 1, 64, 64, 64)
    with torch.no_grad():
        for _ in range(3):
            z, _ = encoder(x)
            x = dec(z)
            assert tuple(x.shape) == (1, 1, 64, 64, 64)


class TestProjectionHead:
    def test_init_diagonal_and_range(self):
        head = init_weights(ProjectionHead())
        for conv in (head.shortcut, head.conv1, head.conv2):
            w = conv.weight[:, :, 0, 0, 0]
            k = min(w.shape)
            diag = w[torch.arange(k), torch.arange(k)]
            assert torch.all(diag == 1.0)
            off = w.clone()
            off[torch.arange(k), torch.arange(k)] = 0
            assert off.abs().max() <= 0.01

    def test_identity_path_only(self):
        head = init_weights(ProjectionHead()).eval()
        with torch.no_grad():
            head.conv2.weight.zero_()
            w = torch.zeros_like(head.shortcut.weight)
            w[torch.arange(64), torch.arange(64)] = 1.0
            head.shortcut.weight.copy_(w)
        c = torch.randn(2, 128, 8, 8, 8)
        out = project_local(head, c)
        assert tuple(out.shape) == (2, 64, 8, 8, 8)
        torch.testing.assert_close(out, c[:, :64])

    def test_no_spatial_mixing(self):
        head = init_weights(ProjectionHead()).eval()
        c = torch.randn(1, 128, 8, 8, 8)
        bumped = c.clone()
        bumped[0, :, 3, 4, 5] += 1.0
        with torch.no_grad():
            diff = (head(bumped) - head(c)).abs().sum(1)[0]
        assert diff[3, 4, 5] > 0
        diff[3, 4, 5] = 0
        assert torch.count_nonzero(diff) == 0

    def test_flatten_locations(self):
        c = torch.arange(2 * 64 * 512, dtype=torch.float32).reshape(2, 64, 8, 8, 8)
        flat = flatten_locations(c)
        assert tuple(flat.shape) == (2, 512, 64)
        assert torch.equal(flat[1, 8 * 8 * 2 + 8 * 3 + 4], c[1, :, 2, 3, 4])


def test_xavier_variance():
    torch.manual_seed(1)
    enc = init_weights(Encoder())
    for conv in [b[0] for b in enc.blocks[1:]] + [enc.head]:
        w = conv.weight
        rf = w[0, 0].numel()
        expected = 2.0 / (w.shape[1] * rf + w.shape[0] * rf)
        assert abs(w.var().item() - expected) / expected < 0.2


def test_dropout_half_channels_in_training():
    drop = Encoder(EncoderConfig(dropout3d_p=0.5)).dropout
    drop.train()
    torch.manual_seed(0)
    x = torch.ones(1000, 1, 2, 2, 2)
    zeroed = int((drop(x).flatten(1).sum(1) == 0).sum())
    assert binomtest(zeroed, 1000, 0.5).pvalue > 0.01
    drop.eval()
    assert torch.equal(drop(x), x)


def test_dropout_inactive_by_default():
    assert isinstance(Encoder().dropout, torch.nn.Identity)


def test_every_parameter_receives_gradient():
    torch.manual_seed(2)
    enc, dec, head = init_weights(Encoder()), init_weights(Decoder()), init_weights(ProjectionHead())
    x = torch.randn(2, 1, 64, 64, 64)
    z, c = enc(x)
    loss = ((dec(z) - x) ** 2).mean() + project_local(head, c).pow(2).mean()
    loss.backward()
    for name, p in [*enc.named_parameters(), *dec.named_parameters(), *head.named_parameters()]:
        assert p.grad is not None and torch.count_nonzero(p.grad) > 0, name


def test_checksum_tracks_weights():
    a = init_weights(Encoder(), torch.Generator().manual_seed(0))
    b = init_weights(Encoder(), torch.Generator().manual_seed(0))
    assert state_checksum(a) == state_checksum(b)
    with torch.no_grad():
        b.head.bias[0] += 1e-6
    assert state_checksum(a) != state_checksum(b)


def test_config_round_trip():
    cfg = EncoderConfig(dropout3d_p=0.5)
    assert EncoderConfig.from_dict(cfg.to_dict()) == cfg
    assert np.isclose(cfg.to_dict()["dropout3d_p"], 0.5)
