import pytest
import torch

from btrfly.core.exceptions import FormatError
from btrfly.models.adversaries import EnergyDiscriminator, WassersteinDiscriminator
from btrfly.models.btrfly import BtrflyNet
from btrfly.models.localizer import SpineLocalizerNet
from btrfly.services.checkpoint import (
    NetworkKind,
    export_inference_bundle,
    file_sha256,
    load_checkpoint,
    load_model,
    save_checkpoint,
)


def test_labeller_round_trip(tmp_path, tiny_btrfly_config, tiny_ebd_config, tiny_train_config):
    model = BtrflyNet(tiny_btrfly_config).eval()
    discriminators = {"sagittal": EnergyDiscriminator(tiny_ebd_config), "coronal": EnergyDiscriminator(tiny_ebd_config)}
    path = save_checkpoint(tmp_path / "ckpt.pt", model, discriminators, iteration=7, train_config=tiny_train_config)

    loaded = load_checkpoint(path)
    assert loaded.kind is NetworkKind.LABELLER
    assert loaded.iteration == 7
    assert set(loaded.discriminators) == {"sagittal", "coronal"}
    assert loaded.model.config == tiny_btrfly_config
    x = torch.randn(1, 1, 16, 16)
    torch.testing.assert_close(model(x, x)[0], loaded.model(x, x)[0])


def test_bundle_strips_discriminators(tmp_path, tiny_btrfly_config, tiny_wd_config):
    model = BtrflyNet(tiny_btrfly_config)
    discriminators = {"sagittal": WassersteinDiscriminator(tiny_wd_config)}
    source = save_checkpoint(tmp_path / "ckpt.pt", model, discriminators, iteration=3)
    bundle = export_inference_bundle(source, tmp_path / "model.pt")
    loaded = load_checkpoint(bundle)
    assert loaded.discriminators == {}
    assert loaded.iteration == 3
    assert bundle.stat().st_size < source.stat().st_size
    assert len(file_sha256(bundle)) == 64


def test_kind_is_checked(tmp_path, tiny_localizer_config):
    path = save_checkpoint(tmp_path / "loc.pt", SpineLocalizerNet(tiny_localizer_config))
    assert isinstance(load_model(path, NetworkKind.LOCALIZER), SpineLocalizerNet)
    with pytest.raises(FormatError):
        load_model(path, NetworkKind.LABELLER)


def test_unreadable_archive(tmp_path):
    bad = tmp_path / "bad.pt"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(FormatError):
        load_checkpoint(bad)
    torch.save({"schema_version": 99}, tmp_path / "old.pt")
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "old.pt")
