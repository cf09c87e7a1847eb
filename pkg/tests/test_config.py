import pytest

from attncloud import config as C
from attncloud import models as Mo
from attncloud.errors import ConfigError


def test_defaults_resolve_per_task():
    recon = C.RunConfig({})
    assert recon["epochs"] == 200 and recon["batch_size"] == 32 and recon["lr"] == 1e-4
    comp = C.RunConfig({"task": "complete"})
    assert comp["epochs"] == 100 and comp["batch_size"] == 16 and comp["lr"] == 1e-3


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="not_a_key"):
        C.RunConfig({"not_a_key": "1"})


def test_bad_value_names_key():
    with pytest.raises(ConfigError, match="epochs"):
        C.RunConfig({"epochs": "zero"})
    with pytest.raises(ConfigError, match="decoder"):
        C.RunConfig({"decoder": "mlp"})
    with pytest.raises(ConfigError, match="families"):
        C.RunConfig({"families": "spaceship"})


def test_parse_text_and_overrides(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\ntask = reconstruct\nbranches = 4\nout_points = 64\n")
    rc = C.load_config(p, overrides=["branches=8", "threads=2"])
    assert rc["branches"] == 8 and rc["out_points"] == 64 and rc["threads"] == 2


def test_parse_rejects_bad_lines():
    with pytest.raises(ConfigError, match="line 1"):
        C.parse_config_text("just words\n")
    with pytest.raises(ConfigError, match="duplicate"):
        C.parse_config_text("epochs = 1\nepochs = 2\n")


def test_text_roundtrip_is_stable():
    rc = C.RunConfig({"task": "complete", "branches": "4"})
    rc2 = C.RunConfig(C.parse_config_text(rc.text()))
    assert rc2.raw == rc.raw
    assert rc2.text() == rc.text()


def test_model_builders():
    rc = C.RunConfig({"task": "reconstruct", "decoder": "fc", "out_points": "16"})
    model = C.build_model(rc)
    assert isinstance(model, Mo.Autoencoder)
    rc2 = C.RunConfig({"task": "complete", "branches": "2", "coarse_points": "4",
                       "completion_latent_dim": "16", "branch_dim": "8",
                       "interim_dim": "3", "interim_count": "4", "attn_widths": "4",
                       "feature_hidden": "8", "encoder_hidden": "4"})
    net = C.build_model(rc2)
    assert isinstance(net, Mo.CompletionNet)
    assert net.config.final_points == 16


def test_checkpoint_roundtrip_rebuilds_model(tmp_path):
    from attncloud.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
    rc = C.RunConfig({"out_points": "8", "latent_dim": "6", "interim_dim": "3",
                      "interim_count": "4", "attn_widths": "4", "encoder_hidden": "4,8"})
    model = C.build_model(rc)
    ck = Checkpoint(params={k: p.data for k, p in model.parameters().items()}, config=rc.raw)
    save_checkpoint(tmp_path / "m.axck", ck)
    rebuilt, rc2 = C.model_from_checkpoint(load_checkpoint(tmp_path / "m.axck"))
    assert rc2.raw == rc.raw
    import numpy as np
    for (_, a), (_, b) in zip(model.parameters().items(), rebuilt.parameters().items()):
        assert np.array_equal(a.data, b.data)
