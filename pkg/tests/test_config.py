import pytest

from vcshift.config import RunConfig, config_from_text, load_config, parse_text, preset_config
from vcshift.errors import ConfigError

INVALID = [
    ("dsp.hop_length=128", "dsp.hop_length"),
    ("vocoder.upsample_strides=4,4,2", "dsp.hop_length"),
    ("dsp.win_length=1024", "dsp.win_length"),
    ("dsp.fmax=9000", "dsp.fmax"),
    ("pitch.f_ceiling=9000", "pitch.f_ceiling"),
    ("pitch.yin_threshold=1.5", "pitch.yin_threshold"),
    ("encoder.head_count=5", "encoder.hidden_size"),
    ("fusion.target_mode=telepathy", "fusion.target_mode"),
    ("training.batch_size=0", "training.batch_size"),
    ("training.w_recon=-1", "training.w_recon"),
    ("vocoder.upsample_kernel=2", "vocoder.upsample_kernel"),
    ("eval.probe_folds=1", "eval.probe_folds"),
    ("corpus.speakers=0", "corpus.speakers"),
    ("no_such.key=1", "no_such.key"),
    ("training.steps=many", "training.steps"),
]


@pytest.mark.parametrize("override,key", INVALID, ids=[k for _, k in INVALID])
def test_invalid_configs_name_their_key(override, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        load_config(overrides=[override])


def test_defaults_valid_and_presets():
    desk = load_config()
    assert desk == preset_config("desk").validate()
    paper = load_config(preset="paper")
    assert paper.dsp.sample_rate == 44100 and paper.dsp.mel_count == 80
    assert paper.encoder.hidden_size == 768
    with pytest.raises(ConfigError):
        preset_config("huge")


def test_precedence_preset_file_override(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# comment\n[training]\nsteps = 50\nbatch_size = 3  # trailing\n[dsp]\nmel_count = 32\n")
    cfg = load_config(f, ["training.steps=7"])
    assert cfg.training.steps == 7  # override beats file
    assert cfg.training.batch_size == 3  # file beats preset
    assert cfg.dsp.mel_count == 32
    assert cfg.encoder == RunConfig().encoder  # untouched sections keep preset values


def test_file_can_choose_preset(tmp_path):
    f = tmp_path / "p.cfg"
    f.write_text("preset = paper\n[training]\nsteps = 3\n")
    cfg = load_config(f)
    assert cfg.preset == "paper" and cfg.training.steps == 3


def test_text_round_trip():
    cfg = load_config(overrides=["vocoder.resblock_dilations=1,3;1,5", "corpus.accent_tags=US,UK,AU",
                                 "encoder.freeze_target_path=true"])
    again = config_from_text(cfg.to_text())
    assert again == cfg
    assert again.fingerprint() == cfg.fingerprint()


def test_fingerprint_tracks_model_sections_only():
    base = load_config()
    assert load_config(overrides=["training.steps=5"]).fingerprint() == base.fingerprint()
    assert load_config(overrides=["encoder.layer_count=3"]).fingerprint() != base.fingerprint()


def test_parse_errors(tmp_path):
    with pytest.raises(ConfigError, match=":2:"):
        parse_text("[dsp]\njust words\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")
    with pytest.raises(ConfigError):
        load_config(overrides=["nonsense"])
