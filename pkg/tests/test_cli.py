import io

import numpy as np
import pytest

from ifagents import cli, lm, nn
from ifagents import corpus as C
from ifagents.cli import UsageError


def run_main(argv, inp=None):
    out = io.StringIO()
    code = cli.main(argv, out=out, inp=inp)
    return code, out.getvalue()


def test_parse_train_example():
    inv = cli.parse_args(["train", "--game", "g.toy", "--agent", "drrn", "--steps", "50000", "--seed", "7"])
    assert inv.subcommand == "train"
    assert inv.flags["max_steps"] == 50_000 and inv.flags["seed"] == 7 and inv.flags["game"] == "g.toy"


def test_unknown_flag_rejected(capsys):
    with pytest.raises(UsageError):
        cli.parse_args(["train", "--foo"])
    assert cli.main(["train", "--foo"]) == cli.EXIT_USAGE
    assert cli.main([]) == cli.EXIT_USAGE


def test_help_has_no_side_effects(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert cli.main(["train", "--help"]) == 0
    assert "--game" in capsys.readouterr().out
    assert list(tmp_path.iterdir()) == []


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# defaults\nlr = 0.5\nhidden = 16\n")
    inv = cli.parse_args(["train", "--config", str(cfg), "--lr", "0.001"])
    assert inv.flags["lr"] == 0.001 and inv.flags["hidden"] == 16
    assert inv.config_path == str(cfg)
    cfg.write_text("bogus = 1\n")
    with pytest.raises(UsageError):
        cli.parse_args(["train", "--config", str(cfg)])


def test_oracle_prints_return():
    code, text = run_main(["oracle", "--game", "tworoom.toy"])
    assert code == 0 and "optimal return: 5" in text


def test_pretrain_zero_epochs_is_seeded_init(tmp_path):
    corpus = tmp_path / "c.tsv"
    corpus.write_text("room a . exits east\tgo east\nroom b . a coin\ttake coin\n" * 20)
    code, _ = run_main(["pretrain", "--corpus", str(corpus), "--epochs", "0", "--seed", "3",
                        "--dim", "8", "--heads", "2", "--ff-dim", "8", "--out", str(tmp_path / "e.ckpt")])
    assert code == 0
    enc = lm.FrozenEncoder.load(tmp_path / "e.ckpt")
    cfg = lm.PretrainConfig(dim=8, heads=2, ff_dim=8)
    init = nn.init_params(nn.encoder_shapes(cfg.encoder_config(len(enc.vocab))), 3)
    assert all(np.array_equal(enc.params[k], init[k]) for k in init)


def test_bad_corpus_exit_code(tmp_path):
    bad = tmp_path / "bad.tsv"
    bad.write_text("no tab on this line\n")
    code, _ = run_main(["pretrain", "--corpus", str(bad), "--out", str(tmp_path / "e.ckpt")])
    assert code == cli.EXIT_INPUT


def test_missing_game_is_runtime_error():
    assert run_main(["oracle", "--game", "no_such_game"])[0] == cli.EXIT_RUNTIME


def test_train_eval_and_transfer(tmp_path):
    run_dir = tmp_path / "run"
    argv = ["train", "--game", "tworoom", "--steps", "60", "--env-count", "2", "--batch-size", "8",
            "--hidden", "8", "--embed-dim", "8", "--seed", "1", "--out", str(run_dir)]
    code, text = run_main(argv)
    assert code == 0 and "final score" in text
    for name in ("config.echo", "metrics.csv", "agent.ckpt", "transcripts/episode_0.txt"):
        assert (run_dir / "seed_1" / name).exists()
    ckpt = str(run_dir / "seed_1" / "agent.ckpt")
    code, text = run_main(["eval", "--agent", ckpt, "--game", "tworoom", "--episodes", "5"])
    assert code == 0 and "average score:" in text
    code, _ = run_main(["transfer", "--agent", ckpt, "--game", "cottage", "--episodes", "5"])
    assert code == 0
    first = (run_dir / "seed_1" / "metrics.csv").read_bytes()
    run_main(argv)
    assert (run_dir / "seed_1" / "metrics.csv").read_bytes() == first


def test_play_loop_and_no_checkpoint_mutation(tmp_path):
    code, text = run_main(["play", "--game", "tworoom"], inp=io.StringIO("valid\nfly away\ngo east\ntake coin\n"))
    assert code == 0
    assert "unknown command" in text
    assert "Episode finished. Score 5" in text


def test_gen_corpus(tmp_path):
    dest = tmp_path / "c.tsv"
    code, _ = run_main(["gen-corpus", "--out", str(dest), "--pairs", "40", "--games", "tworoom"])
    assert code == 0 and len(C.load_corpus(dest)) == 40
