import json

import pytest

from flowdelta.cli import (EXIT_DATA, EXIT_OK, EXIT_USAGE, load_config, main)
from flowdelta.tensor import UsageError


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestConfigFile:
    def test_parse(self, tmp_path):
        p = tmp_path / "cfg"
        p.write_text("model = transformer\nlearning_rate = 0.25\nepochs = 3\n"
                     "# comment\nvariant = hadamard\n")
        cfg = load_config(p)
        assert cfg.model == "transformer"
        assert cfg.learning_rate == 0.25
        assert cfg.epochs == 3
        assert cfg.variant == "hadamard"

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "cfg"
        p.write_text("bogus = 1\n")
        with pytest.raises(UsageError, match="bogus"):
            load_config(p)


class TestGenQa:
    def test_deterministic_files(self, tmp_path, capsys):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        assert run(capsys, "gen-qa", "--count", "5", "--seed", "3", "--out", str(a))[0] == EXIT_OK
        assert run(capsys, "gen-qa", "--count", "5", "--seed", "3", "--out", str(b))[0] == EXIT_OK
        assert a.read_bytes() == b.read_bytes()


class TestSconeCommands:
    def test_gen_and_eval_round_trip(self, tmp_path, capsys):
        data = tmp_path / "eps.jsonl"
        code, out, _ = run(capsys, "scone-gen", "--domain", "alchemy", "--count", "4",
                           "--k", "3", "--seed", "5", "--out", str(data))
        assert code == EXIT_OK
        preds = tmp_path / "preds.jsonl"
        with open(data) as f, open(preds, "w") as g:
            for line in f:
                g.write(json.dumps(json.loads(line)["actions"]) + "\n")
        code, out, _ = run(capsys, "scone-eval", "--data", str(data),
                           "--predictions", str(preds))
        assert code == EXIT_OK
        assert "dialogue_accuracy = 1.000000" in out


class TestTrainEval:
    @pytest.fixture(scope="class")
    @staticmethod
    def artifacts(tmp_path_factory):
        tmp = tmp_path_factory.mktemp("cli")
        data = tmp / "data.jsonl"
        cfgf = tmp / "cfg"
        cfgf.write_text("embed_width = 8\nenc_hidden = 6\nflow_hidden = 4\n"
                        "epochs = 1\nlearning_rate = 0.05\n")
        assert main(["gen-qa", "--count", "8", "--seed", "1", "--out", str(data)]) == EXIT_OK
        ckpt = tmp / "model.json"
        assert main(["train", "--config", str(cfgf), "--data", str(data),
                     "--out", str(ckpt), "--seed", "2"]) == EXIT_OK
        return tmp, data, ckpt

    def test_eval_byte_identical(self, artifacts, capsys):
        tmp, data, ckpt = artifacts
        _, out1, _ = run(capsys, "eval", "--checkpoint", str(ckpt), "--data", str(data))
        _, out2, _ = run(capsys, "eval", "--checkpoint", str(ckpt), "--data", str(data))
        assert out1 == out2
        assert "mean_token_f1" in out1

    def test_inspect(self, artifacts, capsys):
        tmp, data, ckpt = artifacts
        code, out, _ = run(capsys, "inspect", "--checkpoint", str(ckpt))
        assert code == EXIT_OK
        assert "total_parameters" in out
        assert "config.variant = delta" in out

    def test_variant_none_trains(self, artifacts, capsys):
        tmp, data, ckpt = artifacts
        out2 = tmp / "none.json"
        cfgf = tmp / "cfg"
        code, _, _ = run(capsys, "train", "--config", str(cfgf), "--data", str(data),
                         "--out", str(out2), "--variant", "none", "--seed", "2")
        assert code == EXIT_OK
        code, out, _ = run(capsys, "inspect", "--checkpoint", str(out2))
        assert "config.variant = none" in out


class TestErrors:
    def test_unknown_subcommand(self, capsys):
        assert run(capsys, "frobnicate")[0] == EXIT_USAGE

    def test_unknown_flag(self, capsys):
        assert run(capsys, "gradcheck", "--bogus")[0] == EXIT_USAGE

    def test_missing_data_file(self, tmp_path, capsys):
        code, _, err = run(capsys, "train", "--data", str(tmp_path / "nope.jsonl"),
                           "--out", str(tmp_path / "o"))
        assert code == EXIT_DATA
        assert "error" in err

    def test_bad_records_report_data_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"context": "a b", "qas": [{"question": "q", '
                       '"answer_start": 1, "answer_end": 0}]}\n')
        code, _, err = run(capsys, "train", "--data", str(bad),
                           "--out", str(tmp_path / "o"))
        assert code == EXIT_DATA
