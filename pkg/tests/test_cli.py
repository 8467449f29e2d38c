import json
import os

import pytest

from sparse3sd.cli import build_parser, config_from_args, main


def test_simulate_records_seed(tmp_path, data_path, capsys):
    out = tmp_path / "sim"
    assert main(["simulate", "--input", data_path("camera"), "--kind", "awgn", "--sigma", "20",
                 "--seed", "42", "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["noise"] == {"kind": "awgn", "sigma": 20.0, "looks": 1, "seed": 42}
    assert (out / "noisy.png").exists()


def test_flags_override_config_file(tmp_path):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"stride": 4, "atom_count": 128, "sigma": 5.0}))
    args = build_parser().parse_args(["denoise", "--input", "x.pgm", "--config", str(cfg_file),
                                      "--stride", "2", "--homomorphic", "--out", "o"])
    cfg = config_from_args(args)
    assert (cfg.stride, cfg.atom_count, cfg.sigma, cfg.homomorphic, cfg.out_dir) == (2, 128, 5.0, True, "o")


def test_denoise_with_reference_and_report(tmp_path, data_path, capsys):
    sim = tmp_path / "sim"
    main(["simulate", "--input", data_path("chelsea"), "--kind", "awgn", "--sigma", "25", "--out", str(sim)])
    run = tmp_path / "run"
    rc = main(["denoise", "--input", str(sim / "noisy.png"), "--reference", data_path("chelsea"),
               "--method", "3sd", "--sigma", "25", "--stride", "8", "--atoms", "128", "--iters", "2",
               "--format", "pgm", "--out", str(run)])
    assert rc == 0
    printed = capsys.readouterr().out
    assert "3sd" in printed and "ksvd" in printed
    assert os.path.exists(run / "denoised.pgm")
    assert main(["report", str(run / "manifest.json"), "--out", str(tmp_path / "rep")]) == 0
    assert (tmp_path / "rep" / "report.csv").exists()


def test_errors_exit_nonzero(tmp_path, data_path, capsys):
    rc = main(["denoise", "--input", data_path("camera"), "--out", str(tmp_path / "r"), "--stride", "8"])
    assert rc == 1
    assert "noise level unknown" in capsys.readouterr().err
    rc = main(["denoise", "--input", str(tmp_path / "missing.pgm"), "--sigma", "3", "--out", str(tmp_path)])
    assert rc == 1
    with pytest.raises(SystemExit):
        main(["denoise", "--input", data_path("camera"), "--sigma", "3"])
