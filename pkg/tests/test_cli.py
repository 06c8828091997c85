import json

import numpy as np
import pytest

import featadv as fa
from featadv import io_formats as F
from featadv.cli import main


@pytest.fixture()
def paths(tmp_path):
    net = tmp_path / "net.fadvnet"
    corp = tmp_path / "corpus.fcrp"
    assert main(["net", "init", "--seed", "7", "--scheme", "orthonormal",
                 "--head", "--out", str(net)]) == 0
    assert main(["corpus", "gen", "--seed", "0", "--classes", "4",
                 "--per-class", "6", "--out", str(corp)]) == 0
    return net, corp, tmp_path


def test_net_init_reproducible(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    for p in (a, b):
        assert main(["net", "init", "--seed", "3", "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_net_describe(paths, capsys):
    net, _, _ = paths
    assert main(["net", "describe", "--net", str(net)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["input_shape"] == [3, 32, 32]
    assert info["head"] == 10
    assert info["layers"][0]["name"] == "conv1"


def test_corpus_gen_reproducible(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    for p in (a, b):
        assert main(["corpus", "gen", "--seed", "5", "--classes", "2",
                     "--per-class", "3", "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_corpus_describe(paths, capsys):
    _, corp, _ = paths
    assert main(["corpus", "describe", "--corpus", str(corp)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["size"] == 24
    assert info["per_class"] == {"0": 6, "1": 6, "2": 6, "3": 6}


def test_adv_feature_opt(paths, capsys):
    net, corp, tmp = paths
    out = tmp / "adv.ftns"
    ppm = tmp / "adv.ppm"
    code = main(["adv", "feature-opt", "--net", str(net), "--corpus", str(corp),
                 "--source-id", "0", "--guide-id", "7", "--delta", "10",
                 "--iterations", "60", "--out", str(out), "--ppm", str(ppm)])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["final_ratio"] < 1.0
    adv_img = F.load_tensor(out)
    corpus = fa.load_corpus(corp)
    assert np.abs(adv_img - corpus.images[0]).max() <= 10.0 + 1e-9
    assert ppm.exists()


def test_adv_label_opt(paths, capsys):
    net, corp, tmp = paths
    out = tmp / "ladv.ftns"
    network = fa.load_network(net)
    corpus = fa.load_corpus(corp)
    label0, _ = fa.classify(network, corpus.images[1])
    target = (label0 + 1) % 10
    code = main(["adv", "label-opt", "--net", str(net), "--corpus", str(corp),
                 "--source-id", "1", "--target-label", str(target),
                 "--out", str(out)])
    assert code == 0
    assert fa.classify(network, F.load_tensor(out))[0] == target


def test_analyze_distances_and_ranks(paths, capsys):
    net, corp, tmp = paths
    out = tmp / "adv.ftns"
    main(["adv", "feature-opt", "--net", str(net), "--corpus", str(corp),
          "--source-id", "0", "--guide-id", "7", "--iterations", "60",
          "--out", str(out)])
    capsys.readouterr()
    assert main(["analyze", "distances", "--net", str(net), "--corpus", str(corp),
                 "--adv", str(out), "--source-id", "0", "--guide-id", "7"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert set(d) == {"r_guide", "r_guide_nn", "r_source"}
    assert main(["analyze", "ranks", "--net", str(net), "--corpus", str(corp),
                 "--adv", str(out), "--guide-id", "7"]) == 0
    r = json.loads(capsys.readouterr().out)
    assert 0.0 <= r["rank_alpha"] <= 100.0


def test_analyze_sparsity(paths, capsys):
    net, corp, tmp = paths
    out = tmp / "adv.ftns"
    main(["adv", "feat-fgrad", "--net", str(net), "--corpus", str(corp),
          "--source-id", "2", "--guide-id", "8", "--out", str(out)])
    capsys.readouterr()
    assert main(["analyze", "sparsity", "--net", str(net), "--corpus", str(corp),
                 "--adv", str(out), "--source-id", "2",
                 "--layers", "relu2,relu4"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert set(rep) == {"relu2", "relu4"}
    for v in rep.values():
        assert 0.0 <= v["iou"] <= 100.0


def test_invert_command(paths, tmp_path):
    net, corp, tmp = paths
    out = tmp / "inv.ftns"
    code = main(["invert", "--net", str(net), "--corpus", str(corp),
                 "--image-id", "0", "--layer", "fc2", "--iterations", "40",
                 "--out", str(out)])
    assert code == 0
    img = F.load_tensor(out)
    assert img.shape == (3, 32, 32)
    assert img.min() >= 0.0 and img.max() <= 255.0


def test_experiment_run_reproducible(paths):
    net, corp, tmp = paths
    args = ["experiment", "run", "--net", str(net), "--corpus", str(corp),
            "--pairs", "2", "--iterations", "25",
            "--analyses", "distances,ranks", "--seed", "4"]
    d1 = tmp / "run1"
    d2 = tmp / "run2"
    assert main(args + ["--out-dir", str(d1)]) == 0
    assert main(args + ["--out-dir", str(d2), "--workers", "3"]) == 0
    assert (d1 / "results.csv").read_bytes() == (d2 / "results.csv").read_bytes()


def test_exit_code_setup_error(tmp_path, capsys):
    missing = tmp_path / "nope.fadvnet"
    assert main(["net", "describe", "--net", str(missing)]) == 1
    assert "error" in capsys.readouterr().err


def test_exit_code_invalid_arguments(paths, capsys):
    net, corp, tmp = paths
    # delta outside the valid range is an argument problem
    code = main(["adv", "feature-opt", "--net", str(net), "--corpus", str(corp),
                 "--source-id", "0", "--guide-id", "7", "--delta", "999",
                 "--out", str(tmp / "x.ftns")])
    assert code == 2
    with pytest.raises(SystemExit) as err:
        main(["net", "frobnicate"])
    assert err.value.code == 2


def test_corrupt_file_is_setup_error(paths, capsys):
    net, corp, tmp = paths
    bad = tmp / "bad.fadvnet"
    data = bytearray(net.read_bytes())
    data[40] ^= 0xFF
    bad.write_bytes(bytes(data))
    assert main(["net", "describe", "--net", str(bad)]) == 1
