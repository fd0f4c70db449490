import json

import numpy as np
import pytest

from pivotnet.adversary import HeadSpec, init_adversary
from pivotnet.checkpoint import load_net, save_net
from pivotnet.errors import DataError
from pivotnet.nets import init_params, with_params


def test_roundtrip_bit_exact(tmp_path):
    net = init_params((2, 20, 20, 1), ("tanh", "relu", "sigmoid"), seed=17)
    path = tmp_path / "clf.json"
    save_net(net, path)
    back, head = load_net(path)
    assert head is None
    assert back.layer_sizes == net.layer_sizes
    assert back.activations == net.activations
    # bit-exact, not approximately equal
    assert np.array_equal(back.params, net.params)


def test_roundtrip_awkward_floats(tmp_path):
    # values that decimal text would mangle survive the hex encoding
    awkward = np.array([1e-300, -1e300, np.pi, np.nextafter(1.0, 2.0), 0.0, -0.0])
    net = with_params(init_params((1, 2), ("linear",), seed=0), np.resize(awkward, 4))
    path = tmp_path / "net.json"
    save_net(net, path)
    back, _ = load_net(path)
    assert back.params.tobytes() == net.params.tobytes()


def test_roundtrip_with_head(tmp_path):
    head = HeadSpec("mixture", 5)
    net = init_adversary(head, (20, 20), ("relu", "relu"), seed=1)
    path = tmp_path / "adv.json"
    save_net(net, path, head=head)
    back, back_head = load_net(path)
    assert back_head == head
    assert np.array_equal(back.params, net.params)


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(DataError):
        load_net(path)
    with pytest.raises(DataError):
        load_net(tmp_path / "missing.json")


def test_load_rejects_wrong_format_or_version(tmp_path):
    net = init_params((2, 2, 1), ("tanh", "sigmoid"), seed=0)
    path = tmp_path / "net.json"
    save_net(net, path)
    doc = json.loads(path.read_text())

    doc_bad = dict(doc, format="other-thing")
    path.write_text(json.dumps(doc_bad))
    with pytest.raises(DataError):
        load_net(path)

    doc_bad = dict(doc, version=99)
    path.write_text(json.dumps(doc_bad))
    with pytest.raises(DataError):
        load_net(path)


def test_load_rejects_corrupt_params(tmp_path):
    net = init_params((2, 2, 1), ("tanh", "sigmoid"), seed=0)
    path = tmp_path / "net.json"
    save_net(net, path)
    doc = json.loads(path.read_text())
    doc["params_hex"] = doc["params_hex"][:-1]  # wrong length
    path.write_text(json.dumps(doc))
    with pytest.raises(DataError):
        load_net(path)

    doc["params_hex"] = ["zzz"] * (len(doc["params_hex"]) + 1)
    path.write_text(json.dumps(doc))
    with pytest.raises(DataError):
        load_net(path)
