import json
import socket
import threading
import time

import pytest
import uvicorn

from fraudproof import experiments
from fraudproof.cli import EXIT_ERROR, EXIT_OK, EXIT_SUITE_FAILED, main
from fraudproof.corpus import fig5_inputs, get_model
from fraudproof.graph import graph_to_document, inputs_to_document
from fraudproof.service import create_app


@pytest.fixture
def fig5_files(tmp_path):
    model = tmp_path / "fig5.json"
    model.write_text(json.dumps(graph_to_document(get_model("fig5"))))
    inputs = tmp_path / "inputs.json"
    inputs.write_text(json.dumps(inputs_to_document(fig5_inputs())))
    return model, inputs


def run(argv, tmp_path, name="out.json"):
    out = tmp_path / name
    code = main(argv + ["--out", str(out)])
    return code, out.read_text() if out.exists() else None


def test_eval_from_files(fig5_files, tmp_path):
    model, inputs = fig5_files
    code, text = run(["eval", "--model", str(model), "--inputs", str(inputs)], tmp_path)
    assert code == EXIT_OK
    assert json.loads(text)["outputs"]["Y"]["data"] == [17, 39]


def test_lower_prints_circuit(tmp_path):
    node = get_model("fig5").nodes[0].id
    code, text = run(["lower", "--model", "fig5", "--node", node], tmp_path, "c.txt")
    assert code == EXIT_OK and text.splitlines()[2] == "1 i32_mul v0 v4 -> v6"


def test_commit_and_dispute(fig5_files, tmp_path, capsys):
    model, inputs = fig5_files
    code, text = run(["commit", "--model", "fig5", "--inputs", str(inputs)], tmp_path)
    assert code == EXIT_OK and json.loads(text)["n_ops"] == 1
    code, text = run(["dispute", "--model", "fig5", "--inputs", str(inputs), "--fault", "bop:1:2",
                      "--quorum", "3"], tmp_path, "d.json")
    v = json.loads(text)["verdict"]
    assert code == EXIT_OK and (v["cause"], v["op"], v["bop"]) == ("bop-arbitration", 1, 3)
    assert "rejected: bop-arbitration" in capsys.readouterr().err


def test_profile_corners_sweep(tmp_path):
    code, text = run(["profile", "--model", "fig5", "--summary"], tmp_path)
    assert code == EXIT_OK and json.loads(text)["bops"] == 6
    code, text = run(["corners", "--kind", "f32_sqrt"], tmp_path, "c.txt")
    assert code == EXIT_OK and text.count("\n") >= 7500
    code, text = run(["sweep-k", "--model", "chain-64", "--ks", "2,8"], tmp_path)
    rows = json.loads(text)["rows"]
    assert [r["rounds_p1"] for r in rows] == [6, 2]


def test_consistency_quick_passes(tmp_path):
    code, text = run(["consistency", "--suite", "op", "--suite", "bounds", "--quick"], tmp_path)
    assert code == EXIT_OK and json.loads(text)["ok"]


def test_failing_suite_sets_exit_code(tmp_path, monkeypatch):
    def broken(name, quick=False, seed=0):
        return {"suite": name, "ok": False, "seconds": 0.0, "summary": {}}

    monkeypatch.setattr(experiments, "run_suite", broken)
    code, text = run(["consistency", "--suite", "op", "--quick"], tmp_path)
    assert code == EXIT_SUITE_FAILED and not json.loads(text)["ok"]


@pytest.mark.parametrize("argv", [
    ["eval", "--model", "no-such-model"],
    ["dispute", "--model", "fig5", "--fault", "bogus"],
    ["eval", "--model", "fig5", "--inputs", "/nonexistent/inputs.json"],
    ["corners", "--kind", "f64_add"],
])
def test_errors_exit_two(argv, capsys):
    assert main(argv) == EXIT_ERROR
    assert "error:" in capsys.readouterr().err


def test_unknown_verb_is_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["teleport"])
    assert info.value.code == 2


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture(scope="module")
def server():
    port = _free_port()
    srv = uvicorn.Server(uvicorn.Config(create_app(), host="127.0.0.1", port=port, log_level="warning"))
    thread = threading.Thread(target=srv.run, daemon=True)
    thread.start()
    deadline = time.time() + 30
    while not srv.started:
        assert time.time() < deadline, "server did not start"
        time.sleep(0.05)
    yield f"http://127.0.0.1:{port}"
    srv.should_exit = True
    thread.join(10)


def test_remote_server_gives_same_answer(server, fig5_files, tmp_path):
    _, inputs = fig5_files
    local = run(["eval", "--model", "fig5", "--inputs", str(inputs)], tmp_path, "a.json")
    remote = run(["--server", server, "eval", "--model", "fig5", "--inputs", str(inputs)], tmp_path, "b.json")
    assert local == remote and local[0] == EXIT_OK
    assert main(["--server", server, "eval", "--model", "nope"]) == EXIT_ERROR


def test_unreachable_server_is_an_error():
    assert main(["--server", f"http://127.0.0.1:{_free_port()}", "eval", "--model", "fig5"]) == EXIT_ERROR
