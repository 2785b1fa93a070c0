import io
import json
import os
import signal
import socket
import subprocess
import sys
import threading
import time

import httpx
from liteswarm.cli import main

from .conftest import FIXTURES, IDENTITY

CONFIG = str(FIXTURES / "config.json")
SCRIPT = str(FIXTURES / "config_script.json")
SINA = str(FIXTURES / "sina_doc.txt")


def config_copy(tmp_path, name="config.json", **changes):
    cfg = json.loads((FIXTURES / "config.json").read_text())
    cfg["agents"][0]["tools"] = [str(FIXTURES / "tools" / "search_news.tool.json")]
    for key, value in changes.items():
        if value is None:
            del cfg[key]
        else:
            cfg[key] = value
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def chat(monkeypatch, capsys, lines, *extra, target="LightAgent"):
    monkeypatch.setattr(sys, "stdin", io.StringIO("".join(f"{line}\n" for line in lines)))
    code = main(["--provider-script", SCRIPT, "chat", CONFIG, target, *extra])
    out, err = capsys.readouterr()
    return code, out, err


def test_chat_identity(monkeypatch, capsys):
    code, out, _ = chat(monkeypatch, capsys, ["Hello, who are you?", "/quit", "never read"])
    assert code == 0
    assert out.splitlines() == [IDENTITY]


def test_provider_script_after_subcommand(monkeypatch, capsys):
    monkeypatch.setattr(sys, "stdin", io.StringIO("Hello, who are you?\n"))
    assert main(["chat", CONFIG, "LightAgent", "--provider-script", SCRIPT]) == 0
    assert capsys.readouterr().out.strip() == IDENTITY


def test_chat_stream(monkeypatch, capsys):
    code, out, _ = chat(monkeypatch, capsys, ["Hello, who are you?"], "--stream")
    assert code == 0 and out == IDENTITY + "\n"


def test_chat_trace(monkeypatch, capsys):
    code, out, _ = chat(monkeypatch, capsys, ["Please find the latest AI news"], "--show-trace")
    lines = out.splitlines()
    assert lines[0].startswith("Here is what I found")
    assert '[trace] tool call search_news {"keyword": "AI"}' in lines
    assert "[trace] tool result search_news ok: By searching for AI, I've found 5 related pieces of information." in lines


def test_chat_swarm_trace(monkeypatch, capsys):
    q = "Hello, I am Alice. I need to check if Wang Xiaoming has completed onboarding."
    code, out, _ = chat(monkeypatch, capsys, [q], "--show-trace", target="swarm:Agent A")
    assert code == 0
    assert out.startswith("Hello, I am Agent D")
    assert "[trace] handoff Agent A -> Agent D" in out.splitlines()


def test_chat_memories_command(monkeypatch, capsys):
    code, out, _ = chat(monkeypatch, capsys, ["/memories", "Hello, who are you?", "/memories"], "--user", "alice")
    lines = out.splitlines()
    assert lines[0] == "(no memories)"
    assert lines[1] == IDENTITY
    assert lines[2].startswith("- ") and "Hello, who are you?" in lines[2]


def test_unknown_agent_exit_2(monkeypatch, capsys):
    code, out, err = chat(monkeypatch, capsys, ["hi"], target="Agent X")
    assert code == 2
    assert "unknown agent: Agent X" in err
    assert out == ""


def test_unknown_swarm_exit_2(monkeypatch, capsys):
    code, _, err = chat(monkeypatch, capsys, ["hi"], target="swarm:Agent B")
    assert code == 2 and "unknown swarm" in err


def test_config_error_before_side_effects(tmp_path, monkeypatch, capsys):
    swarm = {"entry": "Agent A", "members": ["Agent A", "Agent X"]}
    path = config_copy(tmp_path, memory={"journal": "memory.jsonl"}, swarms=[swarm])
    monkeypatch.setattr(sys, "stdin", io.StringIO("hi\n"))
    assert main(["chat", str(path), "LightAgent"]) == 2
    assert "unknown agent: Agent X" in capsys.readouterr().err
    assert not (tmp_path / "memory.jsonl").exists()


def test_missing_config_exit_2(capsys, tmp_path):
    assert main(["serve", str(tmp_path / "nope.json")]) == 2
    assert "not found" in capsys.readouterr().err


def test_toolgen_success_then_exists_then_force(tmp_path, capsys):
    script = str(FIXTURES / "toolgen_script.json")
    args = ["--provider-script", script, "toolgen", CONFIG, "--provider", "generator", "--doc", SINA, "--out", str(tmp_path)]
    assert main(args) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["get_stock_kline_data.tool.json", "get_stock_realtime_data.tool.json"]
    capsys.readouterr()
    assert main(args) == 4
    assert "--force" in capsys.readouterr().err
    assert main(args + ["--force"]) == 0


def test_toolgen_invalid_exit_3(tmp_path, capsys):
    script = str(FIXTURES / "toolgen_invalid_script.json")
    code = main(["--provider-script", script, "toolgen", CONFIG, "--provider", "generator", "--doc", SINA, "--out", str(tmp_path / "out")])
    assert code == 3
    assert "get_stock_kline_data" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_toolgen_doc_from_stdin(tmp_path, monkeypatch):
    monkeypatch.setattr(sys, "stdin", io.StringIO((FIXTURES / "sina_doc.txt").read_text()))
    script = str(FIXTURES / "toolgen_script.json")
    assert main(["--provider-script", script, "toolgen", CONFIG, "--provider", "generator", "--doc", "-", "--out", str(tmp_path)]) == 0


def test_validate(tmp_path, capsys):
    good = str(FIXTURES / "tools" / "search_news.tool.json")
    main(["--provider-script", str(FIXTURES / "toolgen_script.json"), "toolgen", CONFIG,
          "--provider", "generator", "--doc", SINA, "--out", str(tmp_path)])
    capsys.readouterr()
    assert main(["validate", good, str(tmp_path / "get_stock_kline_data.tool.json")]) == 0
    assert capsys.readouterr().out.splitlines() == ["OK search_news", "OK get_stock_kline_data"]

    bad = tmp_path / "broken.tool.json"
    bad.write_text('{"name": "broken", "description": "x", "params": [{"name": "a", "ptype": "str')
    assert main(["validate", good, str(bad), str(tmp_path / "get_stock_realtime_data.tool.json")]) == 1
    lines = capsys.readouterr().out.splitlines()
    assert [line.split()[0] for line in lines] == ["OK", "FAIL", "OK"]
    assert lines[1].startswith("FAIL broken.tool.json:")

    assert main(["validate", str(tmp_path / "missing.tool.json")]) == 1
    assert capsys.readouterr().out.strip() == "FAIL missing.tool.json: not found"


# -- serve, as a real process ----------------------------------------------------------

def _serve_config(tmp_path, bind):
    gateway = json.loads((FIXTURES / "config.json").read_text())["gateway"]
    return str(config_copy(tmp_path, "serve.json", gateway=dict(gateway, bind_address=bind)))


def _launch(config):
    return subprocess.Popen(
        [sys.executable, "-m", "liteswarm", "--provider-script", SCRIPT, "serve", config],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
    )


def test_serve_healthz_and_graceful_sigint(tmp_path):
    proc = _launch(_serve_config(tmp_path, "127.0.0.1:0"))
    try:
        line = proc.stdout.readline()
        assert "listening on" in line, proc.stderr.read()
        url = line.split()[-1]
        assert httpx.get(f"{url}/healthz", timeout=5).text == "ok"
        r = httpx.post(f"{url}/v1/chat/completions", timeout=5,
                       json={"model": "lightagent", "messages": [{"role": "user", "content": "Hello, who are you?"}]})
        assert r.json()["choices"][0]["message"]["content"] == IDENTITY
        proc.send_signal(signal.SIGINT)
        assert proc.wait(timeout=15) == 0
    finally:
        if proc.poll() is None:
            proc.kill()


def test_sigint_drains_in_flight_request(tmp_path):
    proc = _launch(_serve_config(tmp_path, "127.0.0.1:0"))
    out = {}
    try:
        url = proc.stdout.readline().split()[-1]

        def slow_call():
            out["r"] = httpx.post(f"{url}/v1/chat/completions", timeout=10,
                                  json={"model": "lightagent", "messages": [{"role": "user", "content": "take your time"}]})

        t = threading.Thread(target=slow_call)
        t.start()
        time.sleep(0.4)
        proc.send_signal(signal.SIGINT)
        t.join(10)
        assert proc.wait(timeout=15) == 0
    finally:
        if proc.poll() is None:
            proc.kill()
    assert out["r"].json()["choices"][0]["message"]["content"] == "Done, slowly."


def test_serve_port_in_use_exit_1(tmp_path):
    holder = socket.create_server(("127.0.0.1", 0))
    try:
        port = holder.getsockname()[1]
        proc = _launch(_serve_config(tmp_path, f"127.0.0.1:{port}"))
        assert proc.wait(timeout=15) == 1
        assert "cannot bind" in proc.stderr.read()
    finally:
        holder.close()


def test_serve_requires_gateway_section(tmp_path, capsys):
    path = config_copy(tmp_path, gateway=None)
    assert main(["serve", str(path)]) == 2
    assert "gateway" in capsys.readouterr().err


def test_module_entry_point_help():
    out = subprocess.run([sys.executable, "-m", "liteswarm", "--help"], capture_output=True, text=True, env=os.environ)
    assert out.returncode == 0
    for sub in ("chat", "serve", "toolgen", "validate"):
        assert sub in out.stdout
