"""Shared fixtures. The whole suite must run offline: a session-wide socket
guard rejects any connection that is not loopback."""

from __future__ import annotations

import socket

import pytest

from rosie_forge.scene import SceneObject, SceneSpec, TaskSpec, generate_episode

_LOOPBACK_HOSTS = {"127.0.0.1", "localhost", "::1"}
_real_connect = socket.socket.connect

GUARD_ACTIVE = False


def _loopback_only_connect(self, address):
    host = address[0] if isinstance(address, tuple) else address
    if isinstance(host, str) and host not in _LOOPBACK_HOSTS:
        raise RuntimeError(f"test suite attempted a non-loopback connection to {host!r}")
    return _real_connect(self, address)


@pytest.fixture(scope="session", autouse=True)
def offline_guard():
    global GUARD_ACTIVE
    socket.socket.connect = _loopback_only_connect
    GUARD_ACTIVE = True
    yield
    socket.socket.connect = _real_connect
    GUARD_ACTIVE = False


def pytest_terminal_summary(terminalreporter):
    import sys

    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not getattr(acceptance, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for name, passed in acceptance.RESULTS:
        terminalreporter.write_line(f"{name}: {'PASS' if passed else 'FAIL'}")


@pytest.fixture()
def bag_scene() -> SceneSpec:
    return SceneSpec(
        table_region=(0, 0, 256, 256),
        objects=(
            SceneObject(name="green chip bag", shape="sprite", placement=(108, 150, 40, 28)),
            SceneObject(name="coke can", shape="sprite", placement=(40, 180, 20, 30)),
        ),
    )


@pytest.fixture()
def bag_episode(bag_scene):
    task = TaskSpec(verb="pick", target_object="green chip bag", scene=bag_scene)
    episode, truths = generate_episode(task, 10, seed=7, episode_id="ep_000")
    return episode, truths
