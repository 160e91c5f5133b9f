"""Synthetic homes for scalability and fault studies.

Every generated home has one light per room, each with its own KWS unit,
laid out far enough apart (15 m) that only the nearest unit hears a
speaker standing next to it.
"""
from __future__ import annotations

import math
import random

from .home import HomeConfig, config_from_dict

SPACING_M = 15.0
WAKE = "hey hearth"


def room_name(i: int) -> str:
    return f"room-{i}"


def node_name(i: int) -> str:
    return f"node-{i:02d}"


def _vocabulary(n: int) -> dict:
    return {
        "wake_words": [WAKE],
        "actions": {"turn on": "turn-on", "turn off": "turn-off", "brighten": "brightness-up"},
        "device_classes": {"light": "light", "lamp": "light"},
        "rooms": {f"room {i}": room_name(i) for i in range(n)},
    }


def _light(i: int, pos, techs, approach: str) -> dict:
    return {
        "id": node_name(i),
        "class": "light",
        "position": [round(pos[0], 6), round(pos[1], 6)],
        "components": {"iot_adapter": sorted(techs), "sensor_actuators": ["lamp"]},
        "kws": {"approach": approach, "accuracy": 1.0},
        "vocabulary": "home",
        "actions": {
            "turn-on": {"attr": "power", "value": "on"},
            "turn-off": {"attr": "power", "value": "off"},
            "brightness-up": {"attr": "brightness", "value": "high", "requires": {"power": "on"}},
        },
        "state": {"power": "off", "brightness": "low"},
    }


def home_from_edges(n: int, edges, *, name: str = "generated", seed: int = 0, broker: int = 0,
                    approach: str = "unified", mode: str = "peer", tech: str = "mesh-routed",
                    positions=None) -> HomeConfig:
    """One room and one light per node; ``broker`` doubles as the gateway."""
    if positions is None:
        radius = SPACING_M * n / (2 * math.pi) if n > 2 else SPACING_M
        positions = [(radius * math.cos(2 * math.pi * i / n), radius * math.sin(2 * math.pi * i / n)) for i in range(n)]
    alt = "local-wifi" if tech != "local-wifi" else "mesh-routed"
    subsystems = []
    for i in range(n):
        techs = {tech, alt} if i == broker else {tech}
        subsystems.append({"name": room_name(i), "modules": [
            {"name": "lighting", "devices": [_light(i, positions[i], techs, approach)]}
        ]})
    doc = {
        "name": name,
        "seed": seed,
        "vocabularies": {"home": _vocabulary(n)},
        "subsystems": subsystems,
        "links": [{"a": node_name(a), "b": node_name(b), "tech": tech} for a, b in sorted(edges)],
        "gateways": [node_name(broker)],
        "messaging": {"mode": mode, "broker": node_name(broker)},
    }
    return config_from_dict(doc)


def ring_edges(n: int) -> list:
    return [(min(i, (i + 1) % n), max(i, (i + 1) % n)) for i in range(n)] if n > 2 else [(0, 1)][: n - 1]


def ring_home(n: int, **kw) -> HomeConfig:
    return home_from_edges(n, ring_edges(n), name=f"ring-{n}", **kw)


def random_biconnected_edges(n: int, rng: random.Random, extra: float = 0.3) -> list:
    """A Hamiltonian cycle over a random permutation plus random chords.

    Any graph containing a spanning cycle is 2-connected.
    """
    if n < 3:
        raise ValueError("a 2-connected graph needs at least 3 nodes")
    perm = list(range(n))
    rng.shuffle(perm)
    edges = {tuple(sorted((perm[i], perm[(i + 1) % n]))) for i in range(n)}
    for a in range(n):
        for b in range(a + 1, n):
            if (a, b) not in edges and rng.random() < extra:
                edges.add((a, b))
    return sorted(edges)


def random_biconnected_home(n: int, seed: int, **kw) -> HomeConfig:
    rng = random.Random(seed)
    edges = random_biconnected_edges(n, rng)
    return home_from_edges(n, edges, name=f"biconnected-{n}-{seed}", seed=seed, **kw)


def cross_room_scenario(cfg: HomeConfig, pairs, *, start_ms: float = 1000.0, gap_ms: float = 3000.0,
                        action: str = "turn on") -> list:
    """Scenario directives: speaker at room a's light asks for room b's light."""
    out = []
    t = start_ms
    for a, b in pairs:
        pos = cfg.device(node_name(a)).position
        if a == b:
            text = f"{WAKE} {action} the light"
        else:
            text = f"{WAKE} {action} the light in room {b}"
        out.append({"at_ms": t, "say": {"speaker": f"user-{a}", "text": text, "position": list(pos)}})
        t += gap_ms
    return out


def ring_scenario(cfg: HomeConfig, n: int) -> list:
    """Each room addresses the opposite room of the ring."""
    return cross_room_scenario(cfg, [(i, (i + n // 2) % n) for i in range(n)])
