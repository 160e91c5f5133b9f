"""Energy accounting and the cloud-baseline counterfactual.

The counterfactual prices the same interaction log as if every accepted
command had also travelled the device -> router -> ISP -> cloud ->
manufacturer-cloud path and back.  Local traffic is kept in the
counterfactual (the home network is still needed to reach the router), so
the cloud total is the local total plus the cloud segments.
"""
from __future__ import annotations

from dataclasses import dataclass, field

# (name, direction, latency ms, energy units); placeholders, not measurements
DEFAULT_CLOUD_PATH = (
    ("device->router", "up", 5.0, 3.0),
    ("router->isp", "up", 10.0, 20.0),
    ("isp->cloud", "up", 30.0, 50.0),
    ("cloud->manufacturer-cloud", "up", 20.0, 30.0),
    ("manufacturer-cloud->cloud", "down", 20.0, 30.0),
    ("cloud->isp", "down", 30.0, 50.0),
    ("isp->router", "down", 10.0, 20.0),
    ("router->device", "down", 5.0, 3.0),
)


@dataclass(frozen=True)
class CloudSegment:
    name: str
    direction: str
    latency_ms: float
    energy: float


@dataclass(frozen=True)
class EnergyModel:
    hop_energy: dict = field(default_factory=lambda: {"mesh-flood": 1.0, "mesh-routed": 1.0, "local-wifi": 2.0})
    idle_per_s: float = 0.5
    listening_per_s: float = 0.2
    cloud_path: tuple = tuple(CloudSegment(*s) for s in DEFAULT_CLOUD_PATH)

    def __post_init__(self):
        costs = [self.idle_per_s, self.listening_per_s, *self.hop_energy.values()]
        costs += [c for s in self.cloud_path for c in (s.latency_ms, s.energy)]
        if any(c < 0 for c in costs):
            raise ValueError("energy model costs must be non-negative")
        for direction in ("up", "down"):
            if sum(1 for s in self.cloud_path if s.direction == direction) < 4:
                raise ValueError(f"cloud path needs at least 4 {direction} segments")

    @property
    def cloud_round_trip_ms(self) -> float:
        return sum(s.latency_ms for s in self.cloud_path)

    @property
    def cloud_round_trip_energy(self) -> float:
        return sum(s.energy for s in self.cloud_path)

    @classmethod
    def from_dict(cls, doc: dict, techs: dict | None = None) -> "EnergyModel":
        unknown = set(doc) - {"idle_per_s", "listening_per_s", "cloud_path"}
        if unknown:
            raise ValueError(f"unknown key {sorted(unknown)[0]!r}")
        hop = {name: t.energy for name, t in techs.items()} if techs else cls().hop_energy
        path = cls().cloud_path
        if "cloud_path" in doc:
            path = tuple(
                CloudSegment(s["name"], s["direction"], float(s["latency_ms"]), float(s["energy"]))
                for s in doc["cloud_path"]
            )
        return cls(
            hop_energy=hop,
            idle_per_s=float(doc.get("idle_per_s", 0.5)),
            listening_per_s=float(doc.get("listening_per_s", 0.2)),
            cloud_path=path,
        )

    def to_dict(self) -> dict:
        # hop energy lives with the link techs
        return {
            "idle_per_s": self.idle_per_s,
            "listening_per_s": self.listening_per_s,
            "cloud_path": [
                {"name": s.name, "direction": s.direction, "latency_ms": s.latency_ms, "energy": s.energy}
                for s in self.cloud_path
            ],
        }


@dataclass(frozen=True)
class EnergyBreakdown:
    local_total: float
    cloud_total: float
    idle: float
    listening: float
    network: float
    per_segment: dict

    def to_dict(self) -> dict:
        return {
            "local_total": self.local_total,
            "cloud_counterfactual_total": self.cloud_total,
            "idle": self.idle,
            "listening": self.listening,
            "network": self.network,
            "per_segment": dict(sorted(self.per_segment.items())),
        }


def energy_account(trace, em: EnergyModel) -> EnergyBreakdown:
    """Price an event trace locally and against the cloud counterfactual.

    Reads ``run-start`` (node counts), ``run-end`` (horizon), ``tx``
    (one radio transmission on a tech) and ``interaction`` records with
    ``priced`` set.
    """
    nodes = kws_nodes = 0
    start = end = 0.0
    per_segment: dict[str, float] = {}
    priced = 0
    for rec in trace:
        kind = rec["kind"]
        if kind == "tx":
            key = f"hop:{rec['tech']}"
            per_segment[key] = per_segment.get(key, 0.0) + em.hop_energy.get(rec["tech"], 0.0)
        elif kind == "interaction" and rec.get("priced"):
            priced += 1
        elif kind == "run-start":
            nodes, kws_nodes, start = rec["nodes"], rec["kws_nodes"], rec["t"]
        elif kind == "run-end":
            end = rec["t"]
    duration_s = max(0.0, end - start) / 1000.0
    idle = em.idle_per_s * nodes * duration_s
    listening = em.listening_per_s * kws_nodes * duration_s
    network = sum(per_segment.values())
    local = idle + listening + network
    cloud_extra = 0.0
    for s in em.cloud_path:
        e = s.energy * priced
        per_segment[f"cloud:{s.name}"] = e
        cloud_extra += e
    per_segment["idle"] = idle
    per_segment["listening"] = listening
    return EnergyBreakdown(local, local + cloud_extra, idle, listening, network, per_segment)
