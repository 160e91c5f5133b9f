import math

import pytest

from hearthmesh.home import ConfigError
from hearthmesh.sim import (CSV_COLUMNS, NodeDownAt, NodeUpAt, Scenario, ScenarioError, Simulation, derived_seed,
                            inject_fault, load_scenario, load_scenario_file, parse_grid, run, run_matrix)
from hearthmesh.topology import cross_room_scenario, home_from_edges, node_name, ring_home
from helpers import edited, say

BALCONY = [1.0, 0.0]


def test_direct_latency_matches_acoustic_oracle(worked_home, data_dir):
    rep, _ = run(worked_home, load_scenario_file(data_dir / "worked_scenario.json"))
    direct = rep.interactions[0]
    received = 65.0 - 20.0 * math.log10(1.0 + 1.0)
    detection = min(150.0, max(30.0, 150.0 - 3.0 * (received - 45.0)))
    assert direct["latency_ms"] == pytest.approx(detection + 200.0, abs=1e-3)
    assert direct["cloud_latency_ms"] == pytest.approx(direct["latency_ms"] + 130.0, abs=1e-3)


def test_worked_message_counts(worked_home, worked_doc, data_dir):
    sc = load_scenario_file(data_dir / "worked_scenario.json")
    peer, _ = run(worked_home, sc)
    assert [r["messages"]["sent"] for r in peer.interactions] == [0, 2, 4]
    assert [r["hop_count"] for r in peer.interactions] == [0, 1, 2]
    broker_cfg = edited(worked_doc, lambda d: d["messaging"].update(mode="broker"))
    broker, _ = run(broker_cfg, sc)
    assert [r["outcome"] for r in broker.interactions] == ["success"] * 3
    # one publish + one relay, one response + one forward: twice the peer count for one target
    assert broker.interactions[1]["messages"]["sent"] == 2 * peer.interactions[1]["messages"]["sent"]


def test_partition_times_out_after_all_retries():
    cfg = home_from_edges(3, [(0, 1), (1, 2)], name="path")
    sc = Scenario.from_doc([{"at_ms": 0, "fault": {"node": node_name(1), "state": "down"}},
                            *cross_room_scenario(cfg, [(0, 2)], start_ms=500.0)])
    rep, _ = run(cfg, sc)
    rec = rep.interactions[0]
    assert rec["outcome"] == "timeout"
    m = cfg.messaging
    assert rec["latency_ms"] >= (m.max_retries + 1) * m.deadline_ms
    assert rec["voice_response"]["kind"] == "failure"


def test_dead_listener_does_not_hear(worked_home):
    sc = Scenario.from_doc([{"at_ms": 0, "fault": {"node": "balcony-ceiling-light", "state": "down"}},
                            say(1000, "hey hearth turn on the light", BALCONY)])
    rep, _ = run(worked_home, sc)
    assert rep.interactions[0]["outcome"] == "unheard"


def test_fault_and_recovery_without_traffic_changes_nothing(worked_home):
    base = [say(1000, "hey hearth turn on the light", BALCONY)]
    a, _ = run(worked_home, Scenario.from_doc(base))
    sc = inject_fault(inject_fault(Scenario.from_doc(base), NodeDownAt("bedroom-table-lamp", 5000)),
                      NodeUpAt("bedroom-table-lamp", 6000))
    b, _ = run(worked_home, sc)
    assert a.data == b.data


def test_inject_fault_keeps_time_order():
    sc = Scenario.from_doc([say(1000, "hi", BALCONY), say(3000, "hi", BALCONY)])
    sc = inject_fault(sc, NodeDownAt("x", 2000))
    assert [d.at_ms for d in sc.directives] == [1000, 2000, 3000]


def test_repl_style_matches_script(worked_home):
    lines = [(1000.0, "hey hearth turn on the light"), (4000.0, "hey hearth start washing")]
    scripted, _ = run(worked_home, Scenario.from_doc([say(t, x, BALCONY) for t, x in lines]))
    sim = Simulation(worked_home)
    recs = []
    for t, text in lines:
        sim.advance_to(t)
        sim.say(text, position=BALCONY)
        recs += sim.run_until_quiet()
    assert [r["outcome"] for r in recs] == [r["outcome"] for r in scripted.interactions]
    assert [r["latency_ms"] for r in recs] == [r["latency_ms"] for r in scripted.interactions]


def test_closer_listener_wins_and_other_is_suppressed(worked_home):
    # the balcony washer has no KWS; stand between two listeners
    rep, _ = run(worked_home, Scenario.from_doc([say(1000, "hey hearth turn on the light", [5.0, 0.0])]))
    rec = rep.interactions[0]
    assert rec["listener"] == "balcony-ceiling-light"
    assert rec["suppressed_listeners"] == ["living-room-lamp"]
    assert rep.aggregates["listener_suppressions"] == 1


def test_csv_header(worked_home, data_dir):
    rep, _ = run(worked_home, load_scenario_file(data_dir / "worked_scenario.json"))
    lines = rep.to_csv().splitlines()
    assert lines[0].split(",") == list(CSV_COLUMNS)
    assert len(lines) == 4


@pytest.mark.parametrize("text", [
    '{"directives": [{"at_ms": -1, "say": {"text": "hi", "room": "balcony"}}]}',
    '{"directives": [{"at_ms": 0, "dance": {}}]}',
    '{"horizon": 5}',
    '[{"at_ms": 0, "say": {"text": "hi"}}]',
])
def test_bad_scenarios(text):
    with pytest.raises(ConfigError):
        load_scenario(text)


def test_unknown_room_and_device(worked_home):
    for doc in ([{"at_ms": 0, "say": {"text": "hi", "room": "attic"}}],
                [{"at_ms": 0, "fault": {"node": "toaster", "state": "down"}}]):
        with pytest.raises(ScenarioError):
            run(worked_home, Scenario.from_doc(doc))


def test_horizon_sets_end(worked_home):
    rep, _ = run(worked_home, Scenario.from_doc({"horizon_ms": 5000, "directives": []}))
    assert rep.data["end_ms"] == 5000


def test_parse_grid():
    assert parse_grid(["mode=peer,broker", "offered-load=0.5x,2"]) == {"mode": ["peer", "broker"],
                                                                      "offered-load": [0.5, 2.0]}
    for bad in (["colour=red"], ["mode"], ["mode=carrier"]):
        with pytest.raises(ValueError):
            parse_grid(bad)


def test_derived_seeds_are_distinct_and_stable():
    a = derived_seed(7, {"scenario": "s", "node-count": 4})
    assert a == derived_seed(7, {"node-count": 4, "scenario": "s"})
    assert a != derived_seed(7, {"scenario": "s", "node-count": 8})


def test_ring_matrix_hops_grow_linearly():
    cfg = ring_home(4)
    result = run_matrix(cfg, None, {"node-count": [4, 8, 16]}, seed=1)
    assert [c["report"]["aggregates"]["mean_hop_count"] for c in result.cells] == [2, 4, 8]


def test_matrix_records_cell_errors(worked_home):
    sc = Scenario.from_doc([{"at_ms": 0, "fault": {"node": "@broker", "state": "down"}}])
    bare = edited_no_broker(worked_home)
    result = run_matrix(bare, sc, {"mode": ["peer"]})
    assert result.cells[0]["error"].startswith("ScenarioError")


def edited_no_broker(cfg):
    from hearthmesh.home import config_from_dict, config_to_dict
    doc = config_to_dict(cfg)
    doc["messaging"]["broker"] = None
    doc["gateways"] = []
    return config_from_dict(doc)
