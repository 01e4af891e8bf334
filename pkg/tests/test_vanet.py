import math

import pytest
from hypothesis import given, settings, strategies as st

from nrcvanet.vanet import (Beacon, ConfigurationError, CycleContext, EventRecord, NeighborTable, ProtocolConfig,
                            RPMessage, RQMessage, SegmentStore, close_interval, confirm_persistence,
                            cooperative_cycle, deliver_messages, handle_rp)


def test_delivery_respects_radio_range():
    inbox = deliver_messages([(1, "hi")], {1: (0.0, 0.0), 2: (299.0, 0.0), 3: (301.0, 0.0)})
    assert inbox[2] == ["hi"]
    assert inbox[3] == []
    assert inbox[1] == []


def test_broadcast_among_colocated_vehicles_excludes_sender():
    pos = {i: (5.0, 5.0) for i in range(6)}
    inbox = deliver_messages([(0, "b")], pos)
    assert sum(len(m) for m in inbox.values()) == 5
    with pytest.raises(ValueError):
        deliver_messages([], pos, radio_range=0)


@settings(max_examples=40)
@given(st.lists(st.tuples(st.floats(-1000, 1000), st.floats(-1000, 1000)), min_size=1, max_size=12))
def test_delivery_is_symmetric(points):
    pos = dict(enumerate(points))
    for s in pos:
        inbox = deliver_messages([(s, s)], pos)
        for r, msgs in inbox.items():
            assert (s in msgs) == (r != s and math.dist(pos[r], pos[s]) <= 300.0)


def test_neighbor_table_range_and_staleness():
    t = NeighborTable(owner=1, radio_range_m=300.0, staleness_s=1.0)
    b = Beacon(2, 10.0, "A", 0.0, 0, (1.0, 0.0), 10.0, (100.0, 0.0))
    far = Beacon(3, 10.0, "A", 0.0, 0, (1.0, 0.0), 10.0, (400.0, 0.0))
    assert t.receive(b, (0.0, 0.0))
    assert not t.receive(far, (0.0, 0.0))
    assert not t.receive(Beacon(1, 10.0, "A", 0.0, 0, (1.0, 0.0), 0.0, (0.0, 0.0)), (0.0, 0.0))
    t.evict(10.9)
    assert [x.sender_id for x in t.neighbors()] == [2]
    t.evict(11.5)
    assert t.neighbors() == []


def test_persistence_examples():
    E, N = True, False
    assert confirm_persistence([E, E, E, E])
    assert not confirm_persistence([E, E, N, E, E, E])
    assert not confirm_persistence([E, E, E])
    assert confirm_persistence([N, E, E, E, E])


@given(st.lists(st.booleans(), max_size=20))
def test_persistence_depends_only_on_the_last_four(flags):
    assert confirm_persistence(flags) == (len(flags) >= 4 and all(flags[-4:]))


def _ctx(ott, tt_h=100.0, now=0.0):
    return CycleContext(7, "A", now, ott, tt_h, ("U1", "U2"))


def test_below_threshold_sends_nothing_and_does_not_classify():
    called = []
    res = cooperative_cycle(_ctx(170.0), SegmentStore("A"), ProtocolConfig(), lambda: called.append(1) or "Incident")
    assert res.cause is None and res.messages == [] and not called


def test_missing_model_is_a_configuration_error():
    with pytest.raises(ConfigurationError):
        cooperative_cycle(_ctx(190.0), SegmentStore("A"), ProtocolConfig(), None)


def test_recurrent_is_never_stored():
    st_ = SegmentStore("A")
    res = cooperative_cycle(_ctx(190.0), st_, ProtocolConfig(), lambda: "Recurrent")
    assert res.messages == [] and st_.record is None
    with pytest.raises(ValueError):
        EventRecord("Recurrent", "A", 0.0)


def _confirmed_store(cause, cfg, now=0.0):
    st_ = SegmentStore("A")
    first = cooperative_cycle(_ctx(190.0, now=now), st_, cfg, lambda: cause)
    assert [type(m) for m in first.messages] == [RQMessage]
    for _ in range(cfg.persistence_intervals):
        close_interval(st_, True, cfg)
    assert st_.record.confirmed
    return st_


def test_weather_waits_for_the_hold_before_replying():
    cfg = ProtocolConfig(eval_interval_s=300.0, hold_intervals=4)
    st_ = _confirmed_store("Weather", cfg)
    assert cooperative_cycle(_ctx(190.0, now=cfg.hold_s - 1), st_, cfg, lambda: "Weather").messages == []
    rp = cooperative_cycle(_ctx(190.0, now=cfg.hold_s), st_, cfg, lambda: "Weather").messages
    assert [m.target for m in rp] == ["U1", "U2"]
    assert all(isinstance(m, RPMessage) for m in rp)
    # one RP per stored event
    assert cooperative_cycle(_ctx(190.0, now=cfg.hold_s + 5), st_, cfg, lambda: "Weather").messages == []


def test_incident_replies_as_soon_as_confirmed():
    cfg = ProtocolConfig()
    st_ = SegmentStore("A")
    cooperative_cycle(_ctx(190.0), st_, cfg, lambda: "Incident")
    # not yet confirmed: the hold bypass never skips persistence
    assert cooperative_cycle(_ctx(190.0, now=1.0), st_, cfg, lambda: "Incident").messages == []
    for _ in range(4):
        close_interval(st_, True, cfg)
    rp = cooperative_cycle(_ctx(190.0, now=2.0), st_, cfg, lambda: "Incident").messages
    assert len(rp) == 2 and all(isinstance(m, RPMessage) for m in rp)


def test_normal_intervals_expire_an_unconfirmed_record():
    cfg = ProtocolConfig()
    st_ = SegmentStore("A")
    cooperative_cycle(_ctx(190.0), st_, cfg, lambda: "Weather")
    outcomes = [close_interval(st_, False, cfg) for _ in range(4)]
    assert outcomes[-1] == "expired" and st_.record is None


def _rp(origin="A", target="B", cause="Incident", t=0.0):
    rec = EventRecord(cause, origin, t, confirmed=True)
    return RPMessage(1, origin, target, rec, t + 1.0)


def test_handle_rp_installs_once_and_never_forwards():
    stores = {s: SegmentStore(s) for s in "ABC"}
    rp = _rp()
    handle_rp(stores, rp)
    rec = stores["B"].record
    assert rec.cause == "Incident" and rec.hop == 1 and rec.origin_segment == "A" and rec.confirmed
    handle_rp(stores, rp)
    assert stores["B"].record is rec
    # a relayed record does not produce a further RP from B
    cfg = ProtocolConfig()
    ctx = CycleContext(9, "B", 5.0, 500.0, 100.0, ("C",))
    assert cooperative_cycle(ctx, stores["B"], cfg, lambda: "Incident").messages == []
    # and a second-hop RP is refused outright
    handle_rp(stores, RPMessage(2, "B", "C", rec, 6.0, hop=2))
    assert stores["C"].record is None


def test_first_confirmed_record_wins():
    stores = {s: SegmentStore(s) for s in "AB"}
    cfg = ProtocolConfig()
    own = _confirmed_store("Weather", cfg)
    own.segment_id = "B"
    own.record.segment_id = "B"
    own.record.origin_segment = "B"
    stores["B"] = own
    handle_rp(stores, _rp())
    assert stores["B"].record.cause == "Weather"


def test_protocol_config_validation():
    with pytest.raises(ConfigurationError):
        ProtocolConfig(radio_range_m=0).validate()
    with pytest.raises(ConfigurationError):
        ProtocolConfig(eval_interval_s=305.0).validate()
    with pytest.raises(ConfigurationError):
        ProtocolConfig(rp_direction="sideways").validate()
    assert ProtocolConfig().hold_s == 1200.0
