import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recurtmle.event_data import (
    DataValidationError,
    DegenerateGridError,
    EventKind,
    EventRecord,
    HistoryState,
    SubjectPath,
    at_risk,
    build_grid,
    ingest_csv,
    on_grid,
    validate_paths,
    write_csv,
)

R, D, C = EventKind.RECURRENT, EventKind.DEATH, EventKind.CENSOR
HEADER = "id,tstart,tstop,event,a,l1,l2,l3\n"


def path(pid, events, admin_end=10.0, a=1, x=(0.0,)):
    return SubjectPath(str(pid), x, a, tuple(EventRecord(t, k) for t, k in events), admin_end)


def test_ingest_recurrent_then_death():
    paths = ingest_csv(io.BytesIO((HEADER + "1,0,50,1,1,0.3,0.5,0.2\n1,50,120,2,1,0.3,0.5,0.2\n").encode()))
    assert len(paths) == 1
    p = paths[0]
    assert p.id == "1" and p.treatment == 1 and p.covariates == (0.3, 0.5, 0.2)
    assert [(r.time, r.kind) for r in p.records] == [(50.0, R), (120.0, D)]
    assert p.died and p.end_time == 120.0


def test_ingest_empty_stream():
    assert ingest_csv(io.BytesIO(b"")) == []


def test_ingest_reports_row_of_bad_interval():
    with pytest.raises(DataValidationError) as err:
        ingest_csv(io.StringIO(HEADER + "1,0,5,1,1,0,0,0\n1,5,5,2,1,0,0,0\n"))
    assert err.value.row == 3
    assert "row 3" in str(err.value)


@pytest.mark.parametrize(
    "body, message",
    [
        ("1,0,5,7,1,0,0,0\n", "unknown event code"),
        ("1,0,5,2,1,0,0,0\n1,5,8,1,1,0,0,0\n", "after terminal"),
        ("1,0,5,1,1,0,0,0\n1,4,8,1,1,0,0,0\n", "overlapping"),
        ("1,0,5,x,1,0,0,0\n", "cannot parse"),
        ("1,0,abc,1,1,0,0,0\n", "cannot parse"),
    ],
)
def test_ingest_rejects_malformed_rows(body, message):
    with pytest.raises(DataValidationError, match=message):
        ingest_csv(io.StringIO(HEADER + body))


def test_admin_code_closes_interval_without_event():
    paths = ingest_csv(io.StringIO(HEADER + "7,0,2,1,0,0,0,0\n7,2,9,3,0,0,0,0\n"))
    p = paths[0]
    assert p.terminal is None and p.admin_end == 9.0 and p.count(9.0) == 1


def test_csv_round_trip():
    paths = [path(1, [(0.5, R), (0.9, D)], x=(0.1, 0.2)), path(2, [(0.3, C)], a=0, x=(0.4, 0.5)), path(3, [(0.2, R)], 1.0, x=(0.6, 0.7))]
    sink = io.StringIO()
    write_csv(paths, sink, ["l1", "l2"])
    back = ingest_csv(io.StringIO(sink.getvalue()))
    key = lambda p: (p.id, p.covariates, p.treatment, p.records, p.end_time)  # noqa: E731
    assert [key(p) for p in back] == [key(p) for p in paths]


def test_grid_sorts_and_dedupes():
    paths = [path(1, [(0.5, R)]), path(2, [(0.2, R)]), path(3, [(0.5, D)])]
    assert build_grid(paths, 1.0).times.tolist() == [0.2, 0.5]


def test_grid_without_events_before_horizon():
    with pytest.raises(DegenerateGridError):
        build_grid([path(1, [(1.5, R)])], 1.0)


def test_grid_includes_boundary():
    paths = [path(1, [(0.1, R), (0.9, R), (1.0, R)])]
    assert build_grid(paths, 1.0).times.tolist() == [0.1, 0.9, 1.0]


def test_at_risk_inclusive_at_terminal_time():
    p = path(1, [(0.7, D)])
    assert at_risk(p, 0.7)
    assert not at_risk(p, 0.71)
    assert at_risk(path(2, [], admin_end=1.0), 0.99)


def test_record_invariants():
    with pytest.raises(DataValidationError):
        EventRecord(0.0, R)
    with pytest.raises(DataValidationError):
        path(1, [(0.5, D), (0.6, C)])
    with pytest.raises(DataValidationError):
        path(1, [(0.5, R), (0.5, R)])
    with pytest.raises(DataValidationError):
        validate_paths([path(1, []), path(1, [])])


def test_history_state_caps_count():
    p = path(1, [(0.1, R), (0.2, R), (0.3, R)])
    hs = HistoryState(2)
    assert [hs.state_of(p, t) for t in (0.1, 0.15, 0.2, 0.35)] == [1, 2, 2, 2]
    assert HistoryState.default_for([p], 1.0).count_cap == 4


@st.composite
def datasets(draw):
    n = draw(st.integers(1, 6))
    times = st.lists(st.integers(1, 40), min_size=0, max_size=5, unique=True)
    rows = []
    for i in range(n):
        ts = sorted(draw(times))
        end = draw(st.sampled_from([0, 2, 3]))
        t0 = 0
        for j, t in enumerate(ts):
            code = end if j == len(ts) - 1 else 1
            rows.append(f"{i},{t0},{t},{code},{i % 2},{i / 10}\n")
            t0 = t
    return rows


@settings(max_examples=60, deadline=None)
@given(datasets(), st.randoms(use_true_random=False))
def test_grid_invariant_under_row_permutation(rows, rnd):
    if not rows:
        return
    header = "id,tstart,tstop,event,a,l1\n"
    shuffled = list(rows)
    rnd.shuffle(shuffled)
    p1 = ingest_csv(io.StringIO(header + "".join(rows)))
    p2 = ingest_csv(io.StringIO(header + "".join(shuffled)))
    assert sorted(p1, key=lambda p: p.id) == sorted(p2, key=lambda p: p.id)
    try:
        g1 = build_grid(p1, 30.0)
    except DegenerateGridError:
        with pytest.raises(DegenerateGridError):
            build_grid(p2, 30.0)
        return
    np.testing.assert_array_equal(g1.times, build_grid(p2, 30.0).times)


@settings(max_examples=60, deadline=None)
@given(datasets())
def test_pooled_jumps_and_state_constancy(rows):
    if not rows:
        return
    paths = ingest_csv(io.StringIO("id,tstart,tstop,event,a,l1\n" + "".join(rows)))
    try:
        grid = build_grid(paths, 40.0)
    except DegenerateGridError:
        return
    proc = on_grid(paths, grid)
    for k, t in enumerate(grid.times):
        assert proc.recurrent_jump[:, k].sum() == sum(int(np.any(p.recurrent_times == t)) for p in paths)
    hs = HistoryState(3)
    for p in paths:
        rec = set(p.recurrent_times.tolist())
        states = [hs.state_of(p, t) for t in grid.times]
        for k in range(1, grid.K):
            # the state can only change just after a recurrent event of this path
            if states[k] != states[k - 1]:
                assert grid.times[k - 1] in rec
