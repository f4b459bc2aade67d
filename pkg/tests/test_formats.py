import numpy as np
import pytest

from conftest import order
from lockeryield.core import ConfigError, DEFAULT_OPTIONS, sort_events
from lockeryield.formats import (
    DataError,
    LockerRow,
    ingest_events,
    read_events,
    read_home,
    read_lockers,
    read_options,
    read_pmfs,
    write_events,
    write_home,
    write_lockers,
    write_options,
    write_pmfs,
)
from lockeryield.history import HomeDeliveries

HEADER = "locker_id,order_id,kind,ship_option,day,seq\n"


def test_event_file_bytes_and_roundtrip(tmp_path):
    evs = sort_events(order("o1", 2, -1, 0, 3, end="Return"))
    path = tmp_path / "e.csv"
    assert write_events(path, evs) == 3
    assert path.read_bytes() == (HEADER + "L,o1,Request,2,-1,0\nL,o1,Delivery,2,0,36000\n"
                                 "L,o1,Return,2,3,50000\n").encode()
    assert read_events(path) == evs


def test_ingest_sorts_and_skips_blank_lines(tmp_path):
    path = tmp_path / "e.csv"
    path.write_text(HEADER + "L,a,Delivery,1,1,100\n\nL,a,Request,1,0,5\nL,a,Pickup,1,1,200\n")
    res = ingest_events(path)
    assert [e.kind.value for e in res.events] == ["Request", "Delivery", "Pickup"]
    assert res.n_lines == 3 and res.diagnostics == []


def test_ingest_reports_every_problem(tmp_path):
    path = tmp_path / "e.csv"
    path.write_text(HEADER + "L,a,Request,1,0,5\n"
                             "L,a,Request,1,0,6\n"          # duplicate
                             "L,b,Teleport,1,0,0\n"         # bad kind
                             "L,c,Pickup,1,0,0\n"           # terminal with no delivery
                             "L,d,Request,7,0,0\n"          # option out of range
                             "L,e,Request,1,0,x\n")
    with pytest.raises(DataError) as info:
        ingest_events(path, n_options=4)
    diags = info.value.diagnostics
    assert len(diags) == 5
    assert any(":3:" in d and "duplicate" in d for d in diags)
    assert any(":4:" in d and "unknown kind" in d for d in diags)
    assert any(":6:" in d and "outside 1..4" in d for d in diags)
    res = ingest_events(path, n_options=4, skip_bad=True)
    assert {e.order_id for e in res.events} == {"a"} and res.n_dropped == 5


def test_header_and_missing_file(tmp_path):
    bad = tmp_path / "e.csv"
    bad.write_text("order_id,kind\n")
    with pytest.raises(DataError, match="header"):
        ingest_events(bad)
    with pytest.raises(DataError, match="not found"):
        ingest_events(tmp_path / "nope.csv")


def test_home_roundtrip(tmp_path):
    home = HomeDeliveries.from_records([("10001", "2018-W23", 1, 42), ("10001", "2018-W23", 2, 7.5)])
    path = tmp_path / "home.csv"
    write_home(path, home)
    assert path.read_text() == "zip,iso_week,ship_option,count\n10001,2018-W23,1,42\n10001,2018-W23,2,7.5\n"
    assert read_home(path).records() == home.records()
    path.write_text("zip,iso_week,ship_option,count\nZ,2018-23,1,4\nZ,2018-W01,1,-1\n")
    with pytest.raises(DataError) as info:
        read_home(path)
    assert len(info.value.diagnostics) == 2


def test_lockers_and_options(tmp_path):
    path = tmp_path / "lockers.csv"
    write_lockers(path, [LockerRow("L000", "10001", 40)])
    assert path.read_text() == "locker_id,zip,capacity\nL000,10001,40\n"
    assert read_lockers(path) == [LockerRow("L000", "10001", 40)]
    path.write_text("locker_id,zip,capacity\nL000,10001,0\n")
    with pytest.raises(ConfigError):
        read_lockers(path)
    opath = tmp_path / "options.csv"
    write_options(opath, DEFAULT_OPTIONS)
    assert opath.read_text().splitlines()[:2] == ["id,label,speed_rank", "1,next-day,1"]
    assert read_options(opath) == DEFAULT_OPTIONS
    assert read_options(tmp_path / "absent.csv") == DEFAULT_OPTIONS


def test_pmf_roundtrip(tmp_path):
    q = np.array([[0.5, 0.5, 0, 0, 0, 0, 0], [0.1, 0.2, 0.3, 0.4, 0, 0, 0]])
    path = tmp_path / "dwell.csv"
    write_pmfs(path, {"L": q})
    assert path.read_text().splitlines()[1] == "L,1,0.5,0.5,0.0,0.0,0.0,0.0,0.0"
    assert np.array_equal(read_pmfs(path)["L"], q)
