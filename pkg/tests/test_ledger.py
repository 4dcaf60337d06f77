import json
import math
import statistics
from datetime import date, datetime, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridhedonic.errors import ConfigurationError, ConversionError, InvalidInputError
from gridhedonic.grid import AnnouncementGroup, Coord, Region, Wave
from gridhedonic.ledger import (
    MapMetadata,
    RateTable,
    Transaction,
    build_event_samples,
    convert_to_usd,
    convert_transactions,
    ingest_transactions,
    panel_to_csv,
    read_panel_csv,
    summary_stats,
    week_index,
    week_start,
    winsorize,
    write_panel_csv,
)

UTC = timezone.utc


def ts(iso: str) -> datetime:
    return datetime.fromisoformat(iso).replace(tzinfo=UTC)


def make_tx(tx_id, when, parcels, token="ETH", price=2.0, premium=False,
            mint_waves=None, usd=None):
    parcels = tuple(parcels)
    return Transaction(
        tx_id=tx_id,
        timestamp=ts(when) if isinstance(when, str) else when,
        parcels=parcels,
        premium=premium,
        token=token,
        price_token=price,
        price_usd=usd,
        parcel_mint_waves=tuple(mint_waves or [1] * len(parcels)),
    )


def flat_rates(days, eth=1500.0, sand=1.0, weth=1450.0, btc=40000.0):
    rates = {}
    for day in days:
        rates[("ETH", day)] = eth
        rates[("SAND", day)] = sand
        rates[("WETH", day)] = weth
        rates[("BTC", day)] = btc
    return RateTable(rates)


def span(first: date, last: date):
    out = []
    d = first
    while d <= last:
        out.append(d)
        d = date.fromordinal(d.toordinal() + 1)
    return out


def one_group(announce=date(2021, 1, 26), region_rect=(100, 100, 109, 109), gid=1):
    region = Region.from_rects([region_rect])
    wave = Wave(10, gid, "w", announce, announce, region)
    return AnnouncementGroup(gid, announce, (wave,))


# ---------------------------------------------------------------------------
# winsorization
# ---------------------------------------------------------------------------


def test_winsorize_degenerate_distribution():
    vals = np.full(50, 3.2)
    assert np.array_equal(winsorize(vals), vals)


def test_winsorize_idempotent_at_integral_quantile_positions():
    # with n = 2001 both 0.001*(n-1) and 0.999*(n-1) are integers, so the
    # clip thresholds are order statistics and reapplication is a fixed point
    rng = np.random.default_rng(5)
    vals = rng.lognormal(4, 1, size=2001)
    once = winsorize(vals)
    assert np.array_equal(winsorize(once), once)


def test_winsorize_nearly_idempotent_in_general():
    rng = np.random.default_rng(6)
    vals = rng.lognormal(4, 1, size=10_000)
    once = winsorize(vals)
    np.testing.assert_allclose(winsorize(once), once, rtol=1e-4)


def test_winsorize_matches_sort_based_oracle():
    rng = np.random.default_rng(7)
    vals = rng.lognormal(6, 1.5, size=10_000)
    got = winsorize(vals)

    s = np.sort(vals)
    n = len(s)

    def interp_quantile(q):
        pos = q * (n - 1)
        lo = math.floor(pos)
        frac = pos - lo
        return s[lo] + frac * (s[min(lo + 1, n - 1)] - s[lo])

    lo_t, hi_t = interp_quantile(0.001), interp_quantile(0.999)
    expected = np.minimum(np.maximum(vals, lo_t), hi_t)
    np.testing.assert_allclose(got, expected, rtol=0, atol=0)


def test_winsorize_rejects_empty():
    with pytest.raises(InvalidInputError):
        winsorize([])


@given(st.lists(st.floats(min_value=0.01, max_value=1e6), min_size=2, max_size=200))
@settings(max_examples=60)
def test_winsorize_preserves_weak_order_and_interior(vals):
    arr = np.array(vals)
    out = winsorize(arr)
    order = np.argsort(arr, kind="stable")
    assert np.all(np.diff(out[order]) >= -1e-12)
    lo, hi = np.quantile(arr, [0.001, 0.999])
    interior = (arr > lo) & (arr < hi)
    assert np.array_equal(out[interior], arr[interior])


# ---------------------------------------------------------------------------
# conversion
# ---------------------------------------------------------------------------


def test_convert_eth_sale():
    rates = flat_rates([date(2021, 1, 20)])
    tx = make_tx("a", "2021-01-20T10:00:00", [Coord(1, 1)], price=2.0)
    assert convert_to_usd(tx, rates).price_usd == 3000.0


def test_convert_regular_price_in_sand_at_unit_rate():
    rates = flat_rates([date(2021, 1, 20)], sand=1.0)
    tx = make_tx("a", "2021-01-20T10:00:00", [Coord(1, 1)], token="SAND", price=1011.0)
    assert convert_to_usd(tx, rates).price_usd == 1011.0


def test_convert_missing_rate_names_date_and_token():
    rates = flat_rates([date(2021, 1, 20)])
    tx = make_tx("a", "2021-01-21T10:00:00", [Coord(1, 1)])
    with pytest.raises(ConversionError) as err:
        convert_to_usd(tx, rates)
    assert "ETH" in str(err.value) and "2021-01-21" in str(err.value)


def test_convert_mixed_fixture_matches_recomputation():
    day = date(2021, 1, 20)
    table = {"ETH": 1432.5, "SAND": 0.77, "WETH": 1401.25, "BTC": 35000.0}
    rates = RateTable({(tok, day): val for tok, val in table.items()})
    fixture = [("ETH", 1.25), ("SAND", 1011.0), ("WETH", 0.8), ("ETH", 3.0)]
    txs = [
        make_tx(f"t{i}", "2021-01-20T12:00:00", [Coord(i, i)], token=tok, price=amt)
        for i, (tok, amt) in enumerate(fixture)
    ]
    converted, rejections = convert_transactions(txs, rates)
    assert not rejections
    total = sum(t.price_usd for t in converted)
    expected = sum(amt * table[tok] for tok, amt in fixture)
    assert total == pytest.approx(expected, rel=1e-12)


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------

CREATOR = "0x" + "ab" * 20


def write_dump(tmp_path, rows):
    header = "tx_id,timestamp_iso8601,nft_ids,lot_size,premium,token,price_token,seller,buyer\n"
    path = tmp_path / "transactions.csv"
    path.write_text(header + "\n".join(rows) + "\n")
    return path


def metadata_for(coords, map_size=408):
    nfts = {x + y * map_size: [x, y, 1] for x, y in coords}
    return MapMetadata(
        map_size=map_size,
        creator_address=CREATOR,
        nfts={k: (Coord(v[0], v[1]), v[2]) for k, v in nfts.items()},
    )


def test_ingest_fixture_applies_all_filters(tmp_path):
    meta = metadata_for([(1, 1), (2, 2), (3, 3)])
    nft = 1 + 1 * 408
    good = f"2021-01-20T10:00:00,{nft},1,0,ETH,1.5,0xseller,0xbuyer"
    rows = [
        f"t01,{good}",
        f"t02,2021-01-20T11:00:00,{nft},1,0,ETH,0,0xs,0xb",           # zero payment
        f"t03,2021-01-20T12:00:00,{nft},1,0,USDC,100,0xs,0xb",        # bad token
        f"t04,2021-01-20T13:00:00,{nft},1,0,ETH,1.0,{CREATOR},0xb",   # primary sale
        f"t05,{good}",
        f"t06,2021-01-20T14:00:00,{2 + 2 * 408},1,1,SAND,900,0xs,0xb",
        f"t07,2021-01-20T15:00:00,{3 + 3 * 408},1,0,WETH,0.5,0xs,0xb",
        f"t08,{good}",
        f"t09,{good}",
        f"t10,{good}",
    ]
    path = write_dump(tmp_path, rows)
    kept, rejections = ingest_transactions(path, meta)
    assert len(kept) == 7
    assert len(rejections) == 3
    reasons = {r.tx_id: r.reason for r in rejections}
    assert reasons["t02"] == "zero_payment"
    assert reasons["t03"].startswith("unsupported_token")
    assert reasons["t04"] == "primary_sale"


def test_ingest_passthrough_single_parcel(tmp_path):
    meta = metadata_for([(7, 9)])
    path = write_dump(
        tmp_path, [f"t01,2021-01-20T10:00:00,{7 + 9 * 408},1,1,ETH,2.25,0xs,0xb"]
    )
    kept, rejections = ingest_transactions(path, meta)
    assert not rejections
    (tx,) = kept
    assert tx.lot_size == 1
    assert tx.parcels == (Coord(7, 9),)
    assert tx.premium is True
    assert tx.price_token == 2.25
    assert tx.timestamp.tzinfo is not None


def test_ingest_rejects_unknown_nft_and_malformed(tmp_path):
    meta = metadata_for([(1, 1)])
    rows = [
        "t01,2021-01-20T10:00:00,999999,1,0,ETH,1.0,0xs,0xb",    # unknown id
        "t02,not-a-date,409,1,0,ETH,1.0,0xs,0xb",                # bad timestamp
        "t03,2021-01-20T10:00:00,409,2,0,ETH,1.0,0xs,0xb",       # lot mismatch
    ]
    path = write_dump(tmp_path, rows)
    kept, rejections = ingest_transactions(path, meta)
    assert not kept
    assert [r.tx_id for r in rejections] == ["t01", "t02", "t03"]


def test_metadata_json_round_trip(tmp_path):
    payload = {
        "map_size": 408,
        "creator_address": CREATOR,
        "nfts": {"417": [9, 1, 4]},
    }
    path = tmp_path / "map.json"
    path.write_text(json.dumps(payload))
    meta = MapMetadata.from_json(path)
    assert meta.resolve(417) == (Coord(9, 1), 4)


def test_metadata_from_waves_uses_grid_ids():
    region = Region.from_rects([[5, 5, 6, 5]])
    wave = Wave(3, 1, "w", date(2021, 1, 1), date(2021, 1, 2), region)
    meta = MapMetadata.from_waves([wave], map_size=100)
    assert meta.resolve(5 + 5 * 100) == (Coord(5, 5), 3)
    assert meta.resolve(6 + 5 * 100) == (Coord(6, 5), 3)


# ---------------------------------------------------------------------------
# event-window panel
# ---------------------------------------------------------------------------


def test_window_spans_seven_days_each_side_inclusive():
    group = one_group(announce=date(2021, 1, 26))
    days = span(date(2021, 1, 10), date(2021, 2, 10))
    rates = flat_rates(days)
    txs = [
        make_tx("in_lo", "2021-01-19T00:00:00", [Coord(1, 1)]),
        make_tx("in_hi", "2021-02-02T23:59:59", [Coord(1, 1)]),
        make_tx("out_lo", "2021-01-18T23:59:59", [Coord(1, 1)]),
        make_tx("out_hi", "2021-02-03T00:00:00", [Coord(1, 1)]),
    ]
    result = build_event_samples(txs, [group], rates)
    assert sorted(s.tx_id for s in result.samples) == ["in_hi", "in_lo"]
    rejected = {r.tx_id for r in result.rejections}
    assert rejected == {"out_lo", "out_hi"}


def test_post_boundary_is_announcement_midnight_utc():
    group = one_group(announce=date(2021, 1, 26))
    rates = flat_rates(span(date(2021, 1, 19), date(2021, 2, 2)))
    txs = [
        make_tx("pre", "2021-01-25T23:59:59", [Coord(1, 1)]),
        make_tx("at", "2021-01-26T00:00:00", [Coord(1, 1)]),
    ]
    result = build_event_samples(txs, [group], rates)
    flags = {s.tx_id: s.post for s in result.samples}
    assert flags == {"pre": False, "at": True}


def test_fifty_transactions_match_hand_enumeration():
    announce = date(2021, 1, 26)
    group = one_group(announce=announce)
    rates = flat_rates(span(date(2021, 1, 10), date(2021, 2, 10)))
    # offsets -12..+12 days around the announcement, two per offset
    txs = []
    expected_post = {}
    expected_in = set()
    for k, offset in enumerate(range(-12, 13)):
        for j in range(2):
            tx_id = f"t{k:02d}{j}"
            day = date.fromordinal(announce.toordinal() + offset)
            when = datetime(day.year, day.month, day.day, 6 * (j + 1), tzinfo=UTC)
            txs.append(make_tx(tx_id, when, [Coord(1 + j, 1)]))
            if abs(offset) <= 7:
                expected_in.add(tx_id)
                expected_post[tx_id] = offset >= 0
    result = build_event_samples(txs, [group], rates)
    assert {s.tx_id for s in result.samples} == expected_in
    assert {s.tx_id: s.post for s in result.samples} == expected_post


def test_overlapping_windows_rejected():
    g1 = one_group(announce=date(2021, 1, 26), gid=1)
    g2 = one_group(announce=date(2021, 2, 5), region_rect=(200, 200, 205, 205), gid=2)
    rates = flat_rates(span(date(2021, 1, 15), date(2021, 2, 15)))
    with pytest.raises(ConfigurationError):
        build_event_samples([], [g1, g2], rates)


def test_scattered_bundle_excluded():
    group = one_group()
    rates = flat_rates(span(date(2021, 1, 19), date(2021, 2, 2)))
    txs = [
        make_tx("ok", "2021-01-24T10:00:00", [Coord(1, 1), Coord(2, 1)], mint_waves=[1, 1]),
        make_tx("ok2", "2021-01-24T12:00:00", [Coord(9, 9)]),
        make_tx("scatter", "2021-01-24T11:00:00", [Coord(1, 1), Coord(300, 300)],
                mint_waves=[1, 2]),
    ]
    result = build_event_samples(txs, [group], rates)
    assert sorted(s.tx_id for s in result.samples) == ["ok", "ok2"]
    assert result.rejections[0].reason == "scattered_bundle"


def test_missing_btc_rate_rejects_record():
    group = one_group()
    day = date(2021, 1, 24)
    rates = RateTable({("ETH", day): 1500.0})  # no BTC row
    txs = [make_tx("x", "2021-01-24T10:00:00", [Coord(1, 1)])]
    result = build_event_samples(txs, [group], rates)
    assert not result.samples
    assert "missing_rate" in result.rejections[0].reason


def test_group_filter():
    g1 = one_group(announce=date(2021, 1, 26), gid=1)
    g2 = one_group(announce=date(2021, 3, 1), region_rect=(200, 200, 205, 205), gid=2)
    rates = flat_rates(span(date(2021, 1, 15), date(2021, 3, 15)))
    txs = [
        make_tx("a1", "2021-01-24T10:00:00", [Coord(1, 1)]),
        make_tx("a2", "2021-01-24T11:00:00", [Coord(2, 1)]),
        make_tx("b1", "2021-03-02T10:00:00", [Coord(1, 2)]),
        make_tx("b2", "2021-03-02T11:00:00", [Coord(2, 2)]),
    ]
    result = build_event_samples(txs, [g1, g2], rates, groups_filter=[2])
    assert {s.group_id for s in result.samples} == {2}
    assert {r.tx_id for r in result.rejections} == {"a1", "a2"}


def test_near_recomputable_from_sample_distances():
    group = one_group(region_rect=(100, 100, 101, 101))
    rates = flat_rates(span(date(2021, 1, 19), date(2021, 2, 2)))
    rng = np.random.default_rng(11)
    txs = [
        make_tx(f"t{i}", f"2021-01-{20 + (i % 10):02d}T10:00:00",
                [Coord(int(rng.integers(0, 90)), int(rng.integers(0, 90)))])
        for i in range(30)
    ]
    samples = build_event_samples(txs, [group], rates).samples
    median = statistics.median(s.distance for s in samples)
    for s in samples:
        assert s.near == (s.distance < median)
        assert s.log_distance == pytest.approx(math.log(s.distance), abs=0)


def test_price_usd_invariant_to_conversion_order():
    group = one_group()
    rates = flat_rates(span(date(2021, 1, 19), date(2021, 2, 2)))
    txs = [
        make_tx("a", "2021-01-24T10:00:00", [Coord(1, 1)], token="SAND", price=900.0),
        make_tx("b", "2021-01-25T10:00:00", [Coord(2, 2)], token="WETH", price=2.0),
        make_tx("c", "2021-01-28T10:00:00", [Coord(3, 3)], token="ETH", price=1.0),
    ]
    converted, _ = convert_transactions(txs, rates)
    direct = build_event_samples(txs, [group], rates).samples
    pre = build_event_samples(converted, [group], rates).samples
    assert [s.log_price for s in direct] == [s.log_price for s in pre]


def test_winsorization_applied_across_pooled_sample():
    group = one_group()
    rates = flat_rates(span(date(2021, 1, 19), date(2021, 2, 2)), eth=1.0)
    prices = np.concatenate([np.full(200, 100.0), [1e9], [1e-9]])
    txs = [
        make_tx(f"t{i:03d}", f"2021-01-{20 + (i % 10):02d}T10:00:00",
                [Coord(1 + (i % 5), 1)], price=float(p))
        for i, p in enumerate(prices)
    ]
    samples = build_event_samples(txs, [group], rates).samples
    got = np.exp(sorted(s.log_price for s in samples))
    expected = np.sort(winsorize(prices))
    np.testing.assert_allclose(got, expected, rtol=1e-12)


def test_week_index_round_trip():
    d = date(2021, 10, 28)
    w = week_index(d)
    monday = week_start(w)
    assert monday.weekday() == 0
    assert monday <= d <= date.fromordinal(monday.toordinal() + 6)


# ---------------------------------------------------------------------------
# summary statistics
# ---------------------------------------------------------------------------


def test_summary_single_sample_row(cell_means):
    from conftest import make_sample

    sample = make_sample(log_price=math.log(120.0), distance=50.0, group_id=3)
    table = summary_stats([sample])
    row = table.loc[3]
    assert row["obs"] == 1
    assert row["price_mean"] == pytest.approx(120.0)
    assert row["distance_mean"] == 50.0
    assert row["distance_median"] == 50.0
    assert table.loc["All", "obs"] == 1


def test_summary_two_groups_hand_computed():
    from conftest import make_sample

    samples = [
        make_sample(log_price=math.log(100.0), distance=10, group_id=1, paid_sand=True),
        make_sample(log_price=math.log(300.0), distance=30, group_id=1),
        make_sample(log_price=math.log(50.0), distance=5, group_id=2, premium=True,
                    paid_weth=True, log_lot_size=math.log(9.0)),
    ]
    table = summary_stats(samples)
    g1 = table.loc[1]
    assert g1["obs"] == 2
    assert g1["price_mean"] == pytest.approx(200.0)
    assert g1["price_std"] == pytest.approx(statistics.stdev([100.0, 300.0]))
    assert g1["distance_median"] == 20.0
    assert g1["sand_share"] == 0.5
    g2 = table.loc[2]
    assert g2["premium_share"] == 1.0
    assert g2["weth_share"] == 1.0
    assert g2["lot_size_mean"] == pytest.approx(9.0)
    assert table.loc["All", "obs"] == 3
    assert table.loc["All", "price_mean"] == pytest.approx((100 + 300 + 50) / 3)


def test_summary_schema_matches_expected_columns():
    from conftest import make_sample

    table = summary_stats([make_sample(), make_sample()])
    assert list(table.columns) == [
        "obs", "price_mean", "price_std", "distance_mean", "distance_median",
        "lot_size_mean", "premium_share", "sand_share", "weth_share",
    ]


# ---------------------------------------------------------------------------
# panel export
# ---------------------------------------------------------------------------


def test_panel_csv_round_trip(tmp_path):
    from conftest import make_sample

    samples = [
        make_sample(log_price=1.234, distance=17.5, near=True, post=True,
                    paid_sand=True, group_id=4, mint_wave_id=6),
        make_sample(log_price=-0.5, distance=200.0, multi=True, premium=True),
    ]
    path = tmp_path / "panel.csv"
    write_panel_csv(samples, path)
    assert read_panel_csv(path) == samples
    header = path.read_text().splitlines()[0]
    assert header == (
        "tx_id,group_id,log_price,distance,log_distance,near,post,multi,"
        "log_lot_size,premium,paid_sand,paid_weth,log_btc,mint_wave_id,day,week"
    )


def test_panel_csv_deterministic(tmp_path):
    from conftest import make_sample

    samples = [make_sample(log_price=0.1 * i) for i in range(5)]
    assert panel_to_csv(samples) == panel_to_csv(samples)
