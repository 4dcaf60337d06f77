import itertools
import math
from datetime import date

import pytest

from gridhedonic.ledger import EventSample, week_index

_ids = itertools.count()


def make_sample(
    *,
    log_price=1.0,
    distance=10.0,
    near=False,
    post=False,
    multi=False,
    group_id=1,
    day=date(2021, 3, 1),
    mint_wave_id=1,
    log_lot_size=0.0,
    premium=False,
    paid_sand=False,
    paid_weth=False,
    log_btc=10.0,
    tx_id=None,
) -> EventSample:
    """Panel-row factory with innocuous defaults for estimator tests."""
    return EventSample(
        tx_id=tx_id or f"tx{next(_ids):05d}",
        group_id=group_id,
        log_price=float(log_price),
        distance=float(distance),
        log_distance=math.log(distance),
        near=near,
        post=post,
        multi=multi,
        log_lot_size=float(log_lot_size),
        premium=premium,
        paid_sand=paid_sand,
        paid_weth=paid_weth,
        log_btc=float(log_btc),
        mint_wave_id=mint_wave_id,
        day=day,
        week=week_index(day),
    )


def saturated_panel(cell_means, reps=3, **kw):
    """One sample per rep per (near, post) cell, log price = the cell mean."""
    samples = []
    for (near, post), mean in cell_means.items():
        for _ in range(reps):
            samples.append(
                make_sample(log_price=mean, near=bool(near), post=bool(post), **kw)
            )
    return samples


@pytest.fixture
def cell_means():
    return {(0, 0): 1.0, (0, 1): 1.2, (1, 0): 1.1, (1, 1): 1.5}
