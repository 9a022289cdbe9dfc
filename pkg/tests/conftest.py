import json

import pytest

from scootpriv.feed_ingest import ScooterObservation, Snapshot
from scootpriv.utility_eval import Region


def make_feed_doc(bikes, last_updated=1_700_000_000, ttl=60, extra=None):
    doc = {
        "last_updated": last_updated,
        "ttl": ttl,
        "data": {
            "bikes": [
                {
                    "bike_id": b[0],
                    "lat": b[1],
                    "lon": b[2],
                    "is_reserved": b[3] if len(b) > 3 else False,
                    "is_disabled": b[4] if len(b) > 4 else False,
                }
                for b in bikes
            ]
        },
    }
    if extra:
        doc.update(extra)
    return json.dumps(doc).encode()


def make_snapshot(bikes, captured_at=1_700_000_000, ttl_s=60, provider="test"):
    return Snapshot(
        provider=provider,
        captured_at=captured_at,
        ttl_s=ttl_s,
        observations=tuple(
            ScooterObservation(
                scooter_id=b[0],
                lat=b[1],
                lon=b[2],
                is_reserved=b[3] if len(b) > 3 else False,
                is_disabled=b[4] if len(b) > 4 else False,
            )
            for b in bikes
        ),
    )


def square_region(name="square", lat0=0.0, lon0=0.0, side_deg=1.0):
    """Axis-aligned square with SW corner at (lat0, lon0)."""
    return Region(
        name=name,
        rings=(
            (
                (lat0, lon0),
                (lat0, lon0 + side_deg),
                (lat0 + side_deg, lon0 + side_deg),
                (lat0 + side_deg, lon0),
                (lat0, lon0),
            ),
        ),
    )


@pytest.fixture
def unit_square():
    return square_region()


@pytest.fixture
def square_with_hole():
    outer = (
        (0.0, 0.0),
        (0.0, 10.0),
        (10.0, 10.0),
        (10.0, 0.0),
        (0.0, 0.0),
    )
    hole = (
        (4.0, 4.0),
        (4.0, 6.0),
        (6.0, 6.0),
        (6.0, 4.0),
        (4.0, 4.0),
    )
    return Region(name="holed", rings=(outer, hole))
