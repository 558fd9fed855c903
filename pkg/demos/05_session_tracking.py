"""Stateful tracking through persistent sessions.

A curious origin stores a persistent session, then recognizes the returning
visitor by probing stored session ids. On compliant browsers clearing site
data breaks the link; on the two quirky mobile browsers it survives until a
full application-data wipe.

Run: python demos/05_session_tracking.py
"""

import json
import random

from emeforge.audit import track_sessions
from emeforge.cdm import SessionType
from emeforge.server import make_license_server
from emeforge.useragent import UserAgent, get_profile

ORIGIN = "https://curious.example"
rng = random.Random(99)


def visit(ua: UserAgent) -> str:
    key_id = rng.randbytes(16)
    server, _ = make_license_server(
        policy="can_play=true&can_persist=true",
        content_keys={key_id: rng.randbytes(16)},
        rng=rng,
    )
    trace = ua.run_license_flow(
        ORIGIN, "default", server, [key_id], SessionType.PERSISTENT
    )
    stored = [
        json.loads(r.body)["session_id"]
        for r in trace.records
        if r.kind == "SESSION_STORED"
    ]
    return stored[0]


for preset in ("chrome_desktop_windows", "samsung_android"):
    ua = UserAgent(get_profile(preset), rng=random.Random(1))
    session_id = visit(ua)
    print(f"== {preset} ==")
    print(f"  first visit stored session {session_id}")

    probe = [rng.randbytes(16).hex() for _ in range(99)] + [session_id]
    matches = track_sessions(probe, ua, ORIGIN, "default", now=1)
    print(f"  probe of 100 ids on return visit -> matched {matches}")

    ua.clear_site_data(ORIGIN, "default")
    matches = track_sessions([session_id], ua, ORIGIN, "default", now=1)
    print(f"  after clearing cookies+site data -> matched {matches or 'nothing'}")

    ua.wipe_all_app_data()
    matches = track_sessions([session_id], ua, ORIGIN, "default", now=1)
    print(f"  after full app-data wipe         -> matched {matches or 'nothing'}")
    print()
