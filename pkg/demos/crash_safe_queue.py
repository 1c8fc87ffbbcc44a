"""Pull the plug on a sensor queue mid-write and show what survives.

A torn tail record is discarded on recovery and everything acknowledged before
the crash stays acknowledged.

    python demos/crash_safe_queue.py
"""

import tempfile
from pathlib import Path

from homesense import DataSample, DurableQueue
from homesense.durable_queue import encode_record

with tempfile.TemporaryDirectory() as tmp:
    log = Path(tmp) / "dylos.log"
    with DurableQueue.recover(log) as q:
        for t in range(10):
            q.push(DataSample("dylos-1", "pm25", 12.0 + t, 1_700_000_000 + 60 * t))
        batch = q.peek(4)
        print("gateway pulled", [s.value for _, s in batch])
        q.ack(len(batch))
        print(f"acked 4, {len(q)} left on disk")

    # the power dies halfway through appending the next sample
    torn = encode_record(DataSample("dylos-1", "pm25", 99.0, 1_700_000_600).to_bytes())
    with log.open("ab") as fh:
        fh.write(torn[: len(torn) // 2])
    print(f"appended {len(torn) // 2} of {len(torn)} bytes, then crashed")

    with DurableQueue.recover(log) as q:
        values = [s.value for _, s in q.peek(100)]
        print(f"after reboot: {len(q)} queued, values {values}")
        assert values == [16.0 + i for i in range(6)]
        q.push(DataSample("dylos-1", "pm25", 18.5, 1_700_000_660))
        print("new writes land after the repaired tail:", [s.value for _, s in q.peek(100)][-1])
