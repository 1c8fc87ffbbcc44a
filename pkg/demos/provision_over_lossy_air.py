"""Walk through one gateway provisioning a sensor across a lossy radio.

Every frame the gateway sends is an ordinary encrypted WiFi frame; the sensor
only sees its destination MAC and its length.  We print what the sensor
reconstructs round by round while the gateway escalates its redundancy.

    python demos/provision_over_lossy_air.py [loss] [seed]
"""

import random
import sys

from homesense import Credentials, GatewayProvisionState, KeyPair, SensorProvisionState
from homesense.provisioner import EventKind
from homesense.simnet import Channel, Delivery, LossModel

loss = float(sys.argv[1]) if len(sys.argv) > 1 else 0.8
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 1

keys = KeyPair.derive(b"shared at manufacture")
creds = Credentials(b"home-wifi", b"correct horse battery staple")
gateway = GatewayProvisionState(keys, id=3, expected_sensors={"kitchen"})
sensor = SensorProvisionState(keys, id=3)
air = Channel("air", LossModel(loss, seed))
iv_rng = random.Random(f"{seed}/iv")

print(f"frame loss {loss:.0%}, credentials {len(creds.to_bytes())} bytes")
for rnd in range(1, 21):
    index = gateway.loss_index
    frames = gateway.emit_round(creds, now=1_700_000_000 + rnd, rng=iv_rng)
    heard = 0
    outcome = "waiting"
    for frame in frames:
        if air.deliver(frame, "kitchen") is Delivery.DROPPED:
            continue
        heard += 1
        ev = sensor.ingest(frame)
        if ev.kind is not EventKind.BUFFERED and ev.kind is not EventKind.IGNORED:
            outcome = ev.kind.value
            if ev.kind is EventKind.CREDENTIALS_RECOVERED:
                break
    print(f"round {rnd:2d}  loss index {index}  sent {len(frames):3d}  heard {heard:3d}  -> {outcome}")
    if sensor.credentials is not None:
        print(f"recovered ssid={sensor.credentials.ssid.decode()!r}")
        print(gateway.note_connected("kitchen"))
        break
else:
    print("sensor never recovered; it would fall back to manual setup")
