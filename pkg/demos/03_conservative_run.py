"""Conservative federation runs are deterministic regardless of the network.

The same two-site experiment runs over four very different link profiles,
from loopback to a lossy 200 ms WAN. The barrier waits for every routed
input before granting the next step, so the traces hash identically; link
quality costs wall-clock time, never fidelity.
"""

import json

from fedkit import parse_experiment, run_conservative
from fedkit.scenarios import scenario_text

PROFILES = {
    "loopback": {"base_delay_ms": 0, "jitter": "none", "loss": 0.0},
    "regional": {"base_delay_ms": 50, "jitter": {"type": "uniform", "amplitude_ms": 20}, "loss": 0.0},
    "wan": {"base_delay_ms": 200, "jitter": {"type": "uniform", "amplitude_ms": 100}, "loss": 0.0},
    "lossy": {"base_delay_ms": 15, "jitter": {"type": "uniform", "amplitude_ms": 5}, "loss": 0.01},
}


def main():
    hashes = {}
    for name, profile in PROFILES.items():
        doc = json.loads(scenario_text("demo_twosite"))
        for site in doc["sites"]:
            for link in site["links"]:
                link.update(profile)
        result = run_conservative(parse_experiment(doc))
        hashes[name] = result.store.content_hash()
        print(f"{name:>9}: rounds={len(result.grants)} rows={len(result.store)} sha256={hashes[name][:16]}...")
    identical = len(set(hashes.values())) == 1
    print(f"\nall traces byte-identical: {identical}")


if __name__ == "__main__":
    main()
