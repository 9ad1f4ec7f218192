"""Best-effort (neglected) synchronization trades fidelity for latency.

Participants free-run and consume the latest-arrived value. With a fast
link the result tracks the monolithic reference closely; over a 200 ms WAN
the controller acts on ~20-step-old voltage readings and the trajectory
visibly lags. The causality checker flags consumptions that beat the
nominal link latency (possible once jitter delivers below base delay).
"""

import json

import numpy as np

from fedkit import detect_causality_violations, monolithic_oracle, parse_experiment, run_best_effort
from fedkit.scenarios import scenario_text


def run_with(base_ms, jitter_ms=0):
    doc = json.loads(scenario_text("demo_twosite"))
    for site in doc["sites"]:
        for link in site["links"]:
            link["base_delay_ms"] = base_ms
            link["jitter"] = {"type": "uniform", "amplitude_ms": jitter_ms} if jitter_ms else "none"
            link["loss"] = 0.0
    return parse_experiment(doc)


def main():
    topic = "predis.feeder.v_load"
    ref_exp = run_with(0)
    oracle = monolithic_oracle(ref_exp, topics=[topic])
    ref = dict(zip(oracle["t_ns"].tolist(), oracle[topic].tolist()))

    for base, jitter in ((0, 0), (50, 20), (200, 100)):
        result = run_best_effort(run_with(base, jitter))
        t, v = result.topic_series(topic)
        diffs = np.array([val - ref[int(tt)] for tt, val in zip(t, v) if int(tt) in ref])
        rms = float(np.sqrt(np.mean(diffs**2)))
        staleness = float(np.median(result.staleness_steps)) if result.staleness_steps else 0.0
        violations = detect_causality_violations(result)
        print(f"link {base:>3} ms +/-{jitter:>3}: RMS vs oracle {rms:8.4f} V, "
              f"median staleness {staleness:5.1f} steps, causality violations {len(violations)}")


if __name__ == "__main__":
    main()
