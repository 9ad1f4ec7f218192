"""The hub's PaaS command gate: a curated selection, never full control.

Each site's allow-list decides which commands its operators may issue.
Denied commands fail with PermissionDenied and provably change nothing:
the state fingerprint (run states + store hashes) is identical before and
after. Replication into the consortium store is idempotent per record.
"""

import json

from fedkit import Command, CommandKind, Hub, PermissionDenied, parse_experiment
from fedkit.scenarios import scenario_text


def main():
    doc = json.loads(scenario_text("demo_twosite"))
    doc["sites"][1]["allow_list"] = ["get_status", "query_trace"]  # read-only visitor site
    exp = parse_experiment(doc)
    hub = Hub(exp.registry, wall_clock=lambda: 0)
    hub.start_run("gating-demo")

    owner = hub.register_operator("alice", "predis")
    visitor = hub.register_operator("bob", "prismes")

    result = hub.execute_command(owner, Command(CommandKind.SET_VALUE,
                                                {"topic": "prismes.ctrl.v_set", "value": 390.0}))
    print(f"owner set_value: ok={result.ok} -> applied at {result.data['applied']}")

    for kind in (CommandKind.START_EXPERIMENT, CommandKind.SET_VALUE, CommandKind.STOP_EXPERIMENT):
        before = hub.state_fingerprint()
        try:
            hub.execute_command(visitor, Command(kind, {"topic": "prismes.ctrl.v_set", "value": 0.0}))
            print(f"visitor {kind.value}: unexpectedly allowed!")
        except PermissionDenied as exc:
            unchanged = hub.state_fingerprint() == before
            print(f"visitor {kind.value}: denied ({exc}); state unchanged: {unchanged}")

    status = hub.execute_command(visitor, Command(CommandKind.GET_STATUS))
    print(f"visitor get_status (granted): {status.data}")


if __name__ == "__main__":
    main()
