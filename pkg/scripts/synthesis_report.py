"""Synthesis experiment: state-space numbers and closed-loop safety.

Synthesizes the safety supervisor for a project, reports the reachable
and uncontrollably-doomed state counts, then explores the closed
supervisor+planner loop twice, with and without the refined guards, and
counts how often a forbidden predicate holds along the way.

  python3 scripts/synthesis_report.py projects/bolt_cover
"""

import argparse
import time

from sp.project import load_project
from sp.synthesis import closed_loop_states, synthesize


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("project", nargs="?", default=None)
    ap.add_argument("--dnf-limit", type=int, default=4000,
                    help="max blocked states to fold into a readable formula")
    args = ap.parse_args()

    proj = load_project(args.project)
    spec = proj.spec
    model = spec.model
    print(f"project {proj.name}: {len(model.variables)} variables, "
          f"{len(model.transitions)} transitions, "
          f"{len(spec.forbidden)} forbidden predicates")

    t0 = time.perf_counter()
    res = synthesize(model, spec.forbidden)
    dt = time.perf_counter() - t0
    print(f"synthesis: {len(res.reachable)} reachable, {len(res.bad)} doomed, "
          f"{res.safe_count} safe ({dt:.1f}s)")
    for ev in res.restricted_events:
        print(f"  restricted: {ev}")

    def hits(m):
        eng = m.engine()
        forb = [eng.compile_predicate(p) for p in spec.forbidden]
        seen = closed_loop_states(m, include_intermediate=True)
        settled = closed_loop_states(m)
        n = sum(1 for s in seen if any(f(s) for f in forb))
        return len(settled), len(seen), n

    for label, m in (("bare", model), ("refined", res.model)):
        settled, seen, n = hits(m)
        print(f"closed loop, {label} guards: {settled} settled / {seen} total "
              f"states, {n} forbidden")

    return 0


if __name__ == "__main__":
    raise SystemExit(main())
