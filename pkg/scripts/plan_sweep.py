"""Planning experiment: bound sweep per operation, normal vs restart.

For every operation in a project, asks the bounded planner for a plan
toward the operation goal at increasing bounds, from the settled initial
state under refined guards.  Shows the bound where a plan first appears,
that the found length never shrinks at looser bounds (minimality), and
what changes when restart-only abilities are allowed in.

  python3 scripts/plan_sweep.py projects/bolt_cover --max-bound 8
"""

import argparse

from sp.planner import plan
from sp.project import load_project
from sp.synthesis import synthesize


def sweep(model, goal, allowed, max_bound):
    found = {}
    for bound in range(1, max_bound + 1):
        p = plan(model, [goal], model.initial_state(),
                 bound=bound, allowed_events=allowed)
        found[bound] = None if p is None else tuple(p.events)
    return found


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("project", nargs="?", default=None)
    ap.add_argument("--max-bound", type=int, default=8)
    args = ap.parse_args()

    proj = load_project(args.project)
    spec = proj.spec
    model = synthesize(spec.model, spec.forbidden).model
    restart = spec.abilities.restart_only_events()
    normal = frozenset(
        t.event for t in model.transitions
        if t.klass.controllable and t.event not in restart
    )

    for op in spec.operations:
        print(f"operation {op.name}: goal {op.goal.describe()}")
        for label, allowed in (("normal", normal), ("with restart", None)):
            found = sweep(model, op.goal, allowed, args.max_bound)
            first = next((b for b, p in found.items() if p is not None), None)
            if first is None:
                print(f"  {label:>12}: no plan up to bound {args.max_bound}")
                continue
            lengths = sorted({len(p) for p in found.values() if p is not None})
            print(f"  {label:>12}: first plan at bound {first}, "
                  f"length {lengths} across bounds: "
                  f"{', '.join(found[first])}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
