"""Run the simulated bolt-cover cell and narrate the controller's log.

Drives the supervisor against the scripted device nodes on a virtual
clock, optionally injecting one of the two canonical faults, and prints
every controller event as it lands.  The fault flows script the same
operator calls the HTTP console exposes: restart mode, estimated-state
resync, operation reset.

  python3 scripts/cell_demo.py projects/bolt_cover --fault displace
"""

import argparse
import json

from sp.bus import Broker
from sp.project import load_project
from sp.runner import Executor
from sp.simnodes import FAULT_DISPLACE, FAULT_WITHHOLD, SimCell
from sp.synthesis import synthesize


class Demo:
    def __init__(self, spec, model, quiet):
        self.now = 0
        self.quiet = quiet
        self.printed = 0
        self.broker = Broker(now_ms=lambda: self.now)
        self.cell = SimCell(spec, self.broker)
        self.exe = Executor(spec, model, self.broker)

    def tick(self):
        self.now += 10
        self.cell.step(self.now)
        self.exe.run_tick(self.now)
        if not self.quiet:
            for rec in self.exe.log.since(self.printed):
                self.printed = rec.seq + 1
                data = json.dumps(rec.data, sort_keys=True, ensure_ascii=False)
                print(f"  t{rec.tick:<4} {rec.kind:<18} {data}")

    def until(self, cond, limit=2000):
        for _ in range(limit):
            if cond():
                return True
            self.tick()
        return cond()

    def started(self, ability):
        return any(
            r.data["ability"] == ability
            for r in self.exe.log.of_kind("ability-started")
        )


def done(d: Demo) -> bool:
    return all(ph == "done" for ph in d.exe.phases.values())


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("project", nargs="?", default=None)
    ap.add_argument("--fault", choices=["none", "displace", "withhold"],
                    default="none")
    ap.add_argument("--quiet", action="store_true", help="summary only")
    args = ap.parse_args()

    proj = load_project(args.project)
    spec = proj.spec
    model = synthesize(spec.model, spec.forbidden).model
    d = Demo(spec, model, args.quiet)

    if args.fault == "withhold":
        # operator acks the bolt placement without doing it
        d.cell.operator.set_fault(FAULT_WITHHOLD)
    if args.fault == "displace":
        d.until(lambda: d.started("moveToPosition(BP)"))
        for _ in range(15):
            d.tick()
        d.cell.ur10.displace()
        d.exe.note_fault({"node": "ur10", "kind": FAULT_DISPLACE})

    if args.fault == "none":
        d.until(lambda: done(d))
    else:
        if not d.until(lambda: d.exe.advisory is not None):
            print("no advisory raised, nothing to recover from")
            return 1
        print(f"-- advisory: {d.exe.advisory}")
        d.exe.enter_restart()
        if args.fault == "withhold":
            d.exe.sync_estimated({"b̂": "empty"})
            d.cell.operator.clear_fault(FAULT_WITHHOLD)
        d.exe.reset_operation("TightenBoltPair")
        d.until(lambda: d.exe.phases["TightenBoltPair"] == "idle")
        d.exe.exit_restart()
        d.until(lambda: done(d))

    ok = done(d)
    print(f"-- {'complete' if ok else 'INCOMPLETE'} after {d.exe.tick_index} "
          f"ticks ({d.now} virtual ms)")
    print(f"   operations: {d.exe.phases}")
    print(f"   world: bolts {d.cell.world.bolts}")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
