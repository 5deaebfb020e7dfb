"""Compiled execution engine.

States become tuples of small integers (indices into each variable's
domain) and every guard/action pair is compiled to a generated Python
function over such tuples.  Exhaustive reachability over ~1e5 states in
pure Python only works at that representation; the public model API
converts at the boundary.
"""

from __future__ import annotations

from typing import Callable, Iterable

from . import expr
from .model import (
    DivergenceError,
    DisabledTransitionError,
    Model,
    ModelError,
    StateVec,
    Transition,
    TransitionClass,
)

EncodedState = tuple[int, ...]


class CompiledTransition:
    __slots__ = ("ref", "guard", "apply", "writes", "order")

    def __init__(
        self,
        ref: Transition,
        guard: Callable[[EncodedState], bool],
        apply: Callable[[EncodedState], EncodedState],
        writes: tuple[int, ...],
        order: int,
    ):
        self.ref = ref
        self.guard = guard
        self.apply = apply
        self.writes = writes
        self.order = order

    def __repr__(self) -> str:
        return f"<compiled {self.ref.event}>"


class CompiledModel:
    def __init__(self, model: Model):
        self.model = model
        self.names: tuple[str, ...] = tuple(v.name for v in model.variables)
        self.index: dict[str, int] = {n: i for i, n in enumerate(self.names)}
        self.domains: tuple[tuple, ...] = tuple(v.domain.values for v in model.variables)
        self.val_index: tuple[dict, ...] = tuple(
            {val: i for i, val in enumerate(dom)} for dom in self.domains
        )
        ordered = sorted(model.transitions, key=lambda t: t.sort_key)
        self.transitions: list[CompiledTransition] = [
            self._compile(t, i) for i, t in enumerate(ordered)
        ]
        self.by_event: dict[str, CompiledTransition] = {
            ct.ref.event: ct for ct in self.transitions
        }
        self.controllables = [
            ct for ct in self.transitions if ct.ref.klass is TransitionClass.CONTROLLABLE
        ]
        self.syncs = [ct for ct in self.transitions if ct.ref.klass is TransitionClass.SYNC]
        self.finishes = [ct for ct in self.transitions if ct.ref.klass is TransitionClass.FINISH]
        # starting effects are applied explicitly right after their start
        # event, never as part of the general closure
        self.effects = [
            ct
            for ct in self.transitions
            if ct.ref.klass is TransitionClass.EFFECT and ct.ref.role != "effect_start"
        ]
        self.starting_effects: dict[str, list[CompiledTransition]] = {}
        for ct in self.transitions:
            if ct.ref.klass is TransitionClass.EFFECT and ct.ref.role == "effect_start":
                self.starting_effects.setdefault(ct.ref.ability, []).append(ct)
        self.initial: EncodedState = tuple(
            self.val_index[i][v.initial] for i, v in enumerate(model.variables)
        )

    # --- conversions ----------------------------------------------------

    def encode(self, s: StateVec) -> EncodedState:
        vals = s.values_tuple
        return tuple(self.val_index[i][vals[i]] for i in range(len(vals)))

    def decode(self, enc: EncodedState) -> StateVec:
        return StateVec(
            self.names,
            self.index,
            tuple(self.domains[i][enc[i]] for i in range(len(enc))),
        )

    # --- compilation ----------------------------------------------------

    def _pred_src(self, p: expr.Predicate, env: dict, counter: list[int]) -> str:
        if isinstance(p, expr.Top):
            return "True"
        if isinstance(p, expr.Bot):
            return "False"
        if isinstance(p, expr.Eq):
            i = self.index[p.var]
            k = self.val_index[i][p.value]
            if self.domains[i] == (False, True):
                return f"(s[{i}])" if k else f"(not s[{i}])"
            return f"(s[{i}] == {k})"
        if isinstance(p, expr.Ne):
            i = self.index[p.var]
            k = self.val_index[i][p.value]
            if self.domains[i] == (False, True):
                return f"(not s[{i}])" if k else f"(s[{i}])"
            return f"(s[{i}] != {k})"
        if isinstance(p, expr.EqVar):
            i, j = self.index[p.left], self.index[p.right]
            if self.domains[i] == self.domains[j]:
                return f"(s[{i}] == s[{j}])"
            name_i, name_j = f"_dom{i}", f"_dom{j}"
            env[name_i] = self.domains[i]
            env[name_j] = self.domains[j]
            return f"({name_i}[s[{i}]] == {name_j}[s[{j}]])"
        if isinstance(p, expr.Not):
            return f"(not {self._pred_src(p.child, env, counter)})"
        if isinstance(p, expr.And):
            return "(" + " and ".join(self._pred_src(c, env, counter) for c in p.children) + ")"
        if isinstance(p, expr.Or):
            return "(" + " or ".join(self._pred_src(c, env, counter) for c in p.children) + ")"
        if isinstance(p, expr.OpaquePredicate):
            fn = p.compile_tuple(self) if hasattr(p, "compile_tuple") else None
            if fn is None:
                decode = self.decode

                def fn(s, _p=p, _decode=decode):
                    return _p.holds(_decode(s))

            counter[0] += 1
            name = f"_opq{counter[0]}"
            env[name] = fn
            return f"({name}(s))"
        raise TypeError(f"cannot compile predicate {p!r}")

    def _compile(self, t: Transition, order: int) -> CompiledTransition:
        env: dict = {"_model_error": ModelError}
        counter = [0]
        guard_src = self._pred_src(t.guard, env, counter)
        lines = [f"def _guard(s):", f"    return {guard_src}"]
        writes = []
        body = ["def _apply(s):", "    t = list(s)"]
        for a in t.actions:
            i = self.index[a.target]
            writes.append(i)
            if isinstance(a, expr.Assign):
                body.append(f"    t[{i}] = {self.val_index[i][a.value]}")
            else:
                j = self.index[a.source]
                if self.domains[i] == self.domains[j]:
                    body.append(f"    t[{i}] = s[{j}]")
                else:
                    # value-level copy across differing domains, checked
                    remap = tuple(
                        self.val_index[i].get(val, -1) for val in self.domains[j]
                    )
                    name = f"_map{i}_{j}"
                    env[name] = remap
                    body.append(f"    _v = {name}[s[{j}]]")
                    body.append(
                        f"    if _v < 0: raise _model_error("
                        f"'copied value of {a.source} outside the domain of {a.target} "
                        f"in {t.event}')"
                    )
                    body.append(f"    t[{i}] = _v")
        body.append("    return tuple(t)")
        src = "\n".join(lines + body)
        exec(src, env)  # noqa: S102 - compiling our own generated code
        return CompiledTransition(t, env["_guard"], env["_apply"], tuple(writes), order)

    def compile_predicate(self, p: expr.Predicate) -> Callable[[EncodedState], bool]:
        """Standalone compiled evaluator for goal/forbidden predicates."""
        env: dict = {}
        src = f"def _pred(s):\n    return {self._pred_src(p, env, [0])}"
        exec(src, env)  # noqa: S102
        return env["_pred"]

    # --- operations -----------------------------------------------------

    def fire(self, ct: CompiledTransition, s: EncodedState) -> EncodedState:
        if not ct.guard(s):
            raise DisabledTransitionError(
                f"transition {ct.ref.event!r} fired while disabled"
            )
        return ct.apply(s)

    def enabled(
        self, s: EncodedState, classes: Iterable[TransitionClass] | None = None
    ) -> list[CompiledTransition]:
        if classes is None:
            return [ct for ct in self.transitions if ct.guard(s)]
        wanted = set(classes)
        return [ct for ct in self.transitions if ct.ref.klass in wanted and ct.guard(s)]

    def sync_fixpoint(self, s: EncodedState) -> EncodedState:
        seen = {s}
        while True:
            for ct in self.syncs:
                if ct.guard(s):
                    s2 = ct.apply(s)
                    if s2 != s:
                        if s2 in seen:
                            raise DivergenceError(
                                f"sync closure cycles through {ct.ref.event!r}"
                            )
                        seen.add(s2)
                        s = s2
                        break
            else:
                return s

    def closure(
        self,
        s: EncodedState,
        *,
        include_effects: bool = False,
        attributed: frozenset[str] | None = None,
        fired: list[CompiledTransition] | None = None,
    ) -> EncodedState:
        """Fixpoint over finish > sync > (executing) effect transitions.

        Only state-changing firings count; an enabled transition whose
        actions would not change anything is skipped, which keeps
        self-maintaining effects from looping.
        """
        seen = {s}
        while True:
            s2 = self._closure_step(s, include_effects, attributed, fired)
            if s2 is None:
                return s
            if s2 in seen:
                raise DivergenceError("uncontrollable closure does not stabilize")
            seen.add(s2)
            s = s2

    def _closure_step(self, s, include_effects, attributed, fired):
        for ct in self.finishes:
            if ct.guard(s):
                s2 = ct.apply(s)
                if s2 != s:
                    if fired is not None:
                        fired.append(ct)
                    return s2
        for ct in self.syncs:
            if ct.guard(s):
                s2 = ct.apply(s)
                if s2 != s:
                    if fired is not None:
                        fired.append(ct)
                    return s2
        if include_effects:
            for ct in self.effects:
                ability = ct.ref.ability
                if ability and attributed is not None and ability not in attributed:
                    continue
                if ct.guard(s):
                    s2 = ct.apply(s)
                    if s2 != s:
                        if fired is not None:
                            fired.append(ct)
                        return s2
        return None

    def apply_starting_effects(
        self,
        s: EncodedState,
        ability: str,
        fired: list[CompiledTransition] | None = None,
    ) -> EncodedState:
        for ct in self.starting_effects.get(ability, ()):
            if ct.guard(s):
                s2 = ct.apply(s)
                if s2 != s:
                    if fired is not None:
                        fired.append(ct)
                    s = s2
        return s

    def fire_and_close(
        self,
        s: EncodedState,
        ct: CompiledTransition,
        *,
        include_effects: bool,
        attributed: frozenset[str] | None = None,
        fired: list[CompiledTransition] | None = None,
    ) -> EncodedState:
        """Controllable step as planning sees it: start action, its
        starting effects, then the uncontrollable closure."""
        s = self.fire(ct, s)
        if include_effects and ct.ref.ability:
            s = self.apply_starting_effects(s, ct.ref.ability, fired)
        return self.closure(
            s, include_effects=include_effects, attributed=attributed, fired=fired
        )
