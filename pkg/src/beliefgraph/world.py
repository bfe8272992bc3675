"""Procedural text-world simulator.

Generates small cooking games: connected rooms holding containers,
supporters, appliances, and two-word portable objects; the player follows a
planned walkthrough that reads a cookbook, gathers the recipe ingredients,
and prepares the meal. Every step yields a ground-truth full graph, the
subgraph seen so far, and a templated observation.

Three pieces of information hiding are contractual because the learning
task depends on them: a ``go`` observation never mentions the room the
player came from; the ``prepare meal`` observation mentions only the meal,
never the consumed ingredients; and container and supporter labels are
drawn from one shared furniture pool, so which placement fact a ``take``
removes (``in`` versus ``on``) can be read only off the graph.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .graph import (
    BeliefGraph,
    Entity,
    Kind,
    RelationRegistry,
    Triple,
    add_op,
    apply_update,
    delete_op,
)

DIRECTIONS = ("east", "north", "south", "west")
OPPOSITE = {"north": "south", "south": "north", "east": "west", "west": "east"}
DIRECTION_RELATIONS = frozenset(f"{d}_of" for d in DIRECTIONS)

ROOM_NAMES = ("attic", "backyard", "bedroom", "cellar", "corridor", "kitchen", "pantry", "shed")
CONTAINER_NAMES = ("chest", "crate", "cupboard", "fridge", "toolbox")
SUPPORTER_NAMES = ("counter", "shelf", "table", "workbench")
APPLIANCE_NAMES = ("oven", "stove")
APPLIANCE_STATE = {"stove": "fried", "oven": "roasted"}
DOOR_ADJECTIVES = ("barn", "iron", "screen", "wooden")
CUT_STATES = {"slice": "sliced", "chop": "chopped", "dice": "diced"}

DEFAULT_ADJECTIVES = (
    "dusty", "fancy", "green", "heavy", "purple", "red", "rusty", "shiny", "small", "wooden",
)
FOOD_NOUNS = ("apple", "carrot", "egg", "mushroom", "onion", "pepper", "potato", "tomato")
TOOL_NOUNS = ("coin", "hammer", "key", "knife", "lamp", "rope")
DEFAULT_NOUNS = FOOD_NOUNS + TOOL_NOUNS

PLAYER = Entity("player", Kind.PLAYER)
MEAL = Entity("meal")
RECIPE = Entity("recipe")
COOKBOOK = Entity("cookbook")


class InadmissibleAction(ValueError):
    """The action is not in the state's admissible set."""


class GenerationFailure(RuntimeError):
    """Could not sample a playable layout within the retry budget."""


@dataclass(frozen=True)
class WorldConfig:
    n_rooms: int = 3
    room_layout_seed: int = 0
    object_adjectives: tuple[str, ...] = DEFAULT_ADJECTIVES
    object_nouns: tuple[str, ...] = DEFAULT_NOUNS
    object_combos: tuple[tuple[str, str], ...] | None = None
    n_objects: int = 7
    n_random_actions_per_step: int = 5
    random_actions_compound: bool = False
    recipe_length: int = 3
    relations: RelationRegistry = field(default_factory=RelationRegistry, compare=False)

    def __post_init__(self):
        if self.n_rooms < 1:
            raise ValueError("n_rooms must be >= 1")
        if self.n_random_actions_per_step < 0:
            raise ValueError("n_random_actions_per_step must be >= 0")
        if self.recipe_length < 1:
            raise ValueError("recipe_length must be >= 1")
        if not self.object_adjectives or not self.object_nouns:
            raise ValueError("object name pools must be nonempty")
        combos = self.combos()
        foods = [c for c in combos if c[1] in FOOD_NOUNS]
        knives = [c for c in combos if c[1] == "knife"]
        if len(foods) < self.recipe_length + 1 or not knives:
            raise ValueError("combo pool too small for the recipe and knife")
        if self.n_objects < self.recipe_length + 2:
            raise ValueError("n_objects must cover the recipe, a knife and one spare")

    def combos(self) -> tuple[tuple[str, str], ...]:
        if self.object_combos is not None:
            return self.object_combos
        return tuple((a, n) for a in self.object_adjectives for n in self.object_nouns)


@dataclass(frozen=True)
class Layout:
    """The static part of a sampled game: everything that never changes."""

    rooms: tuple[str, ...]
    exits: tuple[tuple[str, str, str], ...]  # (room, direction, destination)
    doors: tuple[tuple[str, str, str], ...]  # (door label, room, direction)
    containers: tuple[tuple[str, str], ...]  # (label, room)
    supporters: tuple[tuple[str, str], ...]
    appliances: tuple[tuple[str, str], ...]
    objects: tuple[str, ...]  # portable two-word labels
    foods: frozenset[str]
    knife: str
    recipe: tuple[str, ...]
    cookbook_room: str

    def exits_from(self, room: str) -> dict[str, str]:
        return {d: dest for r, d, dest in self.exits if r == room}

    def containers_in(self, room: str) -> list[str]:
        return sorted(label for label, r in self.containers if r == room)

    def supporters_in(self, room: str) -> list[str]:
        return sorted(label for label, r in self.supporters if r == room)

    def appliances_in(self, room: str) -> list[str]:
        return sorted(label for label, r in self.appliances if r == room)

    def doors_in(self, room: str) -> list[tuple[str, str]]:
        return sorted((label, d) for label, r, d in self.doors if r == room)

    @property
    def container_labels(self) -> frozenset[str]:
        return frozenset(label for label, _ in self.containers)

    @property
    def supporter_labels(self) -> frozenset[str]:
        return frozenset(label for label, _ in self.supporters)


@dataclass(frozen=True)
class GameState:
    """Full ground-truth state: the static layout plus the live fact graph.

    Carries no rng; step is a deterministic function of (state, action).
    """

    layout: Layout
    full: BeliefGraph
    player_room: str

    def holder_of(self, obj: str) -> tuple[str, str]:
        """(holder label, relation label) of a portable object's placement."""
        for t in self.full.triples:
            if t.head.label == obj and t.relation.label in ("at", "in", "on"):
                return t.tail.label, t.relation.label
        raise KeyError(f"{obj} has no placement")

    def inventory(self) -> list[str]:
        return sorted(
            t.head.label
            for t in self.full.triples
            if t.relation.label == "in" and t.tail.label == "player"
        )

    def objects_held_by(self, holder: str, rel: str) -> list[str]:
        return sorted(
            t.head.label
            for t in self.full.triples
            if t.relation.label == rel and t.tail.label == holder and t.head.label != "player"
        )

    def is_open(self, container: str) -> bool:
        return Triple(Entity(container), Entity("open"), _REGISTRY.relation("is")) in self.full

    def object_states(self, obj: str) -> list[str]:
        return sorted(
            t.tail.label
            for t in self.full.triples
            if t.relation.label == "is" and t.head.label == obj
        )

    def meal_prepared(self) -> bool:
        return any(t.head.label == "meal" for t in self.full.triples)


_REGISTRY = RelationRegistry()


def _room_entity(label: str) -> Entity:
    return Entity(label, Kind.LOCATION)


def _state_entity(label: str) -> Entity:
    return Entity(label, Kind.STATE)


def direction_relation(direction: str) -> str:
    return f"{direction}_of"


def initial_state(layout: Layout, open_containers: frozenset[str], placements: dict[str, tuple[str, str]], start_room: str) -> GameState:
    """Assemble the full graph of a fresh game."""
    rel = _REGISTRY.relation
    triples: list[Triple] = [Triple(PLAYER, _room_entity(start_room), rel("at"))]
    for room, direction, dest in layout.exits:
        triples.append(Triple(_room_entity(dest), _room_entity(room), rel(direction_relation(direction))))
    for door, room, direction in layout.doors:
        triples.append(Triple(Entity(door), _room_entity(room), rel(direction_relation(direction))))
    for label, room in layout.containers + layout.supporters + layout.appliances:
        triples.append(Triple(Entity(label), _room_entity(room), rel("in")))
    for label, _ in layout.containers:
        state = "open" if label in open_containers else "closed"
        triples.append(Triple(Entity(label), _state_entity(state), rel("is")))
    for obj, (holder, r) in placements.items():
        tail = _room_entity(holder) if r == "at" else Entity(holder)
        triples.append(Triple(Entity(obj), tail, rel(r)))
    triples.append(Triple(COOKBOOK, _room_entity(layout.cookbook_room), rel("at")))
    for ing in layout.recipe:
        triples.append(Triple(Entity(ing), RECIPE, rel("needs")))
    return GameState(layout, BeliefGraph(triples), start_room)


def admissible_actions(state: GameState) -> list[str]:
    """Every action the game will accept in this state, in a fixed order."""
    lay = state.layout
    room = state.player_room
    out = ["look"]
    for direction in sorted(lay.exits_from(room)):
        out.append(f"go {direction}")
    open_conts = [c for c in lay.containers_in(room) if state.is_open(c)]
    closed_conts = [c for c in lay.containers_in(room) if not state.is_open(c)]
    for cont in closed_conts:
        out.append(f"open {cont}")
    for cont in open_conts:
        out.append(f"close {cont}")
    floor = [o for o in state.objects_held_by(room, "at") if o != "cookbook"]
    for obj in floor:
        out.append(f"take {obj}")
    for cont in open_conts:
        for obj in state.objects_held_by(cont, "in"):
            out.append(f"take {obj} from {cont}")
    for supp in lay.supporters_in(room):
        for obj in state.objects_held_by(supp, "on"):
            out.append(f"take {obj} from {supp}")
    inventory = state.inventory()
    for obj in inventory:
        out.append(f"drop {obj}")
    in_scope = sorted(
        set(floor)
        | set(lay.containers_in(room))
        | set(lay.supporters_in(room))
        | set(lay.appliances_in(room))
        | {o for c in open_conts for o in state.objects_held_by(c, "in")}
        | {o for s in lay.supporters_in(room) for o in state.objects_held_by(s, "on")}
        | set(inventory)
        | ({"cookbook"} if room == lay.cookbook_room else set())
    )
    for obj in in_scope:
        out.append(f"examine {obj}")
    if lay.knife in inventory:
        for food in inventory:
            if food in lay.foods and not set(state.object_states(food)) & set(CUT_STATES.values()):
                for verb in sorted(CUT_STATES):
                    out.append(f"{verb} {food}")
    for appliance in lay.appliances_in(room):
        cooked_state = APPLIANCE_STATE[appliance]
        for food in inventory:
            if food in lay.foods and cooked_state not in state.object_states(food):
                out.append(f"cook {food} with {appliance}")
    if not state.meal_prepared() and all(ing in inventory for ing in lay.recipe):
        out.append("prepare meal")
    return out


def _listing(items: list[str]) -> str:
    if len(items) == 1:
        return items[0]
    return " and ".join([", ".join(items[:-1]), items[-1]]) if len(items) > 2 else " and ".join(items)


def describe_room(state: GameState) -> str:
    """Room description used by look and go; never names any other room."""
    lay = state.layout
    room = state.player_room
    parts = [f"you are in the {room} ."]
    for door, direction in lay.doors_in(room):
        parts.append(f"there is a {door} to the {direction} .")
    for cont in lay.containers_in(room):
        if state.is_open(cont):
            contents = state.objects_held_by(cont, "in")
            if contents:
                parts.append(f"there is a {cont} here . inside it you see a {_listing(contents)} .")
            else:
                parts.append(f"there is a {cont} here . it is open and empty .")
        else:
            parts.append(f"there is a {cont} here . it is closed .")
    for supp in lay.supporters_in(room):
        contents = state.objects_held_by(supp, "on")
        if contents:
            parts.append(f"there is a {supp} here . on it you see a {_listing(contents)} .")
        else:
            parts.append(f"there is a {supp} here .")
    for appliance in lay.appliances_in(room):
        parts.append(f"there is a {appliance} here .")
    floor = [o for o in state.objects_held_by(room, "at") if o != "cookbook"]
    if floor:
        parts.append(f"on the floor you see a {_listing(floor)} .")
    if room == lay.cookbook_room:
        parts.append(f"a cookbook here says the recipe needs {_listing(list(lay.recipe))} .")
    return " ".join(parts)


def step(state: GameState, action: str) -> tuple[GameState, str]:
    """Apply one admissible action; returns the new state and observation."""
    if action not in admissible_actions(state):
        raise InadmissibleAction(f"{action!r} is not admissible here")
    rel = _REGISTRY.relation
    lay = state.layout
    room = state.player_room
    words = action.split()
    verb = words[0]

    if verb == "look":
        return state, describe_room(state)

    if verb == "examine":
        target = action[len("examine "):]
        if target == "cookbook":
            obs = f"the cookbook says the recipe needs {_listing(list(lay.recipe))} ."
        else:
            obs = f"you see nothing special about the {target} ."
        return state, obs

    if verb == "go":
        direction = words[1]
        dest = lay.exits_from(room)[direction]
        ops = (
            add_op(PLAYER, _room_entity(dest), rel("at")),
            delete_op(PLAYER, _room_entity(room), rel("at")),
        )
        new_state = GameState(lay, apply_update(state.full, ops), dest)
        return new_state, f"you go {direction} . " + describe_room(new_state)

    if verb == "open":
        cont = action[len("open "):]
        ops = (
            add_op(Entity(cont), _state_entity("open"), rel("is")),
            delete_op(Entity(cont), _state_entity("closed"), rel("is")),
        )
        new_state = replace(state, full=apply_update(state.full, ops))
        contents = new_state.objects_held_by(cont, "in")
        detail = f"inside it you see a {_listing(contents)} ." if contents else "it is empty ."
        return new_state, f"you open the {cont} . {detail}"

    if verb == "close":
        cont = action[len("close "):]
        ops = (
            add_op(Entity(cont), _state_entity("closed"), rel("is")),
            delete_op(Entity(cont), _state_entity("open"), rel("is")),
        )
        return replace(state, full=apply_update(state.full, ops)), f"you close the {cont} ."

    if verb == "take":
        rest = action[len("take "):]
        obj = rest.split(" from ")[0]
        holder, placement = state.holder_of(obj)
        tail = _room_entity(holder) if placement == "at" else Entity(holder)
        ops = (
            add_op(Entity(obj), PLAYER, rel("in")),
            delete_op(Entity(obj), tail, rel(placement)),
        )
        return replace(state, full=apply_update(state.full, ops)), f"you take the {obj} ."

    if verb == "drop":
        obj = action[len("drop "):]
        ops = (
            add_op(Entity(obj), _room_entity(room), rel("at")),
            delete_op(Entity(obj), PLAYER, rel("in")),
        )
        return replace(state, full=apply_update(state.full, ops)), f"you drop the {obj} ."

    if verb in CUT_STATES:
        food = action[len(verb) + 1:]
        new_state_label = CUT_STATES[verb]
        ops = (add_op(Entity(food), _state_entity(new_state_label), rel("is")),)
        obs = f"you {verb} the {food} with the knife . it is now {new_state_label} ."
        return replace(state, full=apply_update(state.full, ops)), obs

    if verb == "cook":
        rest = action[len("cook "):]
        food, appliance = rest.split(" with ")
        cooked = APPLIANCE_STATE[appliance]
        ops = (add_op(Entity(food), _state_entity(cooked), rel("is")),)
        obs = f"you cook the {food} with the {appliance} . it is now {cooked} ."
        return replace(state, full=apply_update(state.full, ops)), obs

    if action == "prepare meal":
        ops = [add_op(MEAL, PLAYER, rel("in"))]
        for ing in sorted(lay.recipe):
            ops.append(add_op(Entity(ing), MEAL, rel("part_of")))
            ops.append(delete_op(Entity(ing), PLAYER, rel("in")))
        obs = "you prepare the meal . it smells delicious ."
        return replace(state, full=apply_update(state.full, tuple(ops))), obs

    raise InadmissibleAction(f"unhandled action {action!r}")


def scope_facts(state: GameState) -> frozenset[Triple]:
    """Facts currently visible: everything involving the player's room, its
    open containers and supporters, and the inventory. Room-to-room
    direction facts are excluded; they are revealed by traversal only."""
    lay = state.layout
    room = state.player_room
    room_set = set(lay.rooms)
    open_containers = {c for c in lay.containers_in(room) if state.is_open(c)}
    supporters = set(lay.supporters_in(room))
    fixtures = set(lay.containers_in(room)) | supporters | set(lay.appliances_in(room))
    visible_objects: set[str] = set()
    out: set[Triple] = set()
    for t in state.full.triples:
        head, tail, r = t.head.label, t.tail.label, t.relation.label
        if r == "at" and tail == room:
            out.add(t)
            visible_objects.add(head)
        elif r == "in" and tail == room and head in fixtures:
            out.add(t)
        elif r == "in" and (tail in open_containers or tail == "player"):
            out.add(t)
            visible_objects.add(head)
        elif r == "on" and tail in supporters:
            out.add(t)
            visible_objects.add(head)
        elif r in DIRECTION_RELATIONS and tail == room and head not in room_set:
            out.add(t)  # doors on this room's walls
    for t in state.full.triples:
        r = t.relation.label
        if r == "is" and (t.head.label in visible_objects or t.head.label in fixtures):
            out.add(t)
        elif r == "part_of" and "meal" in visible_objects:
            out.add(t)
        elif r == "needs" and room == lay.cookbook_room:
            out.add(t)
    return frozenset(out)


def traversal_fact(layout: Layout, from_room: str, direction: str) -> Triple:
    """The room-topology fact a move reveals: destination is <dir> of origin."""
    dest = layout.exits_from(from_room)[direction]
    return Triple(
        _room_entity(dest), _room_entity(from_room), _REGISTRY.relation(direction_relation(direction))
    )


def update_seen(
    seen_prev: BeliefGraph, state_next: GameState, extra: Iterable[Triple] = ()
) -> BeliefGraph:
    """Seen-graph maintenance: keep previously seen facts that are still
    true, then fold in everything newly visible."""
    kept = seen_prev.triples & state_next.full.triples
    return BeliefGraph(kept | scope_facts(state_next) | set(extra))


def initial_seen(state: GameState) -> BeliefGraph:
    """Before the first look the player knows only where they stand."""
    return BeliefGraph([Triple(PLAYER, _room_entity(state.player_room), _REGISTRY.relation("at"))])


@dataclass(frozen=True)
class Transition:
    game_id: int
    step: int
    branch: int  # 0 = walkthrough step, 1..n = off-path branch index
    g_seen_prev: BeliefGraph
    action: str
    observation: str
    g_seen_next: BeliefGraph
    # full ground-truth state after the action; kept for invariant checks,
    # never serialized, and excluded from equality so a reloaded transition
    # still compares equal to the generated one
    g_full_next: BeliefGraph | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Game:
    game_id: int
    walkthrough: tuple[str, ...]
    transitions: tuple[Transition, ...]

    @property
    def on_path(self) -> tuple[Transition, ...]:
        return tuple(t for t in self.transitions if t.branch == 0)

    @property
    def final_seen(self) -> BeliefGraph:
        return self.on_path[-1].g_seen_next


def _bfs_path(layout: Layout, start: str, goal: str) -> list[str]:
    """Directions from start to goal over the room graph."""
    if start == goal:
        return []
    frontier = [(start, [])]
    visited = {start}
    while frontier:
        room, path = frontier.pop(0)
        for direction, dest in sorted(layout.exits_from(room).items()):
            if dest in visited:
                continue
            if dest == goal:
                return path + [direction]
            visited.add(dest)
            frontier.append((dest, path + [direction]))
    raise GenerationFailure(f"no path from {start} to {goal}")


def plan_walkthrough(state: GameState) -> list[str]:
    """Deterministic solution: look, read the cookbook, gather every
    ingredient (opening containers as needed), prepare the meal."""
    lay = state.layout
    actions = ["look"]
    state, _ = step(state, "look")

    def walk_to(s: GameState, goal: str) -> GameState:
        for direction in _bfs_path(lay, s.player_room, goal):
            actions.append(f"go {direction}")
            s, _ = step(s, f"go {direction}")
        return s

    state = walk_to(state, lay.cookbook_room)
    actions.append("examine cookbook")
    state, _ = step(state, "examine cookbook")
    missing = [ing for ing in sorted(lay.recipe)]
    while missing:
        # nearest missing ingredient, ties broken by name
        best = None
        for ing in missing:
            holder, placement = state.holder_of(ing)
            ing_room = holder if placement == "at" else dict(
                list(lay.containers) + list(lay.supporters)
            )[holder]
            hops = len(_bfs_path(lay, state.player_room, ing_room))
            key = (hops, ing)
            if best is None or key < best[0]:
                best = (key, ing, ing_room, holder, placement)
        _, ing, ing_room, holder, placement = best
        state = walk_to(state, ing_room)
        holder, placement = state.holder_of(ing)
        if placement == "in" and holder != "player" and not state.is_open(holder):
            actions.append(f"open {holder}")
            state, _ = step(state, f"open {holder}")
        take = f"take {ing}" if placement == "at" else f"take {ing} from {holder}"
        actions.append(take)
        state, _ = step(state, take)
        missing.remove(ing)
    actions.append("prepare meal")
    state, _ = step(state, "prepare meal")
    return actions


def sample_layout(config: WorldConfig, rng: np.random.Generator) -> tuple[Layout, frozenset[str], dict[str, tuple[str, str]], str]:
    """Draw a playable static layout plus initial container states, object
    placements, and the starting room."""

    def pick(pool, k):
        pool = sorted(pool)
        idx = rng.choice(len(pool), size=k, replace=False)
        return [pool[i] for i in sorted(idx)]

    n_rooms = min(config.n_rooms, len(ROOM_NAMES))
    rooms = pick(ROOM_NAMES, n_rooms)
    exits: list[tuple[str, str, str]] = []
    used: dict[str, set[str]] = {r: set() for r in rooms}
    for i, child in enumerate(rooms[1:], start=1):
        # attach to the already-wired prefix so the room graph stays connected
        candidates = [
            (parent, d)
            for parent in rooms[:i]
            for d in DIRECTIONS
            if d not in used[parent] and OPPOSITE[d] not in used[child]
        ]
        if not candidates:
            raise GenerationFailure("no free direction slots while wiring rooms")
        parent, direction = candidates[int(rng.integers(len(candidates)))]
        exits.append((parent, direction, child))
        exits.append((child, OPPOSITE[direction], parent))
        used[parent].add(direction)
        used[child].add(OPPOSITE[direction])

    doors = []
    door_adjs = list(DOOR_ADJECTIVES)
    seen_pairs = set()
    for room, direction, dest in exits:
        pair = frozenset((room, dest))
        if pair in seen_pairs:
            continue
        seen_pairs.add(pair)
        if rng.random() < 0.5 and door_adjs:
            adj = door_adjs.pop(int(rng.integers(len(door_adjs))))
            label = f"{adj} door"
            doors.append((label, room, direction))
            doors.append((label, dest, OPPOSITE[direction]))

    containers: list[tuple[str, str]] = []
    supporters: list[tuple[str, str]] = []
    appliances: list[tuple[str, str]] = []
    cont_pool = list(CONTAINER_NAMES)
    supp_pool = list(SUPPORTER_NAMES)
    app_pool = list(APPLIANCE_NAMES)
    for room in rooms:
        for _ in range(int(rng.integers(0, 3))):
            if cont_pool:
                containers.append((cont_pool.pop(int(rng.integers(len(cont_pool)))), room))
        if rng.random() < 0.7 and supp_pool:
            supporters.append((supp_pool.pop(int(rng.integers(len(supp_pool)))), room))
        if rng.random() < 0.4 and app_pool:
            appliances.append((app_pool.pop(int(rng.integers(len(app_pool)))), room))
    if not containers:
        containers.append((cont_pool.pop(int(rng.integers(len(cont_pool)))), rooms[int(rng.integers(len(rooms)))]))
    if not supporters:
        supporters.append((supp_pool.pop(int(rng.integers(len(supp_pool)))), rooms[int(rng.integers(len(rooms)))]))

    combos = sorted(config.combos())
    food_combos = [c for c in combos if c[1] in FOOD_NOUNS]
    knife_combos = [c for c in combos if c[1] == "knife"]
    other_combos = [c for c in combos if c[1] not in FOOD_NOUNS and c[1] != "knife"]
    n_food = config.recipe_length + 1
    n_other = config.n_objects - n_food - 1
    picked_foods = pick(food_combos, min(n_food, len(food_combos)))
    knife = knife_combos[int(rng.integers(len(knife_combos)))]
    picked_other = pick(other_combos, min(max(n_other, 0), len(other_combos)))
    names = [f"{a} {n}" for a, n in picked_foods + [knife] + picked_other]
    if len(set(names)) != len(names):
        raise GenerationFailure("duplicate object names sampled")
    foods = frozenset(f"{a} {n}" for a, n in picked_foods)
    recipe_pool = sorted(foods)
    recipe_idx = rng.choice(len(recipe_pool), size=config.recipe_length, replace=False)
    recipe = tuple(sorted(recipe_pool[i] for i in recipe_idx))

    spots: list[tuple[str, str]] = [(room, "at") for room in rooms]
    spots += [(label, "in") for label, _ in containers]
    spots += [(label, "on") for label, _ in supporters]
    placements = {}
    for name in names:
        holder, relation = spots[int(rng.integers(len(spots)))]
        placements[name] = (holder, relation)

    open_conts = frozenset(label for label, _ in containers if rng.random() < 0.4)
    start_room = rooms[int(rng.integers(len(rooms)))]
    cookbook_room = rooms[int(rng.integers(len(rooms)))]

    layout = Layout(
        rooms=tuple(rooms),
        exits=tuple(sorted(exits)),
        doors=tuple(sorted(doors)),
        containers=tuple(sorted(containers)),
        supporters=tuple(sorted(supporters)),
        appliances=tuple(sorted(appliances)),
        objects=tuple(sorted(names)),
        foods=foods,
        knife=f"{knife[0]} {knife[1]}",
        recipe=recipe,
        cookbook_room=cookbook_room,
    )
    return layout, open_conts, placements, start_room


def generate_game(config: WorldConfig, seed: int) -> Game:
    """Walkthrough plus branched random actions, fully determined by
    (config, seed). Layout sampling retries internally on dead sample
    draws before giving up."""
    last_error: Exception | None = None
    for attempt in range(20):
        rng = np.random.default_rng(
            np.random.SeedSequence([config.room_layout_seed, seed, attempt])
        )
        try:
            layout, open_conts, placements, start_room = sample_layout(config, rng)
            state = initial_state(layout, open_conts, placements, start_room)
            walkthrough = plan_walkthrough(state)
        except GenerationFailure as exc:
            last_error = exc
            continue
        return _play(config, seed, layout, state, walkthrough, rng)
    raise GenerationFailure(f"no playable layout after 20 attempts: {last_error}")


def _play(
    config: WorldConfig,
    seed: int,
    layout: Layout,
    state: GameState,
    walkthrough: list[str],
    rng: np.random.Generator,
) -> Game:
    transitions: list[Transition] = []
    # the belief maintainer starts from nothing, so the recorded prior of
    # the first step is empty and the first update carries the player's
    # starting location; replaying gold updates from an empty graph then
    # reconstructs every later seen graph exactly
    seen = BeliefGraph()
    for step_idx, action in enumerate(walkthrough):
        next_state, obs = step(state, action)
        extra = (
            (traversal_fact(layout, state.player_room, action.split()[1]),)
            if action.startswith("go ")
            else ()
        )
        next_seen = update_seen(seen, next_state, extra)
        transitions.append(
            Transition(seed, step_idx, 0, seen, action, obs, next_seen,
                       g_full_next=next_state.full)
        )
        branch_state, branch_seen = next_state, next_seen
        for branch in range(1, config.n_random_actions_per_step + 1):
            options = admissible_actions(branch_state)
            choice = options[int(rng.integers(len(options)))]
            off_state, off_obs = step(branch_state, choice)
            off_extra = (
                (traversal_fact(layout, branch_state.player_room, choice.split()[1]),)
                if choice.startswith("go ")
                else ()
            )
            off_seen = update_seen(branch_seen, off_state, off_extra)
            transitions.append(
                Transition(seed, step_idx, branch, branch_seen, choice, off_obs,
                           off_seen, g_full_next=off_state.full)
            )
            if config.random_actions_compound:
                branch_state, branch_seen = off_state, off_seen
        state, seen = next_state, next_seen
    return Game(seed, tuple(walkthrough), tuple(transitions))
