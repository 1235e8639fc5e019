"""Deterministic miniature interactive-fiction engine.

Games are written in a small line-oriented DSL (see ``load_game``). The engine
exposes the usual text-game handicaps: the full templated action space, the
subset of actions that actually change the world, and ``look``/``inventory``
text attached to every observation.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from .errors import GameParseError, GameValidationError, SteppedAfterDone

INVENTORY = "inventory"
NOWHERE = "nowhere"
NOTHING_HAPPENS = "nothing happens"
SEPARATOR = " | "
BLANKS = ("OBJ1", "OBJ2")

GAMES_DIR = Path(__file__).parent / "games"


@dataclass(frozen=True)
class Room:
    name: str
    description: str
    exits: dict  # direction -> room id
    requires: dict = field(default_factory=dict)  # direction -> object id that must be carried


@dataclass(frozen=True)
class GameObject:
    name: str
    initial_location: str
    portable: bool


@dataclass(frozen=True)
class ActionTemplate:
    template_id: int
    surface: str

    @property
    def blank_count(self) -> int:
        return sum(1 for tok in self.surface.split() if tok in BLANKS)

    @property
    def verb(self) -> str:
        return self.surface.split()[0]


@dataclass(frozen=True)
class RewardEvent:
    kind: str  # "take" | "enter" | "apply"
    args: tuple
    points: int
    once: bool = True
    terminal: bool = False
    reveal: Optional[str] = None
    consume: Optional[str] = None
    text: Optional[str] = None


@dataclass(frozen=True)
class Action:
    template_id: int
    filler1: Optional[int]
    filler2: Optional[int]
    command_text: str


@dataclass(frozen=True)
class WorldState:
    player_room: str
    object_locations: dict
    fired_events: frozenset = frozenset()
    cumulative_score: int = 0
    steps_taken: int = 0
    done: bool = False


@dataclass(frozen=True)
class Observation:
    event_text: str
    inventory_text: str
    look_text: str


@dataclass(eq=False)
class GameSpec:
    game_id: str
    rooms: dict
    objects: dict
    templates: list
    filler_vocab: list
    reward_events: list
    episode_cap: int
    start_room: str
    # memo tables; the engine is deterministic so these never go stale
    _candidates: Optional[list] = field(default=None, repr=False)
    _by_command: Optional[dict] = field(default=None, repr=False)
    _valid_cache: dict = field(default_factory=dict, repr=False)

    @property
    def max_score(self) -> int:
        return sum(ev.points for ev in self.reward_events if ev.points > 0)

    def object_by_word(self, word: str) -> Optional[str]:
        for oid, obj in self.objects.items():
            if obj.name == word:
                return oid
        return None


# --------------------------------------------------------------------------
# DSL


def _parse_bool(value: str, lineno: int) -> bool:
    if value in ("true", "yes", "1"):
        return True
    if value in ("false", "no", "0"):
        return False
    raise GameParseError(lineno, f"expected true/false, got {value!r}")


def _parse_int(value: str, lineno: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise GameParseError(lineno, f"expected an integer, got {value!r}") from None


def load_game(spec_text: str, game_id: Optional[str] = None) -> GameSpec:
    """Parse and validate a game written in the toy DSL.

    Sections are ``[meta]``, ``[room <id>]``, ``[object <id>]``, ``[reward]``
    (each followed by ``key: value`` lines, the first of which may share the
    header line), plus the one-line ``[template] <surface>`` and
    ``[fillers] <word> ...``. Two optional extensions are understood:
    ``exit: <dir> <room> requires <object>`` and ``reveal:``/``consume:``/``text:``
    keys on reward blocks (reveal moves an object into the player's room,
    consume moves one out of the world).
    """
    meta: dict = {}
    rooms: dict = {}
    objects: dict = {}
    templates: list = []
    fillers: list = []
    rewards: list = []

    section = None  # (kind, id, dict, header line)
    blocks = []

    def close():
        if section is not None:
            blocks.append(section)

    for lineno, raw in enumerate(spec_text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            end = line.find("]")
            if end < 0:
                raise GameParseError(lineno, "unterminated section header")
            header = line[1:end].split()
            rest = line[end + 1:].strip()
            if not header:
                raise GameParseError(lineno, "empty section header")
            kind = header[0]
            if kind == "template":
                if not rest:
                    raise GameParseError(lineno, "template surface is empty")
                templates.append((lineno, " ".join(rest.split())))
                continue
            if kind == "fillers":
                words = rest.split()
                if not words:
                    raise GameParseError(lineno, "filler list is empty")
                fillers.extend(words)
                continue
            if kind in ("room", "object"):
                if len(header) != 2:
                    raise GameParseError(lineno, f"[{kind}] needs exactly one id")
            elif kind in ("meta", "reward"):
                if len(header) != 1:
                    raise GameParseError(lineno, f"[{kind}] takes no id")
            else:
                raise GameParseError(lineno, f"unknown section [{kind}]")
            close()
            section = (kind, header[1] if len(header) > 1 else None, [], lineno)
            if rest:
                section[2].append((lineno, rest))
            continue
        if section is None:
            raise GameParseError(lineno, "key outside of any section")
        section[2].append((lineno, line))
    close()

    for kind, ident, lines, header_line in blocks:
        kv: dict = {}
        exits: dict = {}
        requires: dict = {}
        for lineno, line in lines:
            if ":" not in line:
                raise GameParseError(lineno, "expected 'key: value'")
            key, value = (s.strip() for s in line.split(":", 1))
            if kind == "room" and key == "exit":
                parts = value.split()
                if len(parts) == 2:
                    exits[parts[0]] = parts[1]
                elif len(parts) == 4 and parts[2] == "requires":
                    exits[parts[0]] = parts[1]
                    requires[parts[0]] = parts[3]
                else:
                    raise GameParseError(lineno, "expected 'exit: <dir> <room> [requires <object>]'")
                continue
            if key in kv:
                raise GameParseError(lineno, f"duplicate key {key!r}")
            kv[key] = (lineno, value)

        def need(key):
            if key not in kv:
                raise GameParseError(header_line, f"[{kind}] is missing '{key}'")
            return kv[key]

        if kind == "meta":
            for key, (lineno, value) in kv.items():
                if key not in ("id", "start", "cap"):
                    raise GameParseError(lineno, f"unknown meta key {key!r}")
                meta[key] = (lineno, value)
        elif kind == "room":
            if ident in rooms:
                raise GameParseError(header_line, f"duplicate room {ident!r}")
            name = need("name")[1]
            desc = kv.get("desc", (0, ""))[1]
            rooms[ident] = Room(name=name, description=desc, exits=exits, requires=requires)
        elif kind == "object":
            if ident in objects:
                raise GameParseError(header_line, f"duplicate object {ident!r}")
            name = need("name")[1]
            loc = need("loc")[1]
            lineno, portable = kv.get("portable", (header_line, "true"))
            objects[ident] = GameObject(name=name, initial_location=loc,
                                        portable=_parse_bool(portable, lineno))
        elif kind == "reward":
            lineno, trig = need("trigger")
            parts = trig.split()
            if not parts or parts[0] not in ("take", "enter", "apply"):
                raise GameParseError(lineno, "trigger must be take/enter/apply")
            if parts[0] in ("take", "enter") and len(parts) != 2:
                raise GameParseError(lineno, f"'{parts[0]}' trigger takes one argument")
            if parts[0] == "apply":
                if len(parts) not in (3, 4):
                    raise GameParseError(lineno, "'apply' trigger is 'apply <template-index> <obj> [<obj>]'")
                args = (_parse_int(parts[1], lineno),) + tuple(parts[2:])
            else:
                args = (parts[1],)
            pl, points = need("points")
            once_l, once = kv.get("once", (header_line, "true"))
            term_l, terminal = kv.get("terminal", (header_line, "false"))
            rewards.append(RewardEvent(
                kind=parts[0], args=args, points=_parse_int(points, pl),
                once=_parse_bool(once, once_l), terminal=_parse_bool(terminal, term_l),
                reveal=kv.get("reveal", (0, None))[1], consume=kv.get("consume", (0, None))[1],
                text=kv.get("text", (0, None))[1],
            ))

    if "start" not in meta:
        raise GameParseError(1, "[meta] is missing 'start'")
    cap = _parse_int(meta["cap"][1], meta["cap"][0]) if "cap" in meta else 100
    game = GameSpec(
        game_id=meta.get("id", (0, game_id or "game"))[1],
        rooms=rooms,
        objects=objects,
        templates=[ActionTemplate(i, s) for i, (_, s) in enumerate(templates)],
        filler_vocab=fillers,
        reward_events=rewards,
        episode_cap=cap,
        start_room=meta["start"][1],
    )
    for lineno, surface in templates:
        n = sum(1 for tok in surface.split() if tok in BLANKS)
        if "OBJ2" in surface.split() and "OBJ1" not in surface.split():
            raise GameParseError(lineno, "OBJ2 used without OBJ1")
        if n > 2:
            raise GameParseError(lineno, "at most two blanks per template")
    validate_game(game)
    return game


def validate_game(game: GameSpec) -> None:
    def bad(msg):
        raise GameValidationError(f"{game.game_id}: {msg}")

    if not game.rooms:
        bad("no rooms defined")
    if game.start_room not in game.rooms:
        bad(f"start room {game.start_room!r} is undefined")
    for rid, room in game.rooms.items():
        for direction, target in room.exits.items():
            if target not in game.rooms:
                bad(f"room {rid!r} exit {direction!r} targets undefined room {target!r}")
        for direction, oid in room.requires.items():
            if oid not in game.objects:
                bad(f"room {rid!r} exit {direction!r} requires undefined object {oid!r}")
    for oid, obj in game.objects.items():
        if obj.initial_location not in game.rooms and obj.initial_location not in (INVENTORY, NOWHERE):
            bad(f"object {oid!r} starts in undefined room {obj.initial_location!r}")
    if not game.templates:
        bad("template list is empty")
    if not game.filler_vocab:
        bad("filler vocabulary is empty")
    if len(set(game.filler_vocab)) != len(game.filler_vocab):
        bad("duplicate filler words")
    if game.episode_cap < 1:
        bad("episode cap must be at least 1")
    for i, ev in enumerate(game.reward_events):
        if ev.kind == "take" and ev.args[0] not in game.objects:
            bad(f"reward {i} takes undefined object {ev.args[0]!r}")
        if ev.kind == "enter" and ev.args[0] not in game.rooms:
            bad(f"reward {i} enters undefined room {ev.args[0]!r}")
        if ev.kind == "apply":
            tid = ev.args[0]
            if not 0 <= tid < len(game.templates):
                bad(f"reward {i} references undefined template {tid}")
            objs = ev.args[1:]
            if len(objs) != game.templates[tid].blank_count:
                bad(f"reward {i} gives {len(objs)} objects for a {game.templates[tid].blank_count}-blank template")
            for oid in objs:
                if oid not in game.objects:
                    bad(f"reward {i} references undefined object {oid!r}")
        if ev.reveal is not None and ev.reveal not in game.objects:
            bad(f"reward {i} reveals undefined object {ev.reveal!r}")
        if ev.consume is not None and ev.consume not in game.objects:
            bad(f"reward {i} consumes undefined object {ev.consume!r}")


def resolve_game_path(name: str) -> Path:
    """Accept a filesystem path or the stem of a bundled game (``tworoom``)."""
    path = Path(name)
    if path.exists():
        return path
    stem = path.name[:-4] if path.name.endswith(".toy") else path.name
    bundled = GAMES_DIR / f"{stem}.toy"
    if bundled.exists():
        return bundled
    for candidate in GAMES_DIR.glob("*.toy"):
        if load_game_file(candidate).game_id == stem:
            return candidate
    raise FileNotFoundError(f"no game file or bundled game named {name!r}")


def load_game_file(path) -> GameSpec:
    path = Path(path)
    return load_game(path.read_text(encoding="utf-8"), game_id=path.stem)


def bundled_game(name: str) -> GameSpec:
    return load_game_file(resolve_game_path(name))


# --------------------------------------------------------------------------
# Text rendering


def _room_line(game: GameSpec, room_id: str) -> str:
    room = game.rooms[room_id]
    return f"{room.name}. {room.description}".strip()


def inventory_text(game: GameSpec, state: WorldState) -> str:
    held = [game.objects[oid].name for oid in game.objects if state.object_locations[oid] == INVENTORY]
    if not held:
        return "you are empty handed."
    return "you carry: " + ", ".join(held)


def look_text(game: GameSpec, state: WorldState) -> str:
    here = [game.objects[oid].name for oid in game.objects
            if state.object_locations[oid] == state.player_room]
    seen = "you see " + " and ".join(f"a {name}" for name in here) + "." if here else "you see nothing special."
    return f"{_room_line(game, state.player_room)} {seen}"


def _observe(game: GameSpec, state: WorldState, event_text: str) -> Observation:
    return Observation(event_text=event_text or NOTHING_HAPPENS,
                       inventory_text=inventory_text(game, state),
                       look_text=look_text(game, state))


def render_state_text(obs: Observation) -> str:
    return SEPARATOR.join((obs.event_text, obs.inventory_text, obs.look_text))


# --------------------------------------------------------------------------
# Dynamics


def reset(game: GameSpec) -> tuple:
    locations = {oid: obj.initial_location for oid, obj in game.objects.items()}
    state = WorldState(player_room=game.start_room, object_locations=locations)
    return state, _observe(game, state, _room_line(game, game.start_room))


def state_hash(state: WorldState) -> int:
    """64-bit digest of the world configuration (room, objects, fired events)."""
    canon = repr((state.player_room, sorted(state.object_locations.items()), sorted(state.fired_events)))
    return int.from_bytes(hashlib.blake2b(canon.encode(), digest_size=8).digest(), "little")


def _filler_word(game: GameSpec, idx: Optional[int]) -> Optional[str]:
    return None if idx is None else game.filler_vocab[idx]


def _fire(game, events, locations, fired, room_id, indices):
    reward, texts, terminal = 0, [], False
    for i in indices:
        ev = game.reward_events[i]
        if ev.once and i in fired:
            continue
        fired = fired | {i}
        reward += ev.points
        if ev.reveal is not None:
            locations[ev.reveal] = room_id
        if ev.consume is not None:
            locations[ev.consume] = NOWHERE
        if ev.text:
            texts.append(ev.text)
        terminal = terminal or ev.terminal
    return reward, texts, terminal, fired


def _transition(game: GameSpec, state: WorldState, action: Action):
    """Apply ``action`` ignoring step bookkeeping.

    Returns ``(new_state, event_text, reward, terminal)``; ``new_state`` is
    ``state`` itself when nothing happens.
    """
    template = game.templates[action.template_id]
    verb = template.verb
    w1 = _filler_word(game, action.filler1)
    w2 = _filler_word(game, action.filler2)
    locations = dict(state.object_locations)
    room_id = state.player_room
    events = game.reward_events
    text = None
    matched: list = []

    if verb == "look" and template.blank_count == 0:
        return state, look_text(game, state), 0, False
    if verb == "inventory" and template.blank_count == 0:
        return state, inventory_text(game, state), 0, False

    if verb == "go" and template.blank_count == 1:
        room = game.rooms[room_id]
        if w1 not in room.exits:
            return state, NOTHING_HAPPENS, 0, False
        needed = room.requires.get(w1)
        if needed is not None and locations[needed] != INVENTORY:
            return state, NOTHING_HAPPENS, 0, False
        room_id = room.exits[w1]
        text = _room_line(game, room_id)
        matched = [i for i, ev in enumerate(events) if ev.kind == "enter" and ev.args[0] == room_id]
    elif verb == "take" and template.blank_count == 1:
        oid = game.object_by_word(w1)
        if oid is None or locations[oid] != room_id or not game.objects[oid].portable:
            return state, NOTHING_HAPPENS, 0, False
        locations[oid] = INVENTORY
        text = "taken."
        matched = [i for i, ev in enumerate(events) if ev.kind == "take" and ev.args[0] == oid]
    elif verb == "drop" and template.blank_count == 1:
        oid = game.object_by_word(w1)
        if oid is None or locations[oid] != INVENTORY:
            return state, NOTHING_HAPPENS, 0, False
        locations[oid] = room_id
        text = "dropped."
    else:
        words = [w for w in (w1, w2) if w is not None][:template.blank_count]
        oids = [game.object_by_word(w) for w in words]
        if any(o is None or locations[o] not in (room_id, INVENTORY) for o in oids):
            return state, NOTHING_HAPPENS, 0, False
        key = (action.template_id,) + tuple(oids)
        matched = [i for i, ev in enumerate(events)
                   if ev.kind == "apply" and ev.args == key and not (ev.once and i in state.fired_events)]
        if not matched:
            return state, NOTHING_HAPPENS, 0, False
        text = "done."

    reward, texts, terminal, fired = _fire(game, events, locations, state.fired_events, room_id, matched)
    if texts:
        text = texts[0] if text == "done." else " ".join([text] + texts)
    new_state = replace(state, player_room=room_id, object_locations=locations, fired_events=fired,
                        cumulative_score=state.cumulative_score + reward)
    return new_state, text, reward, terminal


def step(game: GameSpec, state: WorldState, action: Action) -> tuple:
    """Advance one environment step: ``(state', observation, reward, done)``."""
    if state.done:
        raise SteppedAfterDone(f"{game.game_id}: episode is over")
    new_state, text, reward, terminal = _transition(game, state, action)
    steps = state.steps_taken + 1
    done = terminal or steps >= game.episode_cap
    new_state = replace(new_state, steps_taken=steps, done=done)
    return new_state, _observe(game, new_state, text), reward, done


# --------------------------------------------------------------------------
# Action space handicaps


def _command_text(template: ActionTemplate, w1: Optional[str], w2: Optional[str]) -> str:
    out = []
    for tok in template.surface.split():
        if tok == "OBJ1":
            out.append(w1)
        elif tok == "OBJ2":
            out.append(w2)
        else:
            out.append(tok)
    return " ".join(out).lower()


def make_action(game: GameSpec, template_id: int, f1: Optional[int] = None,
                f2: Optional[int] = None) -> Action:
    template = game.templates[template_id]
    n = template.blank_count
    f1 = f1 if n >= 1 else None
    f2 = f2 if n >= 2 else None
    return Action(template_id, f1, f2, _command_text(template, _filler_word(game, f1), _filler_word(game, f2)))


def enumerate_candidate_actions(game: GameSpec) -> list:
    if game._candidates is None:
        out = []
        fill = range(len(game.filler_vocab))
        for template in game.templates:
            n = template.blank_count
            for combo in itertools.product(fill, repeat=n):
                out.append(make_action(game, template.template_id, *combo))
        game._candidates = out
        game._by_command = {}
        for a in out:
            game._by_command.setdefault(a.command_text, a)
    return list(game._candidates)


def parse_command(game: GameSpec, text: str) -> Optional[Action]:
    """Exact template match after lowercasing and whitespace normalisation."""
    enumerate_candidate_actions(game)
    return game._by_command.get(" ".join(text.lower().split()))


def valid_actions(game: GameSpec, state: WorldState) -> list:
    """Candidates whose execution changes the world digest or pays reward."""
    if state.done:
        raise SteppedAfterDone(f"{game.game_id}: episode is over")
    digest = state_hash(state)
    cached = game._valid_cache.get(digest)
    if cached is None:
        cands = enumerate_candidate_actions(game)
        cached = []
        for i, action in enumerate(cands):
            new_state, _, reward, _ = _transition(game, state, action)
            if reward != 0 or state_hash(new_state) != digest:
                cached.append(i)
        cached = tuple(cached)
        game._valid_cache[digest] = cached
    cands = game._candidates
    return [cands[i] for i in cached]


# --------------------------------------------------------------------------
# Transcripts


@dataclass(frozen=True)
class TranscriptStep:
    observation: Observation
    actions: Sequence
    q_values: Sequence
    action: Action
    reward: int
    score: int
    done: bool = False


def _text_of(a) -> str:
    return a.command_text if isinstance(a, Action) else str(a)


def record_transcript(episode: Sequence) -> str:
    """Render an episode as STATE blocks: state text, actions with Q-values,
    chosen action, reward, running score and done flag."""
    if not episode:
        raise ValueError("transcript needs at least one step")
    blocks = []
    for t, rec in enumerate(episode):
        if not isinstance(rec, TranscriptStep):
            rec = TranscriptStep(*rec)
        actions = [_text_of(a) for a in rec.actions]
        qs = [round(float(q), 2) for q in rec.q_values]
        blocks.append("\n".join([
            f"STATE {t}",
            render_state_text(rec.observation),
            f"Actions:  {actions!r}",
            f"Qvalues:  {qs!r}",
            f"  Action:  {_text_of(rec.action)}",
            f"Reward:  {rec.reward}, Score {rec.score}, Done {bool(rec.done)}",
        ]))
    final = episode[-1]
    final_score = final.score if isinstance(final, TranscriptStep) else final[5]
    return "\n\n".join(blocks) + f"\n\nEpisode finished. Score {final_score}\n"
