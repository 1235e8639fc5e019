import copy
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from ifagents import env as E
from ifagents.errors import GameParseError, GameValidationError, SteppedAfterDone

TREASURE_WALK = [
    "go east", "go north", "take key", "go south", "go down", "go north",
    "take lamp", "go south", "go up", "go west", "unlock chest with key", "take treasure",
]


@pytest.fixture(scope="module")
def tworoom():
    return E.bundled_game("tworoom")


@pytest.fixture(scope="module")
def treasure():
    return E.bundled_game("treasure")


def act(game, text):
    a = E.parse_command(game, text)
    assert a is not None, text
    return a


def run(game, commands):
    state, obs = E.reset(game)
    total = 0
    for c in commands:
        state, obs, r, done = E.step(game, state, act(game, c))
        total += r
    return state, obs, total


# -- loading


def test_tworoom_shape(tworoom):
    assert len(tworoom.rooms) == 2
    assert len(tworoom.objects) == 1
    assert tworoom.max_score == 5


def test_treasure_shape(treasure):
    assert treasure.game_id == "treasure-house"
    assert len(treasure.rooms) == 5
    assert len(treasure.reward_events) == 3
    assert sum(ev.points for ev in treasure.reward_events) == 10


def test_dangling_exit_rejected():
    text = "[meta]\nstart: a\n[room a]\nname: a\nexit: east nowhere_room\n[template] look\n[fillers] east\n"
    with pytest.raises(GameValidationError):
        E.load_game(text)


def test_dangling_reward_object_rejected():
    text = ("[meta]\nstart: a\n[room a]\nname: a\n[template] take OBJ1\n[fillers] coin\n"
            "[reward]\ntrigger: take coin\npoints: 1\n")
    with pytest.raises(GameValidationError):
        E.load_game(text)


def test_dangling_consume_rejected():
    text = ("[meta]\nstart: a\n[room a]\nname: a\n[object coin]\nname: coin\nloc: a\n"
            "[template] take OBJ1\n[fillers] coin\n[reward]\ntrigger: take coin\npoints: 1\nconsume: gem\n")
    with pytest.raises(GameValidationError):
        E.load_game(text)


def test_parse_error_reports_line():
    text = "[meta]\nstart: a\n[room a]\nname a\n"
    with pytest.raises(GameParseError) as exc:
        E.load_game(text)
    assert exc.value.line == 4


def test_unknown_section_is_parse_error():
    with pytest.raises(GameParseError):
        E.load_game("[meta]\nstart: a\n[cupboard]\n")


def test_empty_templates_rejected():
    with pytest.raises(GameValidationError):
        E.load_game("[meta]\nstart: a\n[room a]\nname: a\n[fillers] x\n")


# -- reset / step


def test_reset_tworoom(tworoom):
    state, obs = E.reset(tworoom)
    assert state.player_room == "a"
    assert state.object_locations == {"coin": "b"}
    assert state.cumulative_score == 0 and state.steps_taken == 0 and not state.done
    assert obs.event_text == "room a. a bare white room."


def test_reset_is_deterministic(treasure):
    assert E.reset(treasure) == E.reset(treasure)


def test_reset_treasure_inventory_empty(treasure):
    _, obs = E.reset(treasure)
    assert obs.inventory_text == "you are empty handed."
    assert all((obs.event_text, obs.inventory_text, obs.look_text))


def test_step_go_east(tworoom):
    state, _ = E.reset(tworoom)
    state, obs, r, done = E.step(tworoom, state, act(tworoom, "go east"))
    assert state.player_room == "b" and r == 0 and not done


def test_take_coin_terminal(tworoom):
    state, _, total = run(tworoom, ["go east"])
    state, obs, r, done = E.step(tworoom, state, act(tworoom, "take coin"))
    assert state.object_locations["coin"] == E.INVENTORY
    assert r == 5 and done
    assert obs.inventory_text == "you carry: coin"
    with pytest.raises(SteppedAfterDone):
        E.step(tworoom, state, act(tworoom, "look"))


def test_invalid_command_consumes_step(tworoom):
    state, _ = E.reset(tworoom)
    new, obs, r, done = E.step(tworoom, state, act(tworoom, "go north"))
    assert obs.event_text == E.NOTHING_HAPPENS
    assert r == 0
    assert new.steps_taken == 1
    assert E.state_hash(new) == E.state_hash(state)


def test_episode_cap(tworoom):
    state, _ = E.reset(tworoom)
    for _ in range(tworoom.episode_cap):
        state, _, _, done = E.step(tworoom, state, act(tworoom, "look"))
    assert done and state.steps_taken == tworoom.episode_cap


def test_carried_objects_gate_exits(treasure):
    state, _, _ = run(treasure, ["go east", "go down"])
    assert state.player_room == "hallway"
    state, _, _ = run(treasure, TREASURE_WALK[:5])
    assert state.player_room == "cellar"
    state, _, _ = run(treasure, TREASURE_WALK[:5] + ["go up", "go west"])
    assert state.player_room == "hallway"
    state, _, _ = run(treasure, TREASURE_WALK[:10])
    assert state.player_room == "foyer"


def test_consume_removes_object(treasure):
    state, obs, _ = run(treasure, TREASURE_WALK[:11])
    assert state.object_locations["key"] == E.NOWHERE
    assert state.object_locations["treasure"] == "foyer"
    assert obs.inventory_text == "you carry: lamp"
    assert "unlock chest with key" not in [a.command_text for a in E.valid_actions(treasure, state)]


def test_treasure_walkthrough_scores_ten(treasure):
    state, obs, total = run(treasure, TREASURE_WALK)
    assert total == 10 == state.cumulative_score
    assert state.done and state.steps_taken == 12


def test_once_event_pays_once():
    text = ("[meta]\nstart: a\n[room a]\nname: a\n[object gem]\nname: gem\nloc: a\n"
            "[template] take OBJ1\n[template] drop OBJ1\n[fillers] gem\n"
            "[reward]\ntrigger: take gem\npoints: 2\nonce: true\n")
    game = E.load_game(text)
    state, _, total = run(game, ["take gem", "drop gem", "take gem"])
    assert total == 2 and state.object_locations["gem"] == E.INVENTORY


def test_bundled_games_have_no_dead_ends():
    # from every reachable state the maximum score is still attainable
    from ifagents.harness import _enumerate_states

    for name in ("tworoom", "treasure", "cottage"):
        game = E.bundled_game(name)
        _, states, edges = _enumerate_states(game, 10_000)
        best = {k: s.cumulative_score for k, s in states.items()}
        changed = True
        while changed:
            changed = False
            for k, out in edges.items():
                for _, r, term, k2 in out:
                    v = states[k].cumulative_score + r if term else best[k2]
                    if v > best[k]:
                        best[k], changed = v, True
        assert min(best.values()) == game.max_score, name


# -- handicaps


def test_candidate_count_mixed_blanks():
    text = ("[meta]\nstart: a\n[room a]\nname: a\n[template] look\n[template] take OBJ1\n"
            "[template] put OBJ1 in OBJ2\n[fillers] w x y z\n")
    game = E.load_game(text)
    cands = E.enumerate_candidate_actions(game)
    assert len(cands) == 1 + 4 + 16
    assert cands == E.enumerate_candidate_actions(game)
    assert cands[1].command_text == "take w"
    assert cands[5].command_text == "put w in w" and cands[6].command_text == "put w in x"


def test_tworoom_candidates(tworoom):
    cands = E.enumerate_candidate_actions(tworoom)
    assert len(cands) == 11
    assert [a.command_text for a in cands][:5] == ["go north", "go south", "go east", "go west", "go coin"]


def test_valid_actions_tworoom(tworoom):
    state, _ = E.reset(tworoom)
    assert [a.command_text for a in E.valid_actions(tworoom, state)] == ["go east"]
    state, _, _ = run(tworoom, ["go east"])
    assert [a.command_text for a in E.valid_actions(tworoom, state)] == ["go west", "take coin"]


def test_render_state_text():
    obs = E.Observation("taken.", "you carry: coin", "Room B. ...")
    assert E.render_state_text(obs) == "taken. | you carry: coin | Room B. ..."
    assert E.render_state_text(obs).count(E.SEPARATOR) == 2


def test_state_hash_fields(tworoom):
    state, _ = E.reset(tworoom)
    assert E.state_hash(state) == E.state_hash(copy.deepcopy(state))
    assert E.state_hash(replace(state, player_room="b")) != E.state_hash(state)
    assert E.state_hash(replace(state, steps_taken=7, cumulative_score=3)) == E.state_hash(state)


# -- transcripts


def test_transcript_single_step(tworoom):
    state, obs = E.reset(tworoom)
    a = act(tworoom, "go east")
    text = E.record_transcript([(obs, [a], [9.0733], a, 0, 0)])
    assert text.count("STATE ") == 1 and "STATE 0" in text
    assert "Qvalues:  [9.07]" in text
    assert "  Action:  go east" in text
    assert text.rstrip().endswith("Episode finished. Score 0")


def test_transcript_optimal_treasure(treasure):
    state, obs = E.reset(treasure)
    steps = []
    for c in TREASURE_WALK:
        a = act(treasure, c)
        new, new_obs, r, done = E.step(treasure, state, a)
        steps.append(E.TranscriptStep(obs, [a], [1.0], a, r, new.cumulative_score, done))
        state, obs = new, new_obs
    text = E.record_transcript(steps)
    assert text.count("STATE ") == 12
    assert text.rstrip().endswith("Score 10")


# -- properties

commands = st.lists(st.integers(min_value=0, max_value=119), max_size=40)


@settings(max_examples=60, deadline=None)
@given(commands)
def test_reward_accounting_and_determinism(treasure, seq):
    cands = E.enumerate_candidate_actions(treasure)
    state, _ = E.reset(treasure)
    total = 0
    for i in seq:
        if state.done:
            break
        a = cands[i]
        out1 = E.step(treasure, state, a)
        out2 = E.step(treasure, copy.deepcopy(state), a)
        assert out1 == out2
        state, _, r, _ = out1
        total += r
        assert state.cumulative_score == total
        assert state.steps_taken <= treasure.episode_cap
    assert total <= treasure.max_score


@settings(max_examples=40, deadline=None)
@given(commands)
def test_valid_action_soundness_completeness(treasure, seq):
    cands = E.enumerate_candidate_actions(treasure)
    state, _ = E.reset(treasure)
    for i in seq:
        if state.done:
            break
        before = (E.state_hash(state), state.steps_taken)
        valid = {a.command_text for a in E.valid_actions(treasure, state)}
        assert (E.state_hash(state), state.steps_taken) == before
        for a in cands:
            new, _, r, _ = E.step(treasure, state, a)
            changed = r != 0 or E.state_hash(new) != before[0]
            assert changed == (a.command_text in valid)
        state, _, _, _ = E.step(treasure, state, cands[i])
