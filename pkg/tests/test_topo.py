import copy
import json
import math

import numpy as np
import pytest

from socnav import topo
from socnav import train as tr
from socnav.world import Candidate


def small_graph(seed=0):
    """Graph after one update at the origin with three candidates."""
    fusion = topo.init_policy(seed).fusion
    g = topo.TopoGraph()
    cands = [Candidate(0, (3.0, 0.0)), Candidate(3, (0.0, 3.0)),
             Candidate(6, (-2.0, 0.0))]
    feats = [np.full(64, 0.1), np.full(64, 0.2), np.full(64, 0.3)]
    active = topo.update_graph(g, np.array([0.0, 0.0, 0.0]), cands, feats,
                               np.full(64, 0.5), fusion, step=0)
    return g, fusion, active


# ---------------------------------------------------------------------------
# instruction tokens


def test_tokenizer_keeps_lowercase_alnum_runs():
    toks = topo.InstructionTokens.from_text("Walk PAST the window, then stop!")
    assert len(toks.ids) == 6
    assert toks.ids == topo.InstructionTokens.from_text(
        "walk past the window then stop").ids
    assert all(0 <= t < topo.VOCAB_SIZE for t in toks.ids)


def test_tokenizer_truncates_long_instructions():
    text = " ".join(f"word{i}" for i in range(100))
    toks = topo.InstructionTokens.from_text(text)
    assert len(toks.ids) == topo.MAX_TOKENS


def test_tokenizer_empty_text_yields_sentinel():
    assert topo.InstructionTokens.from_text("").ids == (0,)
    assert topo.InstructionTokens.from_text("?!").ids == (0,)


def test_tokenizer_repeated_words_share_ids():
    toks = topo.InstructionTokens.from_text("door door window door")
    assert toks.ids[0] == toks.ids[1] == toks.ids[3]
    assert toks.ids[2] != toks.ids[0]


# ---------------------------------------------------------------------------
# fusion


def test_fuse_averages_human_features():
    p = topo.init_policy(1).fusion
    static = np.linspace(-1.0, 1.0, 64)
    h1 = np.full(128, 0.5)
    h2 = np.full(128, 1.5)
    out = topo.fuse(static, [h1, h2], p)
    direct = topo.fuse_summary(static, np.full(128, 1.0), p)
    assert out.shape == (64,)
    np.testing.assert_array_equal(out, direct)


def test_fuse_empty_human_list_uses_zero_summary():
    p = topo.init_policy(1).fusion
    static = np.linspace(-1.0, 1.0, 64)
    np.testing.assert_array_equal(
        topo.fuse(static, [], p),
        topo.fuse_summary(static, np.zeros(128), p))


# ---------------------------------------------------------------------------
# graph maintenance


def test_first_update_builds_star_around_agent():
    g, _, active = small_graph()
    assert active == [1, 2, 3]
    assert sorted(g.nodes) == [0, 1, 2, 3]
    assert g.current_id == 0
    assert g.nodes[0].kind == "current"
    assert all(g.nodes[i].kind == "candidate" for i in (1, 2, 3))
    assert sorted(g.edges) == [(0, 1), (0, 2), (0, 3)]
    assert g.edges[(0, 1)] == pytest.approx(3.0)
    assert g.edges[(0, 3)] == pytest.approx(2.0)


def test_nearby_proposal_merges_without_moving_node():
    g, fusion, _ = small_graph()
    fresh = np.full(64, 0.9)
    active = topo.update_graph(
        g, np.array([0.0, 0.0, 0.0]), [Candidate(0, (3.2, 0.2))], [fresh],
        np.full(64, 0.5), fusion, step=1)
    assert active == [1]
    assert sorted(g.nodes) == [0, 1, 2, 3]
    np.testing.assert_array_equal(g.nodes[1].position, [3.0, 0.0])
    np.testing.assert_array_equal(g.nodes[1].static, fresh)
    assert g.nodes[1].last_updated == 1


def test_far_proposal_becomes_new_node():
    g, fusion, _ = small_graph()
    active = topo.update_graph(
        g, np.array([0.0, 0.0, 0.0]), [Candidate(1, (2.0, 2.0))],
        [np.full(64, 0.7)], np.full(64, 0.5), fusion, step=1)
    assert active == [4]
    assert g.nodes[4].kind == "candidate"
    assert g.edges[(0, 4)] == pytest.approx(math.hypot(2.0, 2.0))


def test_arriving_at_known_node_reanchors_there():
    g, fusion, _ = small_graph()
    active = topo.update_graph(
        g, np.array([3.0, 0.0, 0.0]), [Candidate(0, (3.2, 0.2))],
        [np.full(64, 0.4)], np.full(64, 0.6), fusion, step=1)
    # no duplicate node at the old candidate's position
    assert sorted(g.nodes) == [0, 1, 2, 3]
    assert g.current_id == 1
    assert g.nodes[0].kind == "visited"
    assert g.nodes[1].kind == "current"
    np.testing.assert_array_equal(g.nodes[1].static, np.full(64, 0.6))
    # the proposal merged into the node the agent stands on: not a move option
    assert active == []


def test_arriving_at_new_place_adds_current_node_and_edge():
    g, fusion, _ = small_graph()
    active = topo.update_graph(
        g, np.array([0.0, -2.5, 0.0]), [Candidate(0, (0.0, -5.0))],
        [np.full(64, 0.4)], np.full(64, 0.6), fusion, step=1)
    assert g.current_id == 4
    assert g.nodes[4].kind == "current"
    assert g.nodes[0].kind == "visited"
    assert g.edges[(0, 4)] == pytest.approx(2.5)
    assert active == [5]
    assert g.edges[(4, 5)] == pytest.approx(2.5)


def test_update_is_idempotent():
    g, fusion, _ = small_graph()
    args = (np.array([3.0, 0.0, 0.0]), [Candidate(0, (3.2, 0.2))],
            [np.full(64, 0.4)], np.full(64, 0.6))
    a1 = topo.update_graph(g, *args, fusion, step=1)
    snap = topo.graph_snapshot(g)
    a2 = topo.update_graph(g, *args, fusion, step=1)
    assert a1 == a2
    assert topo.graph_snapshot(g) == snap


def test_nearest_node_breaks_ties_by_lower_id():
    g = topo.TopoGraph()
    g.add_node([1.0, 0.0], "candidate", np.zeros(64), 0)
    g.add_node([-1.0, 0.0], "candidate", np.zeros(64), 0)
    hit = g.nearest_node([0.0, 0.0], radius=2.0)
    assert hit.node_id == 0
    assert g.nearest_node([0.0, 0.0], radius=0.5) is None


def test_geodesic_matrix_marks_unreachable_pairs():
    g = topo.TopoGraph()
    g.add_node([0.0, 0.0], "current", np.zeros(64), 0)
    g.add_node([1.0, 0.0], "candidate", np.zeros(64), 0)
    g.add_node([9.0, 0.0], "candidate", np.zeros(64), 0)
    g.add_edge(0, 1)
    d = g.geodesic_matrix([0, 1, 2])
    assert d[0, 0] == 0.0
    assert d[0, 1] == pytest.approx(1.0)
    assert d[0, 2] == topo.UNREACHABLE
    assert d[2, 1] == topo.UNREACHABLE


def test_zero_length_edge_rejected():
    g = topo.TopoGraph()
    g.add_node([0.0, 0.0], "current", np.zeros(64), 0)
    g.add_node([0.0, 0.0], "candidate", np.zeros(64), 0)
    with pytest.raises(ValueError):
        g.add_edge(0, 1)


# ---------------------------------------------------------------------------
# human assignment


def humans_fixture():
    return [
        (1, np.array([3.1, 0.1]), np.full(128, 1.0), np.full(128, 2.0)),
        (0, np.array([-1.8, 0.3]), np.full(128, 0.5), np.full(128, 0.25)),
        (2, np.array([2.9, -0.2]), np.full(128, 3.0), np.full(128, 1.0)),
    ]


def test_assign_humans_groups_by_nearest_node():
    g, fusion, _ = small_graph()
    asg = topo.assign_humans(g, humans_fixture(), fusion)
    assert asg == {1: [1, 2], 3: [0]}
    # summary is the mean of geo + sem over the node's humans
    np.testing.assert_allclose(g.nodes[1].human_summary,
                               np.full(128, (3.0 + 4.0) / 2.0))
    np.testing.assert_allclose(g.nodes[3].human_summary, np.full(128, 0.75))
    np.testing.assert_array_equal(g.nodes[2].human_summary, np.zeros(128))


def test_assign_humans_ignores_visited_nodes():
    g, fusion, _ = small_graph()
    topo.update_graph(g, np.array([3.0, 0.0, 0.0]), [], [],
                      np.full(64, 0.6), fusion, step=1)
    assert g.nodes[0].kind == "visited"
    # a human sitting on the visited origin node lands elsewhere
    asg = topo.assign_humans(
        g, [(7, np.array([0.0, 0.0]), np.zeros(128), np.zeros(128))], fusion)
    assert 0 not in asg


def test_assign_humans_is_order_invariant():
    g1, fusion, _ = small_graph()
    g2, _, _ = small_graph()
    asg1 = topo.assign_humans(g1, humans_fixture(), fusion)
    asg2 = topo.assign_humans(g2, list(reversed(humans_fixture())), fusion)
    assert asg1 == asg2
    for nid in g1.nodes:
        np.testing.assert_array_equal(g1.nodes[nid].human_summary,
                                      g2.nodes[nid].human_summary)
        np.testing.assert_array_equal(g1.nodes[nid].fused,
                                      g2.nodes[nid].fused)


# ---------------------------------------------------------------------------
# scorer


def test_fresh_policy_scores_uniformly():
    g, _, active = small_graph()
    params = topo.init_policy(3)
    toks = topo.InstructionTokens.from_text("walk to the far window")
    probs, actions = topo.score(g, active, toks, params)
    assert actions == [1, 2, 3, "stop"]
    np.testing.assert_allclose(probs, 0.25, atol=1e-15)
    assert probs.sum() == pytest.approx(1.0)


def test_score_distribution_with_random_head():
    g, _, active = small_graph()
    params = tr.random_policy(5)
    toks = topo.InstructionTokens.from_text("walk to the far window")
    probs, actions = topo.score(g, active, toks, params)
    assert probs.shape == (4,)
    assert np.all(probs > 0.0)
    assert probs.sum() == pytest.approx(1.0)
    # not uniform once the head has weights
    assert probs.max() - probs.min() > 1e-6


def test_alpha_zero_removes_distance_sensitivity():
    inputs, _, _ = tr.synthetic_policy_case(seed=2)
    params = tr.random_policy(2)
    params.scorer.alpha = np.array([0.0])
    p1, _ = topo.policy_forward(inputs, params)
    inputs2 = copy.deepcopy(inputs)
    inputs2.dist = inputs.dist * 3.0
    p2, _ = topo.policy_forward(inputs2, params)
    np.testing.assert_array_equal(p1, p2)


def test_alpha_positive_biases_against_distance():
    inputs, _, _ = tr.synthetic_policy_case(seed=2)
    params = tr.random_policy(2)
    p1, _ = topo.policy_forward(inputs, params)
    inputs2 = copy.deepcopy(inputs)
    inputs2.dist = inputs.dist * 3.0
    p2, _ = topo.policy_forward(inputs2, params)
    assert np.max(np.abs(p1 - p2)) > 1e-9


def test_softmax_rows_handles_large_logits():
    s = np.array([[1000.0, 1001.0], [0.0, 1.0]])
    out = topo._softmax_rows(s)
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out[0], out[1], atol=1e-12)


def test_graph_inputs_row_order_and_indices():
    g, fusion, active = small_graph()
    toks = topo.InstructionTokens.from_text("go")
    inputs = topo.graph_inputs(g, active, toks)
    assert inputs.static.shape == (4, 64)
    assert inputs.summary.shape == (4, 128)
    assert inputs.dist.shape == (4, 4)
    assert inputs.cur_idx == 0
    np.testing.assert_array_equal(inputs.cand_idx, [1, 2, 3])
    np.testing.assert_array_equal(inputs.static[1], np.full(64, 0.1))
    assert inputs.token_ids == toks.ids
    # geodesic between candidates routes through the current node
    assert inputs.dist[1, 2] == pytest.approx(6.0)


def test_policy_gradients_match_finite_differences():
    inputs, expert_idx, penalties = tr.synthetic_policy_case(seed=4)
    params = tr.random_policy(4)
    worst = tr.policy_grad_check(inputs, params, expert_idx, penalties,
                                 n_probes=12, seed=4)
    assert worst < 1e-4


# ---------------------------------------------------------------------------
# snapshot


def test_snapshot_is_json_round_trippable():
    g, fusion, _ = small_graph()
    topo.assign_humans(g, humans_fixture(), fusion)
    snap = topo.graph_snapshot(g)
    back = json.loads(json.dumps(snap))
    assert back == snap
    assert snap["current"] == 0
    assert [n["id"] for n in snap["nodes"]] == [0, 1, 2, 3]
    assert {n["kind"] for n in snap["nodes"]} == {"current", "candidate"}
    assert snap["edges"][0] == [0, 1, 3.0]
    assert all(len(e) == 3 for e in snap["edges"])
