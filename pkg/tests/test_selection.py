import math
from collections import Counter

import numpy as np
import pytest

from pairea.errors import SelectionError, TransportError, ValidationError
from pairea.llm_bridge import LlmSession, ModelEndpointConfig, scripted_transport
from pairea.operators import ox
from pairea.plan import Pair, plan_violations
from pairea.selection import (
    SelectionRequest,
    proxy_child,
    select,
    select_pair_llm,
    select_pair_mock,
    select_random,
)
from pairea.tsp_core import Individual, generate_rue

INST8 = generate_rue(8, 5)
TOURS4 = [
    [0, 1, 2, 3, 4, 5, 6, 7],
    [0, 2, 4, 6, 1, 3, 5, 7],
    [1, 0, 2, 3, 5, 4, 6, 7],
    [3, 1, 4, 0, 5, 2, 7, 6],
]


def pool_of(instance, tours):
    return [Individual.from_tour(instance, t) for t in tours]


def random_pool(instance, size, seed):
    rng = np.random.default_rng(seed)
    return [Individual.from_tour(instance, rng.permutation(instance.n)) for _ in range(size)]


def session(script, mode="engine_executes", **kw):
    cfg = ModelEndpointConfig(model_name="test-model", max_requeries_per_generation=kw.pop("requeries", 2))
    transport = scripted_transport(script)
    return LlmSession(cfg, transport=transport, mode=mode, **kw), transport


# -- random baseline ---------------------------------------------------------

def test_random_pool_of_two_forced():
    pool = random_pool(INST8, 2, 0)
    plan = select_random(SelectionRequest(pool, 1, INST8, rng=3))
    assert {plan.pairs[0].a, plan.pairs[0].b} == {0, 1}
    assert plan.provenance == "random"


def test_random_is_deterministic_per_seed():
    pool = random_pool(INST8, 16, 0)
    a = select_random(SelectionRequest(pool, 16, INST8, rng=7))
    b = select_random(SelectionRequest(pool, 16, INST8, rng=7))
    assert a == b
    assert a != select_random(SelectionRequest(pool, 16, INST8, rng=8))


def chi2_critical(df, z=3.090232):
    # Wilson-Hilferty approximation of the upper 0.1% point
    return df * (1 - 2 / (9 * df) + z * math.sqrt(2 / (9 * df))) ** 3


def test_random_pair_frequencies_uniform():
    pool = random_pool(INST8, 16, 0)
    pairs = Counter()
    xo = Counter()
    for seed in range(10_000):
        for p in select_random(SelectionRequest(pool, 16, INST8, rng=seed)).pairs:
            assert p.a != p.b
            pairs[frozenset((p.a, p.b))] += 1
            xo[p.crossover] += 1
    assert len(pairs) == 120
    expected = 160_000 / 120
    stat = sum((c - expected) ** 2 / expected for c in pairs.values())
    assert stat < chi2_critical(119)
    stat_xo = sum((c - 160_000 / 3) ** 2 / (160_000 / 3) for c in xo.values())
    assert stat_xo < chi2_critical(2)


def test_random_reuses_individuals():
    pool = random_pool(INST8, 16, 0)
    plan = select_random(SelectionRequest(pool, 16, INST8, rng=0))
    refs = Counter(r for p in plan.pairs for r in (p.a, p.b))
    assert max(refs.values()) > 1


def test_request_validation():
    with pytest.raises(ValidationError):
        SelectionRequest(random_pool(INST8, 1, 0), 1, INST8)
    with pytest.raises(ValidationError):
        SelectionRequest(random_pool(INST8, 4, 0), 0, INST8)


# -- mock PAIR ---------------------------------------------------------------

def edge_set(t):
    return {frozenset((t[k], t[(k + 1) % len(t)])) for k in range(len(t))}


def test_mock_four_pool_score_table():
    pool = pool_of(INST8, TOURS4)
    lengths = [p.length for p in pool]
    # frozen lengths and the first chooser's score row
    assert lengths == pytest.approx([490.34124078759567, 388.7293752223764,
                                     477.7097434057498, 547.7042708616377], rel=1e-12)
    chooser = 1
    scores = {}
    for c in (0, 2, 3):
        div = len(edge_set(TOURS4[chooser]) - edge_set(TOURS4[c])) / 8
        scores[c] = div - (lengths[c] / lengths[chooser] - 1)
    assert scores == pytest.approx({0: 0.6136051272634304, 2: 0.3960994489869172,
                                    3: 0.46603966468106983}, rel=1e-12)
    # second step: 2, 3 and the child of (1, 0) compete
    child = Individual.from_tour(INST8, ox(TOURS4[1], TOURS4[0], 2, 6))
    second_chooser = min([(lengths[2], 2), (lengths[3], 3), (child.length, 4)])[1]
    assert second_chooser == 2
    plan = select_pair_mock(SelectionRequest(pool, 2, INST8))
    assert [(p.a, p.b) for p in plan.pairs] == [(1, 0), (2, 3)]
    assert all((p.crossover, p.mutation) == ("OX", "inversion") for p in plan.pairs)


def test_mock_pool_of_two():
    pool = pool_of(INST8, TOURS4[:2])
    plan = select_pair_mock(SelectionRequest(pool, 1, INST8))
    assert (plan.pairs[0].a, plan.pairs[0].b) == (1, 0)


def test_mock_identical_tours_use_index_order():
    pool = pool_of(INST8, [TOURS4[0]] * 6)
    plan = select_pair_mock(SelectionRequest(pool, 3, INST8))
    assert [(p.a, p.b) for p in plan.pairs] == [(0, 1), (2, 3), (4, 5)]


def test_proxy_child_uses_quarter_cuts():
    a, b = pool_of(INST8, TOURS4[:2])
    assert proxy_child(a, b, INST8).tour == tuple(ox(a.tour, b.tour, 2, 6))


@pytest.mark.parametrize("size", range(3, 17))
def test_mock_monogamy_and_replenishment(size):
    inst = generate_rue(12, size)
    for seed in range(5):
        pool = random_pool(inst, size, seed)
        plan = select_pair_mock(SelectionRequest(pool, size, inst))
        assert plan_violations(plan.pairs, size, size) == []


def test_mock_pool_of_two_cannot_fill_two_pairs():
    # one pair uses both members and yields one child, which has nobody to pair with
    pool = pool_of(INST8, TOURS4[:2])
    with pytest.raises(SelectionError, match="only supply 1"):
        select_pair_mock(SelectionRequest(pool, 2, INST8))


def test_mock_reuses_children_after_replenishment():
    pool = pool_of(INST8, TOURS4)
    plan = select_pair_mock(SelectionRequest(pool, 4, INST8))
    assert [(p.a, p.b) for p in plan.pairs] == [(1, 0), (2, 3), (4, 5), (4, 5)]


def test_mock_rejects_negative_weights():
    with pytest.raises(ValidationError):
        select_pair_mock(SelectionRequest(pool_of(INST8, TOURS4), 2, INST8), (-1.0, 1.0))


# -- model-driven ------------------------------------------------------------

def test_llm_valid_reply_passes_through():
    pool = pool_of(INST8, TOURS4)
    reply = "PAIR 0 2 CROSSOVER=PMX MUTATION=swap\nPAIR 1 3 CROSSOVER=CX MUTATION=insertion\n"
    sess, transport = session([reply])
    plan = select_pair_llm(SelectionRequest(pool, 2, INST8), sess)
    assert plan.pairs == (Pair(0, 2, "PMX", "swap"), Pair(1, 3, "CX", "insertion"))
    assert plan.provenance == "llm"
    assert transport.calls == 1 and sess.requeries == 0


def test_llm_self_pair_repaired():
    pool = pool_of(INST8, TOURS4)
    reply = "PAIR 3 3 CROSSOVER=OX MUTATION=swap\nPAIR 1 2 CROSSOVER=OX MUTATION=swap\n"
    sess, transport = session([reply])
    plan = select_pair_llm(SelectionRequest(pool, 2, INST8), sess)
    assert plan_violations(plan.pairs, 4, 2) == []
    assert plan.pairs[0].a == 3 and plan.pairs[0].b != 3
    assert sess.repairs >= 1 and transport.calls == 1


def test_llm_reused_member_repaired():
    pool = pool_of(INST8, TOURS4)
    reply = "PAIR 0 1 CROSSOVER=OX MUTATION=swap\nPAIR 1 2 CROSSOVER=OX MUTATION=swap\n"
    sess, _ = session([reply])
    plan = select_pair_llm(SelectionRequest(pool, 2, INST8), sess)
    assert plan_violations(plan.pairs, 4, 2) == []
    assert plan.pairs[1].a == 2


def test_llm_missing_pair_requeried_once():
    pool = pool_of(INST8, TOURS4)
    short = "PAIR 0 1 CROSSOVER=OX MUTATION=swap\n"
    full = "PAIR 0 1 CROSSOVER=OX MUTATION=swap\nPAIR 2 3 CROSSOVER=OX MUTATION=swap\n"
    sess, transport = session([short, full])
    plan = select_pair_llm(SelectionRequest(pool, 2, INST8), sess)
    assert len(plan) == 2
    assert transport.calls == 2 and sess.requeries == 1
    assert "2 are required" in transport.requests[1].user


def test_llm_child_reference_allowed():
    pool = pool_of(INST8, TOURS4)
    reply = ("PAIR 0 1 CROSSOVER=OX MUTATION=swap\nPAIR 2 3 CROSSOVER=OX MUTATION=swap\n"
             "PAIR 4 5 CROSSOVER=OX MUTATION=swap\n")
    sess, _ = session([reply])
    plan = select_pair_llm(SelectionRequest(pool, 3, INST8), sess)
    assert plan.pairs[2] == Pair(4, 5, "OX", "swap")


def test_llm_exhausted_requeries_raise_with_raw_output():
    pool = pool_of(INST8, TOURS4)
    sess, transport = session(["nothing useful", "still nothing", "no"], requeries=2)
    with pytest.raises(SelectionError) as exc:
        select_pair_llm(SelectionRequest(pool, 2, INST8), sess)
    assert exc.value.raw_output == "no"
    assert transport.calls == 3


def test_llm_transport_error_propagates():
    pool = pool_of(INST8, TOURS4)
    sess, _ = session([])
    sess.cfg.max_retries = 1
    with pytest.raises(TransportError):
        select_pair_llm(SelectionRequest(pool, 2, INST8), sess)


def test_llm_executes_children_kept():
    pool = pool_of(INST8, TOURS4)
    reply = ("PAIR 0 1 CROSSOVER=OX MUTATION=swap CHILD=7,6,5,4,3,2,1,0\n"
             "PAIR 2 3 CROSSOVER=OX MUTATION=swap CHILD=0,1,2,3,4,5,6,7\n")
    sess, _ = session([reply], mode="llm_executes")
    plan = select_pair_llm(SelectionRequest(pool, 2, INST8), sess)
    assert plan.pairs[0].child == (7, 6, 5, 4, 3, 2, 1, 0)


def test_llm_invalid_child_repaired_without_requery():
    pool = pool_of(INST8, TOURS4)
    reply = ("PAIR 0 1 CROSSOVER=OX MUTATION=swap CHILD=7,6,5,4,3,2,1,1\n"
             "PAIR 2 3 CROSSOVER=OX MUTATION=swap CHILD=0,1,2,3,4,5,6,7\n")
    sess, transport = session([reply], mode="llm_executes")
    plan = select_pair_llm(SelectionRequest(pool, 2, INST8), sess)
    assert plan.pairs[0].child is None and plan.pairs[1].child is not None
    assert transport.calls == 1 and sess.repairs == 1


def test_llm_per_pair_mode():
    pool = pool_of(INST8, TOURS4)
    replies = ["PAIR 1 0 CROSSOVER=OX MUTATION=swap", "PAIR 3 3 CROSSOVER=CX MUTATION=swap"]
    sess, transport = session(replies, per_pair=True)
    plan = select_pair_llm(SelectionRequest(pool, 2, INST8), sess)
    assert transport.calls == 2
    assert "id 0:" not in transport.requests[1].user and "id 4:" in transport.requests[1].user
    assert plan_violations(plan.pairs, 4, 2) == []


def test_select_dispatch():
    pool = pool_of(INST8, TOURS4)
    req = SelectionRequest(pool, 2, INST8, rng=0)
    assert select("pair_mock", req).provenance == "mock"
    assert select("random_lmea", req).provenance == "random"
    with pytest.raises(ValidationError):
        select("pair_llm", req)
    with pytest.raises(ValidationError):
        select("tournament", req)
