import json
import random

import networkx as nx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from otplint.locator import (
    Candidate,
    LocatorConfig,
    LocatorConfigError,
    ModelError,
    TestActivity,
    build_dependency_graphs,
    bundled_path,
    feedback_optimize,
    find_embedding,
    find_sms_widgets,
    lcs_len,
    load_corpus,
    locate_login,
    match_graph,
    mutate_activity,
    similarity_set,
    parse_app_model,
    parse_candidates,
    select_candidate,
    sms_otp_activities,
)

from oracles import lcs_brute


def model_text(**doc):
    return json.dumps(doc, indent=2)


def graph(*edges):
    g = nx.DiGraph()
    g.add_edges_from(edges)
    return g


def test_empty_model():
    assert parse_app_model("{}").activities == {}


def test_shopapp_sample():
    m = parse_app_model(bundled_path("shopapp.model"))
    assert len(m.activities) == 3


def test_dangling_edge_reports_line():
    text = model_text(methods=[{"name": "a", "calls": ["x"]}], edges=[["a", "ghost"]])
    with pytest.raises(ModelError) as info:
        parse_app_model(text)
    assert info.value.line is not None and "ghost" in str(info.value)
    with pytest.raises(ModelError):
        parse_app_model(model_text(edges=[["nobody", "x"]]))


def test_schema_errors():
    with pytest.raises(ModelError):
        parse_app_model(model_text(activities=[{"name": "A", "methods": ["missing"]}]))
    with pytest.raises(ModelError):
        parse_app_model(model_text(activities=[{"name": "A"}, {"name": "A"}]))
    with pytest.raises(ModelError) as info:
        parse_app_model('{\n  "activities": [\n}')
    assert info.value.line == 3


def test_graph_filters_redundant():
    m = parse_app_model(model_text(activities=[{"name": "A", "methods": ["m"]}],
                                   methods=[{"name": "m", "calls": ["toString"]}]))
    assert build_dependency_graphs(m)["A"].number_of_nodes() == 0


def test_graph_inlines_helpers():
    m = parse_app_model(model_text(
        activities=[{"name": "A", "methods": ["onClick"]}],
        methods=[{"name": "onClick", "calls": ["helper"]}, {"name": "helper", "calls": ["sendSms", "printStackTrace"]}],
    ))
    g = build_dependency_graphs(m)["A"]
    assert nx.has_path(g, "helper", "sendSms")
    assert "printStackTrace" not in g


def test_graph_keeps_cycles():
    m = parse_app_model(model_text(
        activities=[{"name": "A", "methods": ["entry"]}],
        methods=[{"name": "entry", "calls": ["f"]}, {"name": "f", "calls": ["g"]}, {"name": "g", "calls": ["f"]}],
    ))
    g = build_dependency_graphs(m)["A"]
    assert not nx.is_directed_acyclic_graph(g)


def test_edges_join_call_lists():
    m = parse_app_model(model_text(
        activities=[{"name": "A", "methods": ["entry"]}],
        methods=[{"name": "entry", "calls": ["step"]}, {"name": "step", "calls": []}, {"name": "other", "calls": []}],
        edges=[["step", "other"]],
    ))
    assert ("step", "other") in build_dependency_graphs(m)["A"].edges


def test_lcs_examples():
    assert lcs_len("SMSLoginAct", "LoginSMS") == 5
    assert lcs_len("abc", "xyz") == 0
    assert lcs_len("sendSms", "sendSms") == 7


@given(st.text(alphabet="abcAB", max_size=12), st.text(alphabet="abcAB", max_size=12))
def test_lcs_properties(a, b):
    n = lcs_len(a, b)
    assert n == lcs_len(b, a) == lcs_brute(a, b)
    assert n <= min(len(a), len(b))


def test_select_candidate():
    A = TestActivity("LoginActivity", (), ("f",))
    cands = [Candidate("PayFlow", ("x",)), Candidate("LoginAuth", ("y",))]
    assert select_candidate(A, cands).name == "LoginAuth"
    assert select_candidate(A, cands[:1]).name == "PayFlow"
    zero = [Candidate("qqq", ("x",)), Candidate("zzz", ("y",))]
    assert select_candidate(TestActivity("abc", (), ("f",)), zero).name == "qqq"
    with pytest.raises(LocatorConfigError):
        select_candidate(A, [])


def test_mutate():
    A = TestActivity("a", ("user",), ("f1",))
    C = Candidate("c", ("t1", "t2"), ("phone",))
    out = mutate_activity(A, C, random.Random(1))
    assert out.functions == ("t1",)
    assert out.args == ("user", "phone")
    for seed in range(5):
        assert mutate_activity(TestActivity("a", (), ("f",)), C, random.Random(seed)).functions == ("t1",)
    A3 = TestActivity("a", (), ("f1", "f2", "f3"))
    C3 = Candidate("c", ("t1", "t2", "t3"))
    runs = [mutate_activity(A3, C3, random.Random(9)) for _ in range(2)]
    assert runs[0] == runs[1]
    assert sum(x != y for x, y in zip(runs[0].functions, A3.functions)) == 1


def test_match_graph():
    g = graph(("login", "validate"), ("validate", "sendSms"))
    A = TestActivity("t", (), ("login", "sendSms"))
    path = find_embedding(g, A)
    assert path == ["login", "validate", "sendSms"]
    assert all(g.has_edge(a, b) for a, b in zip(path, path[1:]))
    assert not match_graph(nx.DiGraph(), A)
    assert not match_graph(g, TestActivity("t", (), ("xyzzy", "sendSms")))
    assert not match_graph(g, TestActivity("t", (), ("sendSms", "login")))


def test_feedback():
    A = TestActivity("t", (), ("abcd", "wxyz"))
    g = graph(("abcd", "wxyz"))
    assert feedback_optimize(A, [g]) == 0
    A = TestActivity("t", (), ("validatePhone", "zzzzzz", "sendSmsCode"))
    g = graph(("validatePhone", "sendSmsCode"), ("sendSmsCode", "verifyCode"))
    assert feedback_optimize(A, [g]) == 1
    assert feedback_optimize(A, []) == 0


def test_similarity_set_takes_best_node():
    g = graph(("sendSms", "sendSmsCode"), ("sendSmsCode", "verify"))
    assert similarity_set(g, TestActivity("t", (), ("sendSmsCode", "verifyCode"))) == [11, 6]


def test_locate_first_iteration():
    m = parse_app_model(bundled_path("shopapp.model"))
    cands = [Candidate("phoneLogin", ("validatePhone", "sendSmsCode", "verifyCode"))]
    res = locate_login(m, cands, LocatorConfig(seed=0))
    assert res.activity == "LoginActivity" and res.iterations == 1
    assert res.witness == ["validatePhone", "sendSmsCode", "verifyCode"]


def test_locate_none_and_cap():
    corpus = load_corpus()
    cands = parse_candidates(bundled_path("candidates.txt"))
    res = locate_login(corpus["plain01_shop"], cands, LocatorConfig(seed=0, max_iterations=50))
    assert res.activity is None and res.iterations == 50
    wrong = [Candidate("tokenAuth", ("loadToken", "refreshToken", "verifyToken"))]
    res = locate_login(parse_app_model(bundled_path("shopapp.model")), wrong, LocatorConfig(max_iterations=1))
    assert res.activity is None


def test_locate_deterministic():
    corpus = load_corpus()
    cands = parse_candidates(bundled_path("candidates.txt"))
    a = locate_login(corpus["login03_sms"], cands, LocatorConfig(seed=4))
    b = locate_login(corpus["login03_sms"], cands, LocatorConfig(seed=4))
    assert a.to_dict() == b.to_dict()


def test_filter_soundness_on_corpus():
    for m in load_corpus().values():
        for g in build_dependency_graphs(m).values():
            assert not set(g.nodes) & {"nextLine", "toString", "printStackTrace"}


def test_widgets():
    m = parse_app_model(model_text(
        activities=[{"name": "A"}, {"name": "B"}],
        widgets=[{"activity": "A", "type": "EditText", "text": "Enter SMS code"},
                 {"activity": "A", "type": "Button", "text": "Send Code"},
                 {"activity": "B", "type": "EditText", "text": "smsungalaxy"}],
    ))
    hits = find_sms_widgets(m)
    assert hits[0][1] == "sms" and hits[2][1] == "sms"
    assert sms_otp_activities(m) == ["A"]


def test_candidate_file():
    cands = parse_candidates("login(phone,code): a, b\n# comment\nplain: c\n")
    assert cands[0] == Candidate("login", ("a", "b"), ("phone", "code"))
    assert cands[1].args == ()
    with pytest.raises(LocatorConfigError):
        parse_candidates("broken line\n")
    with pytest.raises(LocatorConfigError):
        parse_candidates("empty:\n")


def test_locator_config_validation():
    with pytest.raises(LocatorConfigError):
        LocatorConfig(lcs_thresh=0)
    with pytest.raises(LocatorConfigError):
        LocatorConfig(max_iterations=0)
