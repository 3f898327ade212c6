"""Locate login activities in an abstract app model by mutating a test activity.

App models are JSON documents::

    {"name": "...",
     "activities": [{"name": "LoginActivity", "methods": ["onCreate", "onLogin"]}],
     "methods": [{"name": "onLogin", "args": ["phone"], "calls": ["sendSms", "helper"]}],
     "edges": [["helper", "verifyCode"]],
     "externals": ["sendSms"],
     "widgets": [{"activity": "LoginActivity", "type": "EditText", "text": "SMS code", "id": "et"}]}

Names in a method's ``calls`` that are not declared methods are library
functions.  ``edges`` add caller->callee pairs on top of the ``calls`` lists.
"""

from __future__ import annotations

import json
import logging
import random
from functools import lru_cache
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import networkx as nx

log = logging.getLogger(__name__)

DEFAULT_REDUNDANT = frozenset({"nextLine", "toString", "printStackTrace"})
DEFAULT_KEYWORDS = ("sms", "mobilephone", "verification", "otp", "code")
WIDGET_TYPES = ("EditText", "Button", "other")


class ModelError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


class LocatorConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MethodDecl:
    name: str
    args: Tuple[str, ...] = ()
    calls: Tuple[str, ...] = ()


@dataclass(frozen=True)
class Widget:
    type: str
    text: str
    id: str = ""
    activity: Optional[str] = None


@dataclass
class AppModel:
    name: str = ""
    activities: Dict[str, List[str]] = field(default_factory=dict)
    methods: Dict[str, MethodDecl] = field(default_factory=dict)
    edges: List[Tuple[str, str]] = field(default_factory=list)
    externals: frozenset = frozenset()
    widgets: List[Widget] = field(default_factory=list)


@dataclass(frozen=True)
class Candidate:
    name: str
    functions: Tuple[str, ...]
    args: Tuple[str, ...] = ()

    def __post_init__(self):
        if not self.functions:
            raise LocatorConfigError(f"candidate {self.name!r} has no invoked functions")


@dataclass(frozen=True)
class TestActivity:
    name: str
    args: Tuple[str, ...]
    functions: Tuple[str, ...]

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if not self.functions:
            raise ValueError("a test activity needs at least one function")

    @classmethod
    def from_candidate(cls, c: Candidate) -> "TestActivity":
        return cls(c.name, c.args, c.functions)


@dataclass(frozen=True)
class LocatorConfig:
    max_iterations: int = 1000
    lcs_thresh: float = 0.5
    redundant: frozenset = DEFAULT_REDUNDANT
    keywords: Tuple[str, ...] = DEFAULT_KEYWORDS
    seed: int = 0
    stall_limit: int = 25

    def __post_init__(self):
        if not 0 < self.lcs_thresh <= 1:
            raise LocatorConfigError("lcs_thresh must be in (0, 1]")
        if self.max_iterations < 1:
            raise LocatorConfigError("max_iterations must be >= 1")


@dataclass
class LocateResult:
    activity: Optional[str]
    witness: List[str]
    iterations: int
    test_activity: Optional[TestActivity] = None

    def to_dict(self) -> dict:
        return {
            "activity": self.activity,
            "witness": self.witness,
            "iterations": self.iterations,
            "test_activity": None if self.test_activity is None else {
                "name": self.test_activity.name,
                "args": list(self.test_activity.args),
                "functions": list(self.test_activity.functions),
            },
        }


# ---------------------------------------------------------------------------
# parsing


def _line_of(text: str, needle: str) -> Optional[int]:
    pos = text.find(needle)
    return text.count("\n", 0, pos) + 1 if pos >= 0 else None


def _str_list(value, what, text) -> Tuple[str, ...]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ModelError(f"{what} must be a list of strings", _line_of(text, what.split()[-1]))
    return tuple(value)


def parse_app_model(source: Union[str, Path]) -> AppModel:
    """Parse and validate a model from a path or from JSON text."""
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(exc.msg, exc.lineno) from None
    if not isinstance(doc, dict):
        raise ModelError("model must be a JSON object", 1)

    methods: Dict[str, MethodDecl] = {}
    for m in doc.get("methods", []):
        if not isinstance(m, dict) or "name" not in m:
            raise ModelError("method entry needs a name", _line_of(text, '"methods"'))
        name = m["name"]
        if name in methods:
            raise ModelError(f"duplicate method {name!r}", _line_of(text, f'"{name}"'))
        methods[name] = MethodDecl(name, _str_list(m.get("args", []), f"args of {name}", text),
                                   _str_list(m.get("calls", []), f"calls of {name}", text))

    activities: Dict[str, List[str]] = {}
    for a in doc.get("activities", []):
        if not isinstance(a, dict) or "name" not in a:
            raise ModelError("activity entry needs a name", _line_of(text, '"activities"'))
        name = a["name"]
        if name in activities:
            raise ModelError(f"duplicate activity {name!r}", _line_of(text, f'"{name}"'))
        entry = list(_str_list(a.get("methods", []), f"methods of {name}", text))
        for m in entry:
            if m not in methods:
                raise ModelError(f"activity {name!r} uses undeclared method {m!r}", _line_of(text, f'"{m}"'))
        activities[name] = entry

    called = {c for m in methods.values() for c in m.calls}
    externals = frozenset(doc.get("externals", [])) | (called - set(methods))
    edges = []
    for e in doc.get("edges", []):
        if not (isinstance(e, list) and len(e) == 2 and all(isinstance(x, str) for x in e)):
            raise ModelError(f"edge {e!r} must be a [caller, callee] pair", _line_of(text, '"edges"'))
        caller, callee = e
        if caller not in methods:
            raise ModelError(f"dangling edge: caller {caller!r} is not a declared method",
                             _line_of(text, f'"{caller}", "{callee}"') or _line_of(text, '"edges"'))
        if callee not in methods and callee not in externals:
            raise ModelError(f"dangling edge: callee {callee!r} is neither declared nor external",
                             _line_of(text, f'"{caller}", "{callee}"') or _line_of(text, '"edges"'))
        edges.append((caller, callee))

    widgets = []
    for w in doc.get("widgets", []):
        wtype = w.get("type", "other")
        if wtype not in WIDGET_TYPES:
            wtype = "other"
        act = w.get("activity")
        if act is not None and act not in activities:
            raise ModelError(f"widget refers to unknown activity {act!r}", _line_of(text, f'"{act}"'))
        widgets.append(Widget(wtype, str(w.get("text", "")), str(w.get("id", "")), act))

    # explicit edges extend the callers' call lists
    for caller, callee in edges:
        decl = methods[caller]
        if callee not in decl.calls:
            methods[caller] = replace(decl, calls=decl.calls + (callee,))
    return AppModel(doc.get("name", ""), activities, methods, edges, externals, widgets)


def parse_candidates(source: Union[str, Path]) -> List[Candidate]:
    """One candidate per line: ``name(arg, ...): tx1, tx2, ...`` (the argument list is optional)."""
    if isinstance(source, Path) or (":" not in source and "\n" not in source):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, sep, body = line.partition(":")
        if not sep:
            raise LocatorConfigError(f"line {lineno}: expected 'name: tx1,tx2,...'")
        head = head.strip()
        args: Tuple[str, ...] = ()
        if "(" in head:
            head, _, rest = head.partition("(")
            args = tuple(a.strip() for a in rest.rstrip(")").split(",") if a.strip())
        funcs = tuple(f.strip() for f in body.split(",") if f.strip())
        try:
            out.append(Candidate(head.strip(), funcs, args))
        except LocatorConfigError as exc:
            raise LocatorConfigError(f"line {lineno}: {exc}") from None
    return out


# ---------------------------------------------------------------------------
# graphs


def build_dependency_graphs(model: AppModel, redundant=DEFAULT_REDUNDANT) -> Dict[str, nx.DiGraph]:
    """One caller->callee graph per activity, with customized methods inlined."""
    graphs = {}
    for act, entries in model.activities.items():
        g = nx.DiGraph()
        seen = set()

        def expand(method: str):
            if method in seen:
                return
            seen.add(method)
            body = [c for c in model.methods[method].calls if c not in redundant]
            for c in body:
                g.add_node(c)
            for a, b in zip(body, body[1:]):
                g.add_edge(a, b)
            for c in body:
                if c in model.methods:
                    for callee in model.methods[c].calls:
                        if callee not in redundant:
                            g.add_edge(c, callee)
                    expand(c)

        for entry in entries:
            expand(entry)
        graphs[act] = g
    return graphs


def lcs_len(a: str, b: str) -> int:
    """Length of the longest common substring, ignoring case."""
    return _lcs(a.lower(), b.lower())


@lru_cache(maxsize=65536)
def _lcs(a: str, b: str) -> int:
    if not a or not b:
        return 0
    best = 0
    prev = [0] * (len(b) + 1)
    for ca in a:
        cur = [0] * (len(b) + 1)
        for j, cb in enumerate(b, 1):
            if ca == cb:
                cur[j] = prev[j - 1] + 1
                if cur[j] > best:
                    best = cur[j]
        prev = cur
    return best


def similar(a: str, b: str, thresh: float = 0.5) -> bool:
    n = lcs_len(a, b)
    return n > 0 and n >= thresh * min(len(a), len(b))


def select_candidate(A: TestActivity, candidates: Sequence[Candidate]) -> Candidate:
    if not candidates:
        raise LocatorConfigError("no candidates to select from")
    best, best_score = candidates[0], lcs_len(A.name, candidates[0].name)
    for c in candidates[1:]:
        s = lcs_len(A.name, c.name)
        if s > best_score:
            best, best_score = c, s
    if best_score == 0:
        log.debug("no candidate shares a substring with %r; using %r", A.name, best.name)
    return best


def mutate_activity(A: TestActivity, C: Candidate, rng: random.Random,
                    position: Optional[int] = None) -> TestActivity:
    """Swap one function of ``A`` for the function at the same position in ``C``."""
    limit = min(len(A.functions), len(C.functions))
    if position is None or position >= limit:
        position = rng.randrange(limit)
    funcs = list(A.functions)
    funcs[position] = C.functions[position]
    args = A.args + tuple(a for a in C.args if a not in A.args)
    return TestActivity(A.name, args, tuple(funcs))


def find_embedding(G: nx.DiGraph, A: TestActivity, thresh: float = 0.5) -> Optional[List[str]]:
    """Witness path through ``G`` visiting nodes similar to fc_1..fc_x in order."""
    fcs = A.functions
    options = [[n for n in G.nodes if similar(fc, n, thresh)] for fc in fcs]
    if any(not o for o in options):
        return None

    def search(i: int, prev: Optional[str]) -> Optional[List[str]]:
        if i == len(fcs):
            return []
        reach = None if prev is None else nx.descendants(G, prev)
        for node in options[i]:
            if reach is not None and node not in reach:
                continue
            rest = search(i + 1, node)
            if rest is not None:
                return [node] + rest
        return None

    anchors = search(0, None)
    if anchors is None:
        return None
    path = [anchors[0]]
    for a, b in zip(anchors, anchors[1:]):
        path.extend(nx.shortest_path(G, a, b)[1:])
    return path


def match_graph(G: nx.DiGraph, A: TestActivity, thresh: float = 0.5) -> bool:
    return find_embedding(G, A, thresh) is not None


def similarity_set(G: nx.DiGraph, A: TestActivity, thresh: float = 0.5) -> List[int]:
    nodes = list(G.nodes)
    scores, j = [], 0
    for fc in A.functions:
        best = None
        for k in range(j, len(nodes)):
            if similar(fc, nodes[k], thresh) and (best is None or lcs_len(fc, nodes[k]) > lcs_len(fc, nodes[best])):
                best = k
        if best is None:
            scores.append(0)
        else:
            scores.append(lcs_len(fc, nodes[best]))
            j = best + 1
    return scores


def feedback_optimize(A: TestActivity, graphs: Sequence[nx.DiGraph], thresh: float = 0.5) -> int:
    """Index of the weakest function in the best-aligned graph's similarity set."""
    if not graphs:
        log.warning("no dependency graphs to compare against")
        return 0
    sets = [similarity_set(g, A, thresh) for g in graphs]
    best = max(sets, key=sum)  # max keeps the first on ties
    return best.index(min(best))


def locate_login(model: AppModel, candidates: Sequence[Candidate],
                 cfg: LocatorConfig = LocatorConfig()) -> LocateResult:
    if not candidates:
        raise LocatorConfigError("no candidates to select from")
    rng = random.Random(cfg.seed)
    graphs = build_dependency_graphs(model, cfg.redundant)
    names = list(graphs)
    glist = [graphs[n] for n in names]
    # random start; restarts walk the rest of the shuffled list before repeating
    starts = list(candidates)
    rng.shuffle(starts)
    restarts = 0
    A = TestActivity.from_candidate(starts[0])
    unused = list(candidates)
    best_total, stall = -1, 0
    for it in range(1, cfg.max_iterations + 1):
        for name in names:
            witness = find_embedding(graphs[name], A, cfg.lcs_thresh)
            if witness is not None:
                return LocateResult(name, witness, it, A)
        if it == cfg.max_iterations:
            break
        total = max((sum(similarity_set(g, A, cfg.lcs_thresh)) for g in glist), default=0)
        if total > best_total:
            best_total, stall = total, 0
        else:
            stall += 1
        if stall >= cfg.stall_limit:
            # stuck on a local optimum: restart from another random candidate
            restarts += 1
            A = TestActivity.from_candidate(starts[restarts % len(starts)])
            best_total, stall = -1, 0
            continue
        position = feedback_optimize(A, glist, cfg.lcs_thresh)
        if not unused:
            unused = list(candidates)
        c_sim = select_candidate(A, unused)
        unused.remove(c_sim)
        if rng.random() < 0.5:
            position = None  # keep some exploration beyond the feedback choice
        A = mutate_activity(A, c_sim, rng, position)
    return LocateResult(None, [], cfg.max_iterations, A)


def find_sms_widgets(model: AppModel, keywords=DEFAULT_KEYWORDS) -> List[Tuple[Widget, str]]:
    hits = []
    for w in model.widgets:
        text = w.text.lower()
        for kw in keywords:
            if kw.lower() in text:
                hits.append((w, kw))
                break
    return hits


def sms_otp_activities(model: AppModel, keywords=DEFAULT_KEYWORDS) -> List[str]:
    """Activities with at least one keyword EditText and at least one Button."""
    matched = {}
    for w, _ in find_sms_widgets(model, keywords):
        if w.type == "EditText" and w.activity is not None:
            matched[w.activity] = True
    out = []
    for act in model.activities:
        has_button = any(w.type == "Button" and w.activity == act for w in model.widgets)
        if matched.get(act) and has_button:
            out.append(act)
    return out


def bundled_path(name: str) -> Path:
    return Path(__file__).parent / "data" / name


def load_corpus() -> Dict[str, AppModel]:
    root = bundled_path("corpus")
    return {p.stem: parse_app_model(p) for p in sorted(root.glob("*.model"))}
