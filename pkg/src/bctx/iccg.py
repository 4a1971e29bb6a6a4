"""Inter-component call graph and SDK call-path counting.

The graph joins explicit invoke edges (with class-hierarchy resolution of
virtual calls), implicit lifecycle and UI-handler entry points, and
inter-component edges resolved from a single constant component reference.
A synthetic root node stands for the Android runtime.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import networkx as nx
import numpy as np

from .axml import ManifestFacts
from .catalog import SdkCatalog
from .dex.parser import ClassDef, ConstClass, ConstString, DexFile, EncodedMethod, Invoke, MethodRef

DUMMY_MAIN = "<dummyMain>"
U64_MAX = (1 << 64) - 1

EXPLICIT = "explicit"
IMPLICIT_LIFECYCLE = "implicit_lifecycle"
IMPLICIT_HANDLER = "implicit_handler"
ICC = "icc"
ENTRY = "entry"

LIFECYCLE_METHODS = frozenset({
    "onCreate", "onStart", "onResume", "onPause", "onStop", "onDestroy",
    "onStartCommand", "onBind", "onReceive",
})
PROVIDER_METHODS = frozenset({"onCreate", "query", "insert", "update", "delete"})
HANDLER_METHODS = frozenset({
    "onClick", "onLongClick", "onTouch", "onItemClick", "onCheckedChanged",
    "run", "handleMessage", "onOptionsItemSelected",
})
ICC_SENDERS = frozenset({"startActivity", "startActivityForResult", "startService", "bindService", "sendBroadcast"})
FRAMEWORK_SUFFIXES = {
    "Activity": "activity",
    "Service": "service",
    "BroadcastReceiver": "receiver",
    "ContentProvider": "provider",
}


def descriptor_to_name(desc: str) -> str:
    """``Lcom/x/Main;`` -> ``com.x.Main``."""
    if desc.startswith("L") and desc.endswith(";"):
        return desc[1:-1].replace("/", ".")
    return desc


def name_to_descriptor(name: str) -> str:
    return "L" + name.replace(".", "/") + ";"


def node_type(node: str) -> Optional[str]:
    """Defining type of a method node, or None for the root."""
    if node == DUMMY_MAIN or "->" not in node:
        return None
    return node.split("->", 1)[0]


@dataclass(frozen=True)
class IccgGraph:
    graph: nx.DiGraph  # frozen; edges carry a ``tags`` frozenset

    @property
    def root(self) -> str:
        return DUMMY_MAIN

    @property
    def nodes(self) -> list[str]:
        return list(self.graph.nodes)

    def edges(self, tag: Optional[str] = None) -> list[tuple[str, str]]:
        return [(u, v) for u, v, t in self.graph.edges(data="tags") if tag is None or tag in t]

    def edge_tags(self, u: str, v: str) -> frozenset:
        return self.graph.edges[u, v]["tags"]

    def has_edge(self, u: str, v: str) -> bool:
        return self.graph.has_edge(u, v)

    def successors(self, node: str) -> list[str]:
        return list(self.graph.successors(node))

    def to_json(self) -> str:
        nodes = [{"id": n, "type": node_type(n)} for n in sorted(self.graph.nodes)]
        edges = [{"src": u, "dst": v, "tags": sorted(t)} for u, v, t in sorted(self.graph.edges(data="tags"))]
        return json.dumps({"root": DUMMY_MAIN, "nodes": nodes, "edges": edges}, indent=1)

    def to_dot(self) -> str:
        def q(s: str) -> str:
            return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'

        lines = ["digraph iccg {", f"  {q(DUMMY_MAIN)} [shape=box];"]
        for n in sorted(self.graph.nodes):
            if n != DUMMY_MAIN:
                lines.append(f"  {q(n)};")
        for u, v, t in sorted(self.graph.edges(data="tags")):
            lines.append(f"  {q(u)} -> {q(v)} [label={q(','.join(sorted(t)))}];")
        lines.append("}")
        return "\n".join(lines) + "\n"


class _GraphBuilder:
    def __init__(self):
        self.g = nx.DiGraph()
        self.g.add_node(DUMMY_MAIN)

    def node(self, n: str) -> None:
        self.g.add_node(n)

    def edge(self, u: str, v: str, tag: str) -> None:
        if u == v or v == DUMMY_MAIN:
            return
        if self.g.has_edge(u, v):
            self.g.edges[u, v]["tags"] = self.g.edges[u, v]["tags"] | {tag}
        else:
            self.g.add_edge(u, v, tags=frozenset({tag}))


class _Hierarchy:
    def __init__(self, classes: dict[str, ClassDef]):
        self.classes = classes
        self._ancestors: dict[str, list[str]] = {}

    def ancestors(self, t: str) -> list[str]:
        """Supertypes reachable through superclass and interface links, nearest first."""
        if t in self._ancestors:
            return self._ancestors[t]
        out: list[str] = []
        seen = {t}
        frontier = [t]
        while frontier:
            nxt = []
            for cur in frontier:
                cls = self.classes.get(cur)
                if cls is None:
                    continue
                for sup in ([cls.superclass_type] if cls.superclass_type else []) + list(cls.interfaces):
                    if sup not in seen:
                        seen.add(sup)
                        out.append(sup)
                        nxt.append(sup)
            frontier = nxt
        self._ancestors[t] = out
        return out

    def superclass_chain(self, t: str) -> list[str]:
        out = []
        cur = self.classes.get(t)
        seen = {t}
        while cur is not None and cur.superclass_type and cur.superclass_type not in seen:
            out.append(cur.superclass_type)
            seen.add(cur.superclass_type)
            cur = self.classes.get(cur.superclass_type)
        return out

    def subtypes(self, t: str) -> list[str]:
        return [c for c in self.classes if c != t and t in self.ancestors(c)]


def _method_sig(cls_name: str, m: EncodedMethod) -> str:
    return f"{cls_name}->{m.ref.name}{m.ref.descriptor}"


def build_iccg(dexes: Sequence[DexFile], manifest: ManifestFacts) -> IccgGraph:
    b = _GraphBuilder()

    classes: dict[str, ClassDef] = {}
    for dex in dexes:
        for cls in dex.classes:
            classes.setdefault(cls.this_type, cls)
    hier = _Hierarchy(classes)

    # app methods keyed by (type, name+descriptor)
    defined: dict[str, dict[str, EncodedMethod]] = {}
    for t, cls in classes.items():
        defined[t] = {m.ref.name + m.ref.descriptor: m for m in cls.methods}
        for m in cls.methods:
            b.node(_method_sig(t, m))

    declared = {name_to_descriptor(n): kind for kind, n in manifest.components}

    def component_kind(t: str) -> tuple[Optional[str], bool]:
        """(kind, declared) for app class ``t``; kind None if not a component."""
        chain = [t] + hier.superclass_chain(t)
        for c in chain:
            if c in declared:
                return declared[c], True
        for c in chain:
            simple = c[1:-1].rsplit("/", 1)[-1] if c.startswith("L") else c
            for suffix, kind in FRAMEWORK_SUFFIXES.items():
                if simple.endswith(suffix):
                    return kind, False
        return None, False

    def resolve(t: str, key: str) -> Optional[str]:
        """Nearest app definition of ``key`` for receiver type ``t``."""
        for c in [t] + hier.superclass_chain(t):
            if c in defined and key in defined[c]:
                return f"{c}->{key}"
        return None

    def lifecycle_names(kind: Optional[str]) -> frozenset:
        return LIFECYCLE_METHODS | PROVIDER_METHODS if kind == "provider" else LIFECYCLE_METHODS

    # (b)/(e) lifecycle entry points
    kinds: dict[str, Optional[str]] = {}
    for t in classes:
        kind, is_declared = component_kind(t)
        kinds[t] = kind
        if kind is None:
            continue
        names = lifecycle_names(kind)
        for m in classes[t].methods:
            if m.ref.name in names:
                sig = _method_sig(t, m)
                b.edge(DUMMY_MAIN, sig, IMPLICIT_LIFECYCLE)
                if is_declared:
                    b.edge(DUMMY_MAIN, sig, ENTRY)

    # (c) UI / thread handlers
    for t, cls in classes.items():
        for m in cls.methods:
            if m.ref.name in HANDLER_METHODS:
                b.edge(DUMMY_MAIN, _method_sig(t, m), IMPLICIT_HANDLER)

    # (a) explicit and (d) icc edges
    for dex in dexes:
        for cls in dex.classes:
            if classes.get(cls.this_type) is not cls:
                continue
            for m in cls.methods:
                if m.code is None:
                    continue
                src = _method_sig(cls.this_type, m)
                sends_icc = False
                for ins in m.code.instructions:
                    if not isinstance(ins, Invoke):
                        continue
                    target: MethodRef = dex.methods[ins.method_index]
                    b.node(target.signature)
                    b.edge(src, target.signature, EXPLICIT)
                    if ins.style in ("virtual", "interface"):
                        key = target.name + target.descriptor
                        for sub in hier.subtypes(target.defining_type):
                            if key in defined.get(sub, {}):
                                b.edge(src, f"{sub}->{key}", EXPLICIT)
                    if target.name in ICC_SENDERS:
                        sends_icc = True
                if sends_icc:
                    comp = _icc_target(dex, m, declared)
                    if comp is not None and comp in classes:
                        kind = declared[comp]
                        for name in sorted(lifecycle_names(kind)):
                            for key in sorted(k for k in _all_keys(comp, defined, hier) if k.split("(")[0] == name):
                                sig = resolve(comp, key)
                                if sig is not None:
                                    b.edge(src, sig, ICC)

    return IccgGraph(nx.freeze(b.g))


def _all_keys(t: str, defined, hier: _Hierarchy) -> set[str]:
    keys = set()
    for c in [t] + hier.superclass_chain(t):
        keys |= set(defined.get(c, {}))
    return keys


def _icc_target(dex: DexFile, m: EncodedMethod, declared: dict[str, str]) -> Optional[str]:
    """The single declared component named by a constant in ``m``, if exactly one."""
    named = set()
    for ins in m.code.instructions:
        if isinstance(ins, ConstClass):
            t = dex.types[ins.type_index]
            if t in declared:
                named.add(t)
        elif isinstance(ins, ConstString):
            s = dex.strings[ins.string_index]
            if s is None:
                continue
            for cand in (s, name_to_descriptor(s)):
                if cand in declared:
                    named.add(cand)
    return next(iter(named)) if len(named) == 1 else None


def count_paths_dag(graph: nx.DiGraph, root: str, targets: Sequence[Iterable[str]]) -> list[int]:
    """Root-to-target path counts over the SCC condensation of ``graph``.

    Each target set contributes the sum of the path counts of its members'
    components. Counts saturate at 2**64 - 1.
    """
    cond = nx.condensation(graph)
    mapping = cond.graph["mapping"]
    paths = dict.fromkeys(cond.nodes, 0)
    if root in mapping:
        rc = mapping[root]
        paths[rc] = 1
        for c in nx.topological_sort(cond):
            if c != rc:
                paths[c] = min(sum(paths[p] for p in cond.predecessors(c)), U64_MAX)
    out = []
    for tset in targets:
        total = 0
        for t in tset:
            if t in mapping:
                total += paths[mapping[t]]
        out.append(min(total, U64_MAX))
    return out


def library_targets(graph: nx.DiGraph, catalog: SdkCatalog) -> list[list[str]]:
    typed = [(n, node_type(n)) for n in graph.nodes]
    return [sorted(n for n, t in typed if t is not None and entry.matches(t)) for entry in catalog.entries]


def count_paths(graph: IccgGraph, catalog: SdkCatalog) -> np.ndarray:
    """Library usage vector: call paths from the root into each cataloged SDK."""
    counts = count_paths_dag(graph.graph, DUMMY_MAIN, library_targets(graph.graph, catalog))
    return np.array(counts, dtype=np.uint64)
