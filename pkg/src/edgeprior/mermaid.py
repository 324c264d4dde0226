"""Sanitizer, parser, validator and emitter for the Mermaid flowchart subset.

Supported grammar::

    flowchart <TD|TB|LR|RL|BT>          (``graph`` is accepted as an alias)
    A                                   bare reference, implicit default node
    A[text] A(text) A([text]) A{text} A[/text/] A[[text]] A((text))
    A --> B      A -- label --> B      A -->|label| B
    A --> B --> C                       chains expand to pairwise edges
    subgraph ... / end / direction X    grouping is flattened

Statements are separated by newlines or ``;``. Labels may be wrapped in
double quotes, which are stripped.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

__all__ = [
    "DIRECTIONS",
    "SHAPES",
    "NodeDecl",
    "EdgeDecl",
    "FlowchartAst",
    "ParseDiagnostics",
    "sanitize",
    "parse",
    "parse_or_raise",
    "emit",
    "validate",
    "MermaidSyntaxError",
]

DIRECTIONS = ("TD", "TB", "LR", "RL", "BT")
SHAPES = ("rectangle", "rounded", "stadium", "diamond", "parallelogram", "circle",
          "subroutine", "default")

# (open, close, shape); longer openers first
_DELIMS = (
    ("((", "))", "circle"),
    ("([", "])", "stadium"),
    ("(", ")", "rounded"),
    ("[[", "]]", "subroutine"),
    ("[/", "/]", "parallelogram"),
    ("[", "]", "rectangle"),
    ("{", "}", "diamond"),
)
_SHAPE_DELIMS = {shape: (o, c) for o, c, shape in _DELIMS}
_SHAPE_DELIMS["default"] = ("[", "]")

_ID_RE = re.compile(r"[A-Za-z0-9_]+")
_ARROW_RE = re.compile(r"-{2,}>")
_HEADER_RE = re.compile(r"^\s*(flowchart|graph)(?:\s+([^\s;]+))?\s*;?\s*$")
_DIRECTIVE_RE = re.compile(r"^\s*(style|classDef|class|click|linkStyle)\b")
_IGNORED_RE = re.compile(r"^\s*(direction\s+\S+|end|subgraph\b.*)\s*$")


class MermaidSyntaxError(ValueError):
    def __init__(self, diagnostics: "ParseDiagnostics"):
        self.diagnostics = diagnostics
        super().__init__(diagnostics.render())


@dataclass(frozen=True, eq=False)
class NodeDecl:
    """A node; ``default`` shape (bare reference) renders as, and compares equal to, a rectangle."""

    id: str
    label: str
    shape: str = "default"

    def __post_init__(self):
        if not _ID_RE.fullmatch(self.id or ""):
            raise ValueError(f"invalid node id {self.id!r}")
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")

    def _key(self):
        return (self.id, self.label, "rectangle" if self.shape == "default" else self.shape)

    def __eq__(self, other):
        if not isinstance(other, NodeDecl):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def __repr__(self):
        return f"NodeDecl(id={self.id!r}, label={self.label!r}, shape={self.shape!r})"


@dataclass(frozen=True)
class EdgeDecl:
    source: str
    target: str
    label: str = ""
    directed: bool = True


@dataclass
class FlowchartAst:
    direction: str = "TD"
    nodes: List[NodeDecl] = field(default_factory=list)
    edges: List[EdgeDecl] = field(default_factory=list)

    def node(self, node_id: str) -> NodeDecl:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def label_of(self, node_id: str) -> str:
        return self.node(node_id).label


@dataclass
class ParseDiagnostics:
    ok: bool = True
    messages: List[Tuple[int, str]] = field(default_factory=list)

    def add(self, line: int, text: str) -> None:
        self.messages.append((line, text))
        self.ok = False

    def render(self) -> str:
        return "\n".join(f"line {ln}: {msg}" for ln, msg in self.messages)

    def __bool__(self):
        return self.ok


# ---------------------------------------------------------------------------
# sanitize


def _strip_trailing_comment(line: str) -> str:
    # '%%' inside a quoted label is content, not a comment
    in_quote = False
    for i, ch in enumerate(line):
        if ch == '"':
            in_quote = not in_quote
        elif not in_quote and line.startswith("%%", i):
            return line[:i].rstrip()
    return line


def sanitize(code: str) -> str:
    """Drop comments and styling/interaction directives; normalize line endings."""
    text = code.replace("\r\n", "\n").replace("\r", "\n")
    out = []
    for line in text.split("\n"):
        if line.lstrip().startswith("%%"):
            continue
        if _DIRECTIVE_RE.match(line):
            continue
        stripped = _strip_trailing_comment(line)
        if stripped != line and not stripped.strip():
            continue
        out.append(stripped)
    return "\n".join(out)


# ---------------------------------------------------------------------------
# parse


class _LineError(Exception):
    pass


class _Cursor:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos] in " \t":
            self.pos += 1

    def at_end(self) -> bool:
        return self.pos >= len(self.text)

    def startswith(self, s: str) -> bool:
        return self.text.startswith(s, self.pos)

    def rest(self) -> str:
        return self.text[self.pos:]


def _split_statements(line: str) -> List[str]:
    """Split on ';' outside quotes, shape brackets and pipe-delimited edge labels."""
    parts, buf, depth, in_quote, in_pipe = [], [], 0, False, False
    for ch in line:
        if ch == '"':
            in_quote = not in_quote
        elif ch == "|" and depth == 0 and not in_quote:
            in_pipe = not in_pipe
        elif not in_quote and not in_pipe:
            if ch in "([{":
                depth += 1
            elif ch in ")]}":
                depth = max(0, depth - 1)
            elif ch == ";" and depth == 0:
                parts.append("".join(buf))
                buf = []
                continue
        buf.append(ch)
    parts.append("".join(buf))
    return parts


def _read_node(cur: _Cursor):
    cur.skip_ws()
    m = _ID_RE.match(cur.text, cur.pos)
    if not m:
        found = cur.rest()[:12] or "end of line"
        raise _LineError(f"expected node identifier, found {found!r}")
    node_id = m.group(0)
    cur.pos = m.end()
    for opener, closer, shape in _DELIMS:
        if not cur.startswith(opener):
            continue
        start = cur.pos + len(opener)
        if cur.text.startswith('"', start):
            q_end = cur.text.find('"', start + 1)
            if q_end < 0:
                raise _LineError(f"unterminated quoted label for node {node_id!r}")
            label = cur.text[start + 1:q_end]
            if not cur.text.startswith(closer, q_end + 1):
                raise _LineError(f"expected {closer!r} after quoted label of node {node_id!r}")
            cur.pos = q_end + 1 + len(closer)
        else:
            end = cur.text.find(closer, start)
            if end < 0:
                raise _LineError(f"unclosed {opener!r} in declaration of node {node_id!r}")
            label = cur.text[start:end]
            cur.pos = end + len(closer)
        return node_id, label, shape
    return node_id, None, None


def _read_edge(cur: _Cursor) -> Optional[str]:
    """Consume an arrow; returns its label ("" when unlabeled) or None if no arrow here."""
    cur.skip_ws()
    m = _ARROW_RE.match(cur.text, cur.pos)
    if m:
        cur.pos = m.end()
        if cur.startswith('|"'):
            end = cur.text.find('"|', cur.pos + 2)
            if end < 0:
                raise _LineError("unclosed quoted '|' edge label")
            label = cur.text[cur.pos + 2:end]
            cur.pos = end + 2
            return label
        if cur.startswith("|"):
            end = cur.text.find("|", cur.pos + 1)
            if end < 0:
                raise _LineError("unclosed '|' edge label")
            label = cur.text[cur.pos + 1:end]
            cur.pos = end + 1
            return label
        return ""
    if cur.startswith("--"):
        # '-- text -->' form
        m = _ARROW_RE.search(cur.text, cur.pos + 2)
        if not m:
            raise _LineError("edge label opened with '--' but no closing '-->'")
        label = cur.text[cur.pos + 2:m.start()].strip()
        if len(label) >= 2 and label[0] == label[-1] == '"':
            label = label[1:-1]
        if not label:
            raise _LineError("unsupported link syntax (undirected or malformed arrow)")
        cur.pos = m.end()
        return label
    if not cur.at_end():
        token = cur.rest().strip()
        if token[:1] in "-=~.<&":
            raise _LineError(f"unsupported link syntax {token[:8]!r}")
    return None


def _parse_statement(stmt: str):
    """Returns (list of (id,label,shape) refs, list of (src,dst,label))."""
    cur = _Cursor(stmt)
    refs = [_read_node(cur)]
    links = []
    while True:
        label = _read_edge(cur)
        if label is None:
            break
        cur.skip_ws()
        if cur.at_end():
            raise _LineError("dangling arrow: edge has no target node")
        refs.append(_read_node(cur))
        links.append((refs[-2][0], refs[-1][0], label))
    cur.skip_ws()
    if not cur.at_end():
        raise _LineError(f"unexpected text {cur.rest()[:20]!r}")
    return refs, links


def parse(code: str) -> Union[FlowchartAst, ParseDiagnostics]:
    """Parse sanitized flowchart text. Never raises on bad input."""
    diag = ParseDiagnostics()
    lines = code.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    ast = FlowchartAst()
    header_seen = False
    explicit = {}
    order = []
    edges = []
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        statements = _split_statements(raw)
        if not header_seen:
            m = _HEADER_RE.match(statements[0])
            if not m:
                diag.add(lineno, f"missing flowchart header, found {raw.strip()[:30]!r}")
                return diag
            direction = m.group(2) or "TD"
            if direction not in DIRECTIONS:
                diag.add(lineno, f"unknown flowchart direction {direction!r}")
                return diag
            ast.direction = direction
            header_seen = True
            # 'flowchart LR; A --> B' keeps going on the same line
            statements = statements[1:]
        for stmt in statements:
            if not stmt.strip() or _IGNORED_RE.match(stmt) or _DIRECTIVE_RE.match(stmt):
                continue
            try:
                refs, links = _parse_statement(stmt)
            except _LineError as exc:
                diag.add(lineno, str(exc))
                continue
            for node_id, label, shape in refs:
                if node_id not in explicit:
                    order.append(node_id)
                    explicit[node_id] = None
                if label is None:
                    continue
                prev = explicit[node_id]
                if prev is not None and (prev[0], prev[1]) != (label, shape):
                    diag.add(lineno, f"node {node_id!r} redeclared with a conflicting label or shape")
                    continue
                explicit[node_id] = (label, shape)
            edges.extend(EdgeDecl(s, t, lbl) for s, t, lbl in links)
    if not header_seen:
        diag.add(1, "missing flowchart header")
        return diag
    if not diag.ok:
        return diag
    for node_id in order:
        decl = explicit[node_id]
        if decl is None:
            ast.nodes.append(NodeDecl(node_id, node_id, "default"))
        else:
            ast.nodes.append(NodeDecl(node_id, decl[0], decl[1]))
    ast.edges = edges
    return ast


def parse_or_raise(code: str) -> FlowchartAst:
    result = parse(code)
    if isinstance(result, ParseDiagnostics):
        raise MermaidSyntaxError(result)
    return result


def validate(code: str) -> ParseDiagnostics:
    result = parse(sanitize(code))
    return result if isinstance(result, ParseDiagnostics) else ParseDiagnostics()


# ---------------------------------------------------------------------------
# emit

_DASH_LABEL_UNSAFE = re.compile(r"^\s|\s$|-|\||\"|;|%%")


def _emit_node(node: NodeDecl) -> str:
    opener, closer = _SHAPE_DELIMS[node.shape]
    label = node.label
    needs_quotes = (
        closer in label
        or label.startswith('"')
        or any(label.startswith(o[len(opener):]) for o, _, _ in _DELIMS if o.startswith(opener) and o != opener)
        or ";" in label
        or "%%" in label
        or label == ""
    )
    if needs_quotes:
        if '"' in label:
            raise ValueError(f"label {label!r} cannot be emitted: contains both a quote and a delimiter")
        label = f'"{label}"'
    return f"{node.id}{opener}{label}{closer}"


def _emit_edge(edge: EdgeDecl) -> str:
    if not edge.label:
        return f"{edge.source} --> {edge.target}"
    if _DASH_LABEL_UNSAFE.search(edge.label):
        label = edge.label
        wrapped = len(label) >= 2 and label[0] == label[-1] == '"'
        if wrapped or any(s in label for s in ("|", "%%", ";")):
            if '"' in label:
                raise ValueError(f"edge label {label!r} cannot be emitted")
            label = f'"{label}"'
        return f"{edge.source} -->|{label}| {edge.target}"
    return f"{edge.source} -- {edge.label} --> {edge.target}"


def emit(ast: FlowchartAst) -> str:
    """Canonical text: header, one node per line, one edge per line, LF endings."""
    lines = [f"flowchart {ast.direction}"]
    lines.extend(_emit_node(n) for n in ast.nodes)
    lines.extend(_emit_edge(e) for e in ast.edges)
    return "\n".join(lines)
