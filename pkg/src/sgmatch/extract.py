"""Natural-language description -> text-graph.

Two extractors share one output type: a deterministic rule-based parser
driven by the relation/attribute lexicons in ``data/``, and an LLM client
speaking the OpenAI-style chat-completions wire format.
"""

from __future__ import annotations

import json
import logging
import os
import re
import urllib.error
import urllib.request
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import List, Optional, Protocol, Sequence, Tuple

from .errors import EmptyGraph, EndpointUnavailable, MalformedDocument, UnparsableResponse
from .graph import GraphEdge, GraphKind, GraphNode, SemanticGraph, graph_from_dict, normalize_label, serialize_graph

logger = logging.getLogger(__name__)

API_KEY_ENV = "SG_LLM_API_KEY"

ARTICLES = {"a", "an", "the", "some", "one"}
# tokens that may trail a subject phrase before the relation ("the lamp is on ...")
LINKING = {"is", "are", "sits", "stands", "lies", "hangs", "placed", "located", "standing", "sitting", "which", "that"}
THERE_IS = (("there", "is"), ("there", "are"), ("there's",))


class Source(str, Enum):
    LLM = "llm"
    RULES = "rules"


@dataclass(frozen=True)
class ExtractionResult:
    graph: SemanticGraph
    source: Source
    raw_json: str


def _data_text(name: str) -> str:
    return resources.files("sgmatch").joinpath("data").joinpath(name).read_text(encoding="utf-8")


def _read_lexicon(name: str) -> Tuple[str, ...]:
    text = _data_text(name)
    items = []
    for line in text.splitlines():
        line = normalize_label(line.split("#", 1)[0])
        if line and line not in items:
            items.append(line)
    return tuple(items)


@lru_cache(maxsize=None)
def default_relations() -> Tuple[str, ...]:
    return _read_lexicon("relations.txt")


@lru_cache(maxsize=None)
def default_attributes() -> frozenset:
    return frozenset(_read_lexicon("attributes.txt"))


def _tokens(sentence: str) -> List[str]:
    return re.findall(r"[a-z0-9][a-z0-9'\-]*", sentence.lower())


def _split_on_relations(tokens, relations):
    """Alternating [phrase, relation, phrase, relation, phrase, ...] segments."""
    rel_tokens = sorted((r.split() for r in relations), key=len, reverse=True)
    segments = []
    current = []
    i = 0
    while i < len(tokens):
        hit = None
        if current:
            for rt in rel_tokens:
                if tokens[i:i + len(rt)] == rt:
                    hit = rt
                    break
        if hit:
            segments.append(current)
            segments.append(" ".join(hit))
            current = []
            i += len(hit)
        else:
            current.append(tokens[i])
            i += 1
    segments.append(current)
    return segments


def _noun_phrase(tokens, attributes, trailing_ok: bool):
    tokens = list(tokens)
    if trailing_ok:
        while tokens and tokens[-1] in LINKING:
            tokens.pop()
    while tokens and tokens[0] in ARTICLES:
        tokens.pop(0)
    attrs = []
    while len(tokens) > 1 and tokens[0] in attributes:
        attrs.append(tokens.pop(0))
    if not tokens:
        return None
    return " ".join(tokens), attrs


def extract_rules(description: str, graph_id: str = "query",
                  relations: Optional[Sequence[str]] = None, attributes=None) -> ExtractionResult:
    """Deterministic lexicon-driven parse of a description.

    Sentences split on ``.``/``;``; each sentence is cut at relation phrases
    and the noun phrases around a relation become nodes joined by an edge.
    Mentions with the same label are merged into one node.
    """
    if not description or not description.strip():
        raise ValueError("description must be non-empty")
    relations = tuple(relations) if relations is not None else default_relations()
    attributes = frozenset(attributes) if attributes is not None else default_attributes()

    labels: List[str] = []
    node_attrs: dict = {}
    triples: List[Tuple[int, str, int]] = []

    def node_for(label, attrs):
        if label not in node_attrs:
            labels.append(label)
            node_attrs[label] = []
        for a in attrs:
            if a not in node_attrs[label]:
                node_attrs[label].append(a)
        return labels.index(label)

    for sentence in re.split(r"[.;!?]+", description):
        tokens = _tokens(sentence)
        if not tokens:
            continue
        existential = False
        for prefix in THERE_IS:
            if tuple(tokens[:len(prefix)]) == prefix:
                tokens = tokens[len(prefix):]
                existential = True
                break
        segments = _split_on_relations(tokens, relations)
        if len(segments) == 1:
            if not (existential or (tokens and tokens[0] in ARTICLES)):
                continue
            phrase = _noun_phrase(segments[0], attributes, trailing_ok=False)
            if phrase:
                node_for(*phrase)
            continue
        phrases = [_noun_phrase(seg, attributes, trailing_ok=True) for seg in segments[0::2]]
        rels = segments[1::2]
        ids = [node_for(*p) if p else None for p in phrases]
        for left, rel, right in zip(ids, rels, ids[1:]):
            if left is None or right is None or left == right:
                continue
            triple = (left, rel, right)
            if triple not in triples:
                triples.append(triple)

    if not labels:
        raise EmptyGraph(f"no objects found in {description!r}")
    nodes = tuple(GraphNode(i, lab, tuple(node_attrs[lab])) for i, lab in enumerate(labels))
    edges = tuple(GraphEdge(s, t, r) for s, r, t in triples)
    graph = SemanticGraph(graph_id, GraphKind.TEXT, nodes, edges, description=description)
    return ExtractionResult(graph, Source.RULES, serialize_graph(graph).decode("utf-8"))


# -- LLM path -----------------------------------------------------------------


class ChatClient(Protocol):
    def complete(self, messages: List[dict]) -> str:
        ...


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model: str = "gpt-4"
    api_key_env: str = API_KEY_ENV
    timeout: float = 60.0


class HTTPChatClient:
    """Minimal chat-completions client (``POST {base_url}/chat/completions``)."""

    def __init__(self, config: EndpointConfig):
        self.config = config

    def complete(self, messages: List[dict]) -> str:
        body = json.dumps({"model": self.config.model, "messages": messages, "temperature": 0}).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        req = urllib.request.Request(url, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.config.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError) as exc:
            raise EndpointUnavailable(f"{url}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise EndpointUnavailable(f"{url}: response body is not JSON") from exc
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise EndpointUnavailable(f"{url}: unexpected response layout") from exc


def prompt_messages(description: str) -> List[dict]:
    template = _data_text("extract_prompt.txt")
    system, user = template.split("[user]", 1)
    system = system.replace("[system]", "", 1).strip()
    return [
        {"role": "system", "content": system},
        {"role": "user", "content": user.strip().replace("{description}", description.strip())},
    ]


def _json_payload(reply: str):
    text = reply.strip()
    fenced = re.match(r"^```(?:json)?\s*(.*?)\s*```$", text, re.S)
    if fenced:
        text = fenced.group(1)
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    start, end = text.find("{"), text.rfind("}")
    if start >= 0 and end > start:
        try:
            return json.loads(text[start:end + 1])
        except json.JSONDecodeError:
            return None
    return None


def _coerce_ids(doc: dict) -> dict:
    def as_int(v):
        if isinstance(v, str) and v.strip().lstrip("-").isdigit():
            return int(v)
        return v

    objects = [dict(o, id=as_int(o.get("id"))) if isinstance(o, dict) else o for o in doc.get("objects", [])]
    relations = []
    for r in doc.get("relations", []):
        if isinstance(r, dict):
            r = [r.get("source"), r.get("relation"), r.get("target")]
        if isinstance(r, list) and len(r) == 3:
            r = [as_int(r[0]), r[1], as_int(r[2])]
        relations.append(r)
    return {"objects": objects, "relations": relations}


def extract_llm(description: str, client: ChatClient, graph_id: str = "query") -> ExtractionResult:
    """Ask an LLM for the graph; one repair round-trip on an unusable reply."""
    if not description or not description.strip():
        raise ValueError("description must be non-empty")
    messages = prompt_messages(description)
    repair = _data_text("repair_prompt.txt").strip()
    last_error = None
    for attempt in range(2):
        reply = client.complete(messages)
        doc = _json_payload(reply)
        if isinstance(doc, dict):
            objects = doc.get("objects")
            if isinstance(objects, list) and not objects:
                raise EmptyGraph(f"LLM extracted no objects from {description!r}")
            try:
                doc = _coerce_ids(doc)
                doc["id"] = graph_id
                doc["description"] = description
                graph = graph_from_dict(doc, GraphKind.TEXT)
                return ExtractionResult(graph, Source.LLM, reply)
            except (MalformedDocument, ValueError, TypeError, AttributeError) as exc:
                last_error = exc
        else:
            last_error = "reply is not a JSON object"
        logger.warning("unusable LLM reply (attempt %d): %s", attempt + 1, last_error)
        messages = messages + [{"role": "assistant", "content": reply}, {"role": "user", "content": repair}]
    raise UnparsableResponse(f"LLM reply unusable after retry: {last_error}")
