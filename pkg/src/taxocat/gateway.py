"""Uniform chat-completion gateway: prompt assembly, strict JSON extraction,
retries with schema reminders, and a deterministic mock provider.

Prompt templates live as text assets under taxocat/prompts, keyed by
template id, so they can be versioned and audited independently of code.
Every provider response is funneled through extract_response; callers only
ever see typed ParsedResponse values.
"""
from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence, Union

from .documents import Document
from .textproc import jaccard, token_set, tokenize

logger = logging.getLogger(__name__)


# -- errors -------------------------------------------------------------------


class GatewayError(Exception):
    pass


class ConfigError(GatewayError):
    pass


class ProviderError(GatewayError):
    """Transport-level failure talking to a provider."""


class TransportError(ProviderError):
    pass


class ProviderTimeout(ProviderError):
    pass


class AuthError(ProviderError):
    pass


class ResponseParseError(GatewayError):
    """Provider output did not yield a valid response for the expected schema."""


class NoJsonError(ResponseParseError):
    pass


class SchemaError(ResponseParseError):
    pass


class ScoreRangeError(ResponseParseError):
    pass


class DuplicateIdError(ResponseParseError):
    pass


class RetryExhaustedError(GatewayError):
    """All parse retries failed; carries the last raw output for audit."""

    def __init__(self, message: str, last_raw: str):
        super().__init__(message)
        self.last_raw = last_raw


# -- templates and schemas ------------------------------------------------------


class TemplateId(str, Enum):
    DESC_GEN = "desc_gen"
    TRAV_SELECT = "trav_select"
    SELECT_ONE_PASS = "select_one_pass"
    RERANK = "rerank"
    SELECTP_LEAF = "selectp_leaf"
    SELECTP_PARENT = "selectp_parent"
    DECREASE_LABELS = "decrease_labels"


class ResponseSchema(str, Enum):
    BEST_LABELS = "best_labels"
    SCORES = "scores"
    LEAF_VERDICT = "leaf_verdict"
    PARENT_VERDICT = "parent_verdict"
    TOP_FIVE = "top_five"
    DESCRIPTION = "description"


SCHEMA_FOR_TEMPLATE: dict[TemplateId, ResponseSchema] = {
    TemplateId.DESC_GEN: ResponseSchema.DESCRIPTION,
    TemplateId.TRAV_SELECT: ResponseSchema.BEST_LABELS,
    TemplateId.SELECT_ONE_PASS: ResponseSchema.BEST_LABELS,
    TemplateId.RERANK: ResponseSchema.SCORES,
    TemplateId.SELECTP_LEAF: ResponseSchema.LEAF_VERDICT,
    TemplateId.SELECTP_PARENT: ResponseSchema.PARENT_VERDICT,
    TemplateId.DECREASE_LABELS: ResponseSchema.TOP_FIVE,
}


def load_template(template_id: TemplateId) -> str:
    return (
        resources.files("taxocat.prompts").joinpath(f"{template_id.value}.txt").read_text("utf-8")
    ).rstrip("\n")


@dataclass(frozen=True)
class PromptSpec:
    template_id: TemplateId
    user_payload: Mapping[str, Any]
    system_text: str = ""
    expected_schema: ResponseSchema | None = None

    def __post_init__(self):
        if not self.system_text:
            object.__setattr__(self, "system_text", load_template(self.template_id))
        required = SCHEMA_FOR_TEMPLATE[self.template_id]
        if self.expected_schema is None:
            object.__setattr__(self, "expected_schema", required)
        elif self.expected_schema is not required:
            raise ConfigError(
                f"template {self.template_id.value} produces {required.value}, "
                f"not {self.expected_schema.value}"
            )


# -- parsed responses ------------------------------------------------------------


@dataclass(frozen=True)
class BestLabels:
    ids: tuple[str, ...]


@dataclass(frozen=True)
class Scores:
    pairs: tuple[tuple[str, float], ...]

    def as_dict(self) -> dict[str, float]:
        return dict(self.pairs)


@dataclass(frozen=True)
class LeafVerdict:
    main_focus: str
    label_fit: bool


@dataclass(frozen=True)
class ParentVerdict:
    main_focus: str
    label_fit: bool
    relevancy_score: float


@dataclass(frozen=True)
class TopFive:
    ids: tuple[str, ...]


@dataclass(frozen=True)
class Description:
    text: str


ParsedResponse = Union[BestLabels, Scores, LeafVerdict, ParentVerdict, TopFive, Description]


# -- provider configuration --------------------------------------------------------


@dataclass(frozen=True)
class ProviderConfig:
    endpoint: str = "mock://local"
    model_name: str = "mock"
    temperature: float = 0.0
    max_retries: int = 3
    timeout: float = 60.0
    credentials: str | None = None  # environment variable naming the secret

    def __post_init__(self):
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.timeout <= 0:
            raise ConfigError("timeout must be > 0")


def load_provider_config(path: str | Path) -> ProviderConfig:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ConfigError("provider config must be a JSON object")
    known = {"endpoint", "model_name", "temperature", "max_retries", "timeout", "credentials"}
    fields = {k: v for k, v in data.items() if k in known}
    return ProviderConfig(**fields)


# -- user-message rendering ----------------------------------------------------------


def _document_block(document: Mapping[str, Any]) -> str:
    lines = [f"Title: {document.get('title', '')}"]
    keywords = document.get("keywords") or []
    if keywords:
        lines.append(f"Keywords: {', '.join(keywords)}")
    abstract = document.get("abstract") or ""
    if abstract:
        lines.append(f"Abstract: {abstract}")
    return "\n".join(lines)


def _label_line(node: Mapping[str, Any]) -> str:
    description = node.get("description") or ""
    return f"- {node['id']} | {node['name']} | {description}".rstrip(" |")


def render_user_text(spec: PromptSpec) -> str:
    """Flatten the structured payload into the user message a provider sees."""
    payload = spec.user_payload
    tid = spec.template_id
    if tid is TemplateId.DESC_GEN:
        lines = [f"Label Name: {payload['label_name']}"]
        if payload.get("parent_name"):
            lines.append(f"Parent Name: {payload['parent_name']}")
        if payload.get("parent_description"):
            lines.append(f"Parent Description: {payload['parent_description']}")
        exemplar = payload.get("exemplar")
        if exemplar:
            lines.append(
                f"Example: the label \"{exemplar['name']}\" is described as: "
                f"{exemplar['description']}"
            )
        return "\n".join(lines)
    if tid in (TemplateId.TRAV_SELECT, TemplateId.RERANK, TemplateId.DECREASE_LABELS):
        parts = [_document_block(payload["document"]), "", "Labels:"]
        for node in payload["nodes"]:
            line = _label_line(node)
            if node.get("parent_name"):
                line += f" (parent: {node['parent_name']})"
            parts.append(line)
        return "\n".join(parts)
    if tid is TemplateId.SELECT_ONE_PASS:
        return "\n".join([_document_block(payload["document"]), "", "Taxonomy:", payload["tree"]])
    if tid in (TemplateId.SELECTP_LEAF, TemplateId.SELECTP_PARENT):
        node = payload["node"]
        parts = [
            _document_block(payload["document"]),
            "",
            f"Label ID: {node['id']}",
            f"Label Name: {node['name']}",
        ]
        if node.get("description"):
            parts.append(f"Label Description: {node['description']}")
        return "\n".join(parts)
    raise ConfigError(f"unknown template {tid!r}")


# -- spec builders -------------------------------------------------------------------


def doc_payload(doc: Document) -> dict[str, Any]:
    return {
        "doc_id": doc.doc_id,
        "title": doc.title,
        "keywords": list(doc.keywords),
        "abstract": doc.abstract,
    }


def build_desc_gen_spec(
    label_name: str,
    parent_name: str | None,
    parent_description: str | None,
    exemplar_name: str,
    exemplar_description: str,
) -> PromptSpec:
    payload: dict[str, Any] = {"label_name": label_name}
    if parent_name:
        payload["parent_name"] = parent_name
    if parent_description:
        payload["parent_description"] = parent_description
    payload["exemplar"] = {"name": exemplar_name, "description": exemplar_description}
    return PromptSpec(template_id=TemplateId.DESC_GEN, user_payload=payload)


def build_trav_select_spec(doc: Document, nodes: Sequence[Mapping[str, Any]]) -> PromptSpec:
    return PromptSpec(
        template_id=TemplateId.TRAV_SELECT,
        user_payload={"document": doc_payload(doc), "nodes": list(nodes)},
    )


def build_select_one_pass_spec(
    doc: Document, tree: str, nodes: Sequence[Mapping[str, Any]]
) -> PromptSpec:
    return PromptSpec(
        template_id=TemplateId.SELECT_ONE_PASS,
        user_payload={"document": doc_payload(doc), "tree": tree, "nodes": list(nodes)},
    )


def build_rerank_spec(doc: Document, nodes: Sequence[Mapping[str, Any]]) -> PromptSpec:
    count = len(nodes)
    system_text = load_template(TemplateId.RERANK).format(count, count, count)
    return PromptSpec(
        template_id=TemplateId.RERANK,
        user_payload={"document": doc_payload(doc), "nodes": list(nodes), "count": count},
        system_text=system_text,
    )


def build_selectp_leaf_spec(doc: Document, node: Mapping[str, Any]) -> PromptSpec:
    return PromptSpec(
        template_id=TemplateId.SELECTP_LEAF,
        user_payload={"document": doc_payload(doc), "node": dict(node)},
    )


def build_selectp_parent_spec(doc: Document, node: Mapping[str, Any]) -> PromptSpec:
    return PromptSpec(
        template_id=TemplateId.SELECTP_PARENT,
        user_payload={"document": doc_payload(doc), "node": dict(node)},
    )


def build_decrease_labels_spec(doc: Document, nodes: Sequence[Mapping[str, Any]]) -> PromptSpec:
    return PromptSpec(
        template_id=TemplateId.DECREASE_LABELS,
        user_payload={"document": doc_payload(doc), "nodes": list(nodes)},
    )


# -- response extraction ---------------------------------------------------------------

_DECODER = json.JSONDecoder()


def _first_json_object(raw: str) -> dict:
    idx = raw.find("{")
    while idx != -1:
        try:
            obj, _end = _DECODER.raw_decode(raw, idx)
        except ValueError:
            idx = raw.find("{", idx + 1)
            continue
        if isinstance(obj, dict):
            return obj
        idx = raw.find("{", idx + 1)
    raise NoJsonError("no JSON object found in provider output")


def _id_list(obj: dict, key: str) -> tuple[str, ...]:
    if key not in obj:
        raise SchemaError(f"missing key {key!r}")
    value = obj[key]
    if not isinstance(value, list):
        raise SchemaError(f"{key!r} must be a list")
    ids = []
    for item in value:
        if isinstance(item, bool) or not isinstance(item, (str, int)):
            raise SchemaError(f"{key!r} entries must be label ids")
        ids.append(str(item))
    if len(set(ids)) != len(ids):
        raise DuplicateIdError(f"duplicate ids in {key!r}")
    return tuple(ids)


def _checked_score(value: Any, low: float, high: float, slack: float = 0.005) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"score must be a number, got {value!r}")
    score = float(value)
    if score < low - slack or score > high + slack:
        raise ScoreRangeError(f"score {score} outside [{low}, {high}]")
    return min(high, max(low, score))


def _checked_str(obj: dict, key: str) -> str:
    if key not in obj:
        raise SchemaError(f"missing key {key!r}")
    if not isinstance(obj[key], str):
        raise SchemaError(f"{key!r} must be a string")
    return obj[key]


def _checked_bool(obj: dict, key: str) -> bool:
    if key not in obj:
        raise SchemaError(f"missing key {key!r}")
    if not isinstance(obj[key], bool):
        raise SchemaError(f"{key!r} must be a boolean")
    return obj[key]


def extract_response(raw: str, expected: ResponseSchema) -> ParsedResponse:
    """Locate the first JSON object in raw text and validate it as `expected`.

    Surrounding prose and code fences are tolerated. Scores are clamped
    only when within 0.005 of a range bound; anything further out is a
    parse failure the caller may retry.
    """
    obj = _first_json_object(raw)
    if expected is ResponseSchema.BEST_LABELS:
        return BestLabels(ids=_id_list(obj, "best_labels"))
    if expected is ResponseSchema.TOP_FIVE:
        return TopFive(ids=_id_list(obj, "best_labels"))
    if expected is ResponseSchema.SCORES:
        if "scores" not in obj or not isinstance(obj["scores"], list):
            raise SchemaError("missing 'scores' list")
        pairs = []
        seen = set()
        for item in obj["scores"]:
            if not isinstance(item, (list, tuple)) or len(item) != 2:
                raise SchemaError("each score entry must be a (label id, score) pair")
            label, value = item
            if isinstance(label, bool) or not isinstance(label, (str, int)):
                raise SchemaError("score entry id must be a label id")
            label = str(label)
            if label in seen:
                raise DuplicateIdError(f"duplicate id in scores: {label!r}")
            seen.add(label)
            score = round(_checked_score(value, 0.01, 1.00), 2)
            pairs.append((label, score))
        return Scores(pairs=tuple(pairs))
    if expected is ResponseSchema.LEAF_VERDICT:
        return LeafVerdict(
            main_focus=_checked_str(obj, "main_focus"),
            label_fit=_checked_bool(obj, "label_fit"),
        )
    if expected is ResponseSchema.PARENT_VERDICT:
        if "relevancy_score" not in obj:
            raise SchemaError("missing key 'relevancy_score'")
        return ParentVerdict(
            main_focus=_checked_str(obj, "main_focus"),
            label_fit=_checked_bool(obj, "label_fit"),
            relevancy_score=_checked_score(obj["relevancy_score"], 0.0, 1.0),
        )
    if expected is ResponseSchema.DESCRIPTION:
        return Description(text=_checked_str(obj, "description"))
    raise ConfigError(f"unknown schema {expected!r}")


_SCHEMA_REMINDERS: dict[ResponseSchema, str] = {
    ResponseSchema.BEST_LABELS: 'a JSON object {"best_labels": [label ids]}',
    ResponseSchema.TOP_FIVE: 'a JSON object {"best_labels": [the top 5 label ids]}',
    ResponseSchema.SCORES: 'a JSON object {"scores": [[label id, score], ...]} '
    "with scores between 0.01 and 1.00",
    ResponseSchema.LEAF_VERDICT: 'a JSON object {"main_focus": text, "label_fit": boolean}',
    ResponseSchema.PARENT_VERDICT: 'a JSON object {"main_focus": text, "label_fit": boolean, '
    '"relevancy_score": number between 0 and 1}',
    ResponseSchema.DESCRIPTION: 'a JSON object {"description": text}',
}


def schema_reminder(schema: ResponseSchema) -> str:
    return f"Reminder: respond with only {_SCHEMA_REMINDERS[schema]}."


# -- deterministic mock provider ----------------------------------------------------------

DEFAULT_OVERLAP_THRESHOLD = 0.2


def _payload_doc_tokens(payload: Mapping[str, Any]) -> frozenset[str]:
    document = payload["document"]
    parts = [document.get("title", "")]
    parts.extend(document.get("keywords") or [])
    parts.append(document.get("abstract") or "")
    return token_set("\n".join(parts))


def _payload_node_tokens(node: Mapping[str, Any]) -> frozenset[str]:
    description = node.get("description")
    text = f"{node['name']}: {description}" if description else node["name"]
    return token_set(text)


def _mock_score(overlap: float) -> float:
    return min(1.00, max(0.01, round(overlap, 2)))


def _mock_focus(payload: Mapping[str, Any]) -> str:
    title_tokens = tokenize(payload["document"].get("title", ""))
    return " ".join(title_tokens[:4]) or "general"


def mock_complete(spec: PromptSpec, threshold: float = DEFAULT_OVERLAP_THRESHOLD) -> str:
    """Deterministic provider double driven by token-set Jaccard overlap.

    A node "fits" a document when the overlap between the document content
    and the node's name-plus-description reaches the threshold; relevancy
    scores are the overlap rounded to two decimals and clamped to
    [0.01, 1.00]. Output is always valid JSON for the template's schema.
    """
    payload = spec.user_payload
    tid = spec.template_id
    if tid is TemplateId.DESC_GEN:
        label = payload["label_name"]
        parent = payload.get("parent_name")
        if parent:
            text = f"Research and scholarship on {label}, within the broader area of {parent}."
        else:
            text = f"Research and scholarship on {label}."
        return json.dumps({"description": text})

    doc_tokens = _payload_doc_tokens(payload)
    if tid in (TemplateId.SELECTP_LEAF, TemplateId.SELECTP_PARENT):
        overlap = jaccard(doc_tokens, _payload_node_tokens(payload["node"]))
        verdict: dict[str, Any] = {
            "main_focus": _mock_focus(payload),
            "label_fit": overlap >= threshold,
        }
        if tid is TemplateId.SELECTP_PARENT:
            verdict["relevancy_score"] = _mock_score(overlap)
        return json.dumps(verdict)

    nodes = payload["nodes"]
    overlaps = [(node["id"], jaccard(doc_tokens, _payload_node_tokens(node))) for node in nodes]
    if tid is TemplateId.RERANK:
        return json.dumps({"scores": [[nid, _mock_score(o)] for nid, o in overlaps]})
    if tid is TemplateId.DECREASE_LABELS:
        ranked = sorted(overlaps, key=lambda item: (-item[1], item[0]))
        return json.dumps({"best_labels": [nid for nid, _ in ranked[:5]]})
    if tid is TemplateId.SELECT_ONE_PASS:
        chosen = [n["id"] for n in nodes if n.get("is_leaf") and dict(overlaps)[n["id"]] >= threshold]
        return json.dumps({"best_labels": chosen})
    if tid is TemplateId.TRAV_SELECT:
        return json.dumps({"best_labels": [nid for nid, o in overlaps if o >= threshold]})
    raise ConfigError(f"unknown template {tid!r}")


class MockProvider:
    """Offline provider double; records every PromptSpec for transcript checks."""

    def __init__(self, threshold: float = DEFAULT_OVERLAP_THRESHOLD):
        self.threshold = threshold
        self.calls: list[PromptSpec] = []

    def complete(self, spec: PromptSpec, reminder: str | None = None) -> str:
        self.calls.append(spec)
        return mock_complete(spec, self.threshold)


# -- HTTP provider ---------------------------------------------------------------------


class TokenBucket:
    """Blocking token-bucket limiter bounding request rate per provider."""

    def __init__(self, rate_per_sec: float, burst: int = 1):
        if rate_per_sec <= 0 or burst < 1:
            raise ConfigError("rate_per_sec must be > 0 and burst >= 1")
        self.rate = rate_per_sec
        self.capacity = float(burst)
        self._tokens = float(burst)
        self._stamp = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.capacity, self._tokens + (now - self._stamp) * self.rate)
                self._stamp = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            time.sleep(wait)


class HttpProvider:
    """Chat-completions HTTP client (OpenAI-style request/response shape)."""

    def __init__(self, config: ProviderConfig, limiter: TokenBucket | None = None, session=None):
        if config.endpoint.startswith("mock://"):
            raise ConfigError("HttpProvider needs a real endpoint")
        self.config = config
        self.limiter = limiter
        if session is None:
            import requests

            session = requests.Session()
        self.session = session

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.config.credentials:
            secret = os.environ.get(self.config.credentials)
            if not secret:
                raise AuthError(f"credential env var {self.config.credentials!r} is not set")
            headers["Authorization"] = f"Bearer {secret}"
        return headers

    def complete(self, spec: PromptSpec, reminder: str | None = None) -> str:
        import requests

        user_text = render_user_text(spec)
        if reminder:
            user_text = f"{user_text}\n\n{reminder}"
        body = {
            "model": self.config.model_name,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": spec.system_text},
                {"role": "user", "content": user_text},
            ],
        }
        last_error: ProviderError | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                time.sleep(min(0.5 * 2 ** (attempt - 1), 8.0))
            if self.limiter is not None:
                self.limiter.acquire()
            try:
                response = self.session.post(
                    self.config.endpoint,
                    json=body,
                    headers=self._headers(),
                    timeout=self.config.timeout,
                )
            except requests.Timeout as exc:
                last_error = ProviderTimeout(str(exc))
                continue
            except requests.RequestException as exc:
                last_error = TransportError(str(exc))
                continue
            if response.status_code in (401, 403):
                last_error = AuthError(f"HTTP {response.status_code}")
                continue
            if response.status_code >= 400:
                last_error = TransportError(f"HTTP {response.status_code}: {response.text[:200]}")
                continue
            try:
                return response.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                last_error = TransportError(f"malformed provider response: {exc}")
                continue
        assert last_error is not None
        raise last_error


# -- audit log -------------------------------------------------------------------------


class AuditLog:
    """Thread-safe newline-delimited JSON audit sink for gateway calls."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, *, template_id: str, doc_id: str | None, attempt: int, outcome: str) -> None:
        record = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "template_id": template_id,
            "doc_id": doc_id,
            "attempt": attempt,
            "outcome": outcome,
        }
        line = json.dumps(record, ensure_ascii=False) + "\n"
        with self._lock:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line)


# -- gateway ---------------------------------------------------------------------------


class Provider(Protocol):
    def complete(self, spec: PromptSpec, reminder: str | None = None) -> str: ...


class LlmGateway:
    """Provider plus config plus audit; the one surface strategies talk to.

    Tracks call and character counts (the only cost accounting in scope).
    """

    def __init__(
        self,
        provider: Provider,
        config: ProviderConfig | None = None,
        audit_log: AuditLog | None = None,
    ):
        self.provider = provider
        self.config = config or ProviderConfig()
        self.audit_log = audit_log
        self._counter_lock = threading.Lock()
        self.calls_made = 0
        self.characters_out = 0
        self.characters_in = 0

    def _count(self, spec: PromptSpec, raw: str) -> None:
        sent = len(spec.system_text) + len(render_user_text(spec))
        with self._counter_lock:
            self.calls_made += 1
            self.characters_out += sent
            self.characters_in += len(raw)

    def complete(self, spec: PromptSpec, reminder: str | None = None) -> str:
        raw = self.provider.complete(spec, reminder=reminder)
        self._count(spec, raw)
        return raw

    def call_with_retry(self, spec: PromptSpec) -> ParsedResponse:
        """complete + extract_response, retrying parse failures with a schema reminder."""
        attempts = self.config.max_retries + 1
        reminder = None
        last_raw = ""
        last_error: ResponseParseError | None = None
        doc_id = None
        document = spec.user_payload.get("document")
        if isinstance(document, Mapping):
            doc_id = document.get("doc_id")
        for attempt in range(1, attempts + 1):
            last_raw = self.provider.complete(spec, reminder=reminder)
            self._count(spec, last_raw)
            try:
                parsed = extract_response(last_raw, spec.expected_schema)
            except ResponseParseError as exc:
                last_error = exc
                reminder = schema_reminder(spec.expected_schema)
                self._audit(spec, doc_id, attempt, f"parse_error:{type(exc).__name__}")
                continue
            self._audit(spec, doc_id, attempt, "ok")
            return parsed
        assert last_error is not None
        raise RetryExhaustedError(
            f"{attempts} attempts failed for {spec.template_id.value}: {last_error}",
            last_raw=last_raw,
        )

    def _audit(self, spec: PromptSpec, doc_id: str | None, attempt: int, outcome: str) -> None:
        if self.audit_log is not None:
            self.audit_log.append(
                template_id=spec.template_id.value, doc_id=doc_id, attempt=attempt, outcome=outcome
            )


def mock_gateway(
    threshold: float = DEFAULT_OVERLAP_THRESHOLD,
    max_retries: int = 3,
    audit_log: AuditLog | None = None,
) -> LlmGateway:
    return LlmGateway(
        provider=MockProvider(threshold=threshold),
        config=ProviderConfig(max_retries=max_retries),
        audit_log=audit_log,
    )
