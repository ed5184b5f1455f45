"""Provider gateway: live HTTP backend, deterministic mock, record/replay.

Every prompt in the pipeline goes through a gateway's ``send``. Four
implementations share that surface:

* ``LiveGateway``   - OpenAI-style chat completions over HTTP, with retry,
                      backoff, and a bound on in-flight requests.
* ``MockGateway``   - rule-based responses that are a pure function of the
                      request; scripts make fixture behavior exact.
* ``RecordGateway`` - wraps another gateway and appends every exchange to a
                      cassette file.
* ``ReplayGateway`` - serves recorded responses by request fingerprint and
                      never touches the network.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

import requests

logger = logging.getLogger(__name__)

# Prompt builders fence the passage under discussion between these markers so
# that the mock can recover it; they also read naturally in a prompt.
TEXT_OPEN = "<<<"
TEXT_CLOSE = ">>>"

MAX_RESPONSE_CHARS = 1_000_000
RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})

ENV_URL = "KGF_PROVIDER_URL"
ENV_KEY = "KGF_PROVIDER_KEY"
ENV_MODEL = "KGF_PROVIDER_MODEL"


class GatewayError(RuntimeError):
    """Provider interaction failed past the retry budget."""


class CassetteMissError(GatewayError):
    """Replay lookup failed; the fixture and the code have drifted apart."""


class ResponseTooLargeError(GatewayError):
    """Provider response exceeded the size bound."""


class RequestTag(str, Enum):
    EXTRACTION = "extraction"
    INDUCTION = "induction"
    JUDGE = "judge"


@dataclass(frozen=True)
class ProviderRequest:
    role_messages: tuple[tuple[str, str], ...]
    request_tag: RequestTag
    temperature: float = 0.0
    max_output_tokens: int = 2048

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")
        roles = [role for role, _ in self.role_messages]
        if any(role not in ("system", "user") for role in roles):
            raise ValueError(f"unsupported roles in {roles}")
        if "user" not in roles:
            raise ValueError("request needs at least one user message")

    def user_text(self) -> str:
        """Concatenated user-message text (what the mock pattern-matches on)."""
        return "\n".join(text for role, text in self.role_messages if role == "user")


@dataclass(frozen=True)
class ProviderResponse:
    text: str
    provider_id: str
    latency_ms: int = 0
    token_counts: tuple[int, int] | None = None


@dataclass(frozen=True)
class CassetteEntry:
    request_fingerprint: str
    request_tag: str
    response_text: str
    recorded_at: str


def fingerprint(req: ProviderRequest) -> str:
    """Stable request hash: same messages, temperature, and tag -> same key.

    Field order in the serialization never matters and neither does anything
    outside those three fields, so cassettes survive refactors that only
    touch metadata.
    """
    payload = json.dumps(
        {
            "messages": [list(pair) for pair in req.role_messages],
            "tag": req.request_tag.value,
            "temperature": req.temperature,
        },
        sort_keys=True,
        ensure_ascii=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class Gateway:
    """Common surface: ``send`` a request, get a response."""

    def send(self, req: ProviderRequest) -> ProviderResponse:
        raise NotImplementedError


def _check_size(text: str) -> str:
    if len(text) > MAX_RESPONSE_CHARS:
        raise ResponseTooLargeError(f"response of {len(text)} chars exceeds {MAX_RESPONSE_CHARS}")
    return text


class LiveGateway(Gateway):
    """OpenAI-compatible chat completions endpoint.

    Credentials come from ``KGF_PROVIDER_URL``, ``KGF_PROVIDER_KEY``, and
    ``KGF_PROVIDER_MODEL`` unless passed explicitly. Transport errors and
    429/5xx responses are retried with exponential backoff; anything else
    fails immediately. At most ``max_inflight`` requests run concurrently.
    """

    def __init__(
        self,
        url: str | None = None,
        api_key: str | None = None,
        model: str | None = None,
        max_inflight: int = 4,
        max_attempts: int = 3,
        backoff_s: float = 1.0,
        timeout_s: float = 120.0,
        session: requests.Session | None = None,
    ) -> None:
        self.url = url or os.environ.get(ENV_URL)
        self.api_key = api_key or os.environ.get(ENV_KEY)
        self.model = model or os.environ.get(ENV_MODEL)
        if not self.url or not self.model:
            raise GatewayError(f"live gateway needs {ENV_URL} and {ENV_MODEL} (and usually {ENV_KEY})")
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self.timeout_s = timeout_s
        self._session = session or requests.Session()
        self._inflight = threading.BoundedSemaphore(max_inflight)

    def send(self, req: ProviderRequest) -> ProviderResponse:
        payload = {
            "model": self.model,
            "messages": [{"role": role, "content": text} for role, text in req.role_messages],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: str = ""
        with self._inflight:
            for attempt in range(self.max_attempts):
                if attempt:
                    time.sleep(self.backoff_s * 2 ** (attempt - 1))
                started = time.monotonic()
                try:
                    http = self._session.post(self.url, json=payload, headers=headers, timeout=self.timeout_s)
                except requests.RequestException as exc:
                    last_error = f"transport: {exc}"
                    logger.warning("gateway retryable failure attempt=%d tag=%s: %s", attempt + 1, req.request_tag.value, last_error)
                    continue
                if http.status_code in RETRYABLE_STATUS:
                    last_error = f"http {http.status_code}"
                    logger.warning("gateway retryable failure attempt=%d tag=%s: %s", attempt + 1, req.request_tag.value, last_error)
                    continue
                if http.status_code != 200:
                    raise GatewayError(f"provider returned http {http.status_code}: {http.text[:200]}")
                data = http.json()
                try:
                    text = data["choices"][0]["message"]["content"] or ""
                except (KeyError, IndexError, TypeError) as exc:
                    raise GatewayError(f"malformed provider payload: {exc}") from exc
                usage = data.get("usage") or {}
                tokens = None
                if "prompt_tokens" in usage and "completion_tokens" in usage:
                    tokens = (int(usage["prompt_tokens"]), int(usage["completion_tokens"]))
                # sizes only; prompt bodies may hold confidential report text
                logger.debug("live send tag=%s prompt_chars=%d response_chars=%d", req.request_tag.value, len(req.user_text()), len(text))
                return ProviderResponse(
                    text=_check_size(text),
                    provider_id=self.model,
                    latency_ms=int((time.monotonic() - started) * 1000),
                    token_counts=tokens,
                )
        raise GatewayError(f"provider unreachable after {self.max_attempts} attempts ({last_error})")


# --------------------------------------------------------------------------
# Deterministic mock
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MockRule:
    """One extraction pattern: regex over a sentence line -> one triplet.

    ``subject`` and ``object`` are ``re.Match.expand`` templates, so they may
    reference groups (``\\1``) or be literal strings.
    """

    pattern: str
    predicate: str
    subject: str
    object: str

    def matches(self, line: str) -> list[dict[str, str]]:
        out = []
        for m in re.finditer(self.pattern, line):
            subject = m.expand(self.subject).strip()
            obj = m.expand(self.object).strip()
            if subject and obj:
                out.append({"subject": subject, "predicate": self.predicate, "object": obj})
        return out


# The stock rule table understands plain financial prose and the pipe-style
# table pseudo-sentences produced by segmentation. The "reported" rule emits
# a resolved implicit agent on purpose: it gives hybrid verification a
# coreference case to adjudicate.
# Objects stop at clause punctuation, but a comma between digits is a
# thousands separator ("96,400 units"), not a boundary.
_STOP = r"(?=$|[;:]|,(?!\d))"
_VALUE = r"((?:[^,;:]|,(?=\d)){1,58}?)"
DEFAULT_MOCK_RULES: tuple[MockRule, ...] = (
    MockRule(r"^([^|]{1,60}?)\s*\|\s*([^|]{1,60}?)(?:\s*\|.*)?$", "has_value", r"\1", r"\2"),
    MockRule(r"\b([A-Z][A-Za-z_ ]{2,48}?) (?:was|were) ((?=[A-Z0-9])(?:[^,;:]|,(?=\d)){1,58}?)" + _STOP, "has_value", r"\1", r"\2"),
    MockRule(r"\b([A-Z][A-Za-z_ ]{2,48}?) (?:increased|rose|grew|improved) (?:by|to) " + _VALUE + _STOP, "increased_to", r"\1", r"\2"),
    MockRule(r"\b([A-Z][A-Za-z_ ]{2,48}?) (?:decreased|declined|fell|dropped) (?:by|to) " + _VALUE + _STOP, "decreased_to", r"\1", r"\2"),
    MockRule(r"\b([A-Z][A-Za-z_ ]{2,48}?) amounted to " + _VALUE + _STOP, "amounted_to", r"\1", r"\2"),
    MockRule(r"\b[Tt]he (?:[Cc]ompany|[Gg]roup) reported (?:an? )?([a-z][A-Za-z_ ]{2,48}?) of " + _VALUE + _STOP, "reports_metric", "The Group", r"\1"),
)

DEFAULT_MOCK_CONCEPTS: tuple[dict[str, str], ...] = (
    {"label": "financial_metric", "description": "A named reported measure such as net sales or EBIT."},
    {"label": "monetary_amount", "description": "A currency or percentage figure."},
)

_EMBEDDED_TEXT = re.compile(re.escape(TEXT_OPEN) + r"\n(.*?)\n" + re.escape(TEXT_CLOSE), re.DOTALL)
_CHUNK_INDEX = re.compile(r"\(chunk (\d+)\)")
_JUDGE_ENTITY = re.compile(r'^Entity: "(.*)"$', re.MULTILINE)
_JUDGE_CHUNK_ID = re.compile(r"^Passage \[(.*?)\]:$", re.MULTILINE)
_TOKEN = re.compile(r"[\w.%]+")


def _simple_norm(text: str) -> str:
    return re.sub(r"\s+", " ", text.replace("_", " ").casefold()).strip()


def _tokens(text: str) -> set[str]:
    return {t.strip(".") for t in _TOKEN.findall(text.casefold())} - {""}


class MockGateway(Gateway):
    """Deterministic rule-based provider; responses depend only on the request.

    Extraction prompts are answered by running ``rules`` over each sentence
    line of the embedded passage. Induction prompts are answered either from
    ``induction_script`` (keyed by chunk index) or by proposing exactly the
    relations the extraction rules would use on that passage. Judge prompts
    consult ``judge_script`` (keyed by ``(entity, chunk_id)`` or just the
    entity, both in simple normalized form) and fall back to a token-overlap
    check, under which a mismatched number is always HALLUCINATED.

    Every request is appended to ``self.requests`` for test inspection.
    """

    def __init__(
        self,
        rules: tuple[MockRule, ...] = DEFAULT_MOCK_RULES,
        induction_script: dict[int, dict] | None = None,
        judge_script: dict | None = None,
        concepts: tuple[dict[str, str], ...] = DEFAULT_MOCK_CONCEPTS,
        seed: int = 0,
    ) -> None:
        self.rules = rules
        self.induction_script = induction_script
        self.judge_script = {self._script_key(k): v for k, v in (judge_script or {}).items()}
        self.concepts = concepts
        self.seed = seed
        self.requests: list[ProviderRequest] = []
        self._log_lock = threading.Lock()

    @staticmethod
    def _script_key(key: str | tuple[str, str]) -> str | tuple[str, str]:
        if isinstance(key, tuple):
            entity, chunk_id = key
            return (_simple_norm(entity), chunk_id)
        return _simple_norm(key)

    def send(self, req: ProviderRequest) -> ProviderResponse:
        with self._log_lock:
            self.requests.append(req)
        prompt = req.user_text()
        if req.request_tag is RequestTag.EXTRACTION:
            text = self._extract(prompt)
        elif req.request_tag is RequestTag.INDUCTION:
            text = self._induce(prompt)
        else:
            text = self._judge(prompt)
        logger.debug("mock send tag=%s prompt_chars=%d response_chars=%d", req.request_tag.value, len(prompt), len(text))
        return ProviderResponse(text=_check_size(text), provider_id=f"mock:{self.seed}")

    def _embedded(self, prompt: str) -> str:
        m = _EMBEDDED_TEXT.search(prompt)
        if not m:
            raise GatewayError("mock could not locate the fenced passage in the prompt")
        return m.group(1)

    def _hits(self, passage: str) -> list[dict[str, str]]:
        hits: list[dict[str, str]] = []
        for line in passage.splitlines():
            line = line.strip().rstrip(".!?").rstrip()
            if not line:
                continue
            for rule in self.rules:
                hits.extend(rule.matches(line))
        return hits

    def _extract(self, prompt: str) -> str:
        return json.dumps(self._hits(self._embedded(prompt)), ensure_ascii=False)

    def _induce(self, prompt: str) -> str:
        if self.induction_script is not None:
            m = _CHUNK_INDEX.search(prompt)
            index = int(m.group(1)) if m else -1
            proposal = self.induction_script.get(index, {"concepts": [], "relations": []})
            return json.dumps(proposal, ensure_ascii=False)
        hits = self._hits(self._embedded(prompt))
        relations = sorted({h["predicate"] for h in hits})
        concepts = list(self.concepts) if relations else []
        return json.dumps(
            {"concepts": concepts, "relations": [{"label": r} for r in relations]},
            ensure_ascii=False,
        )

    def _judge(self, prompt: str) -> str:
        entity_m = _JUDGE_ENTITY.search(prompt)
        chunk_m = _JUDGE_CHUNK_ID.search(prompt)
        if not entity_m:
            raise GatewayError("mock could not locate the entity in the judge prompt")
        entity = entity_m.group(1)
        chunk_id = chunk_m.group(1) if chunk_m else ""
        passage = self._embedded(prompt)
        verdict = self._judge_verdict(entity, chunk_id, passage)
        if verdict:
            return "FAITHFUL\nThe entity is present in the passage up to surface form."
        return "HALLUCINATED\nThe entity has no support in the passage."

    def _judge_verdict(self, entity: str, chunk_id: str, passage: str) -> bool:
        norm = _simple_norm(entity)
        for key in ((norm, chunk_id), norm):
            if key in self.judge_script:
                return bool(self.judge_script[key])
        return _tokens(entity) <= _tokens(passage)


# --------------------------------------------------------------------------
# Cassettes
# --------------------------------------------------------------------------

class RecordGateway(Gateway):
    """Pass-through that appends every exchange to a JSONL cassette."""

    def __init__(self, inner: Gateway, cassette_path: str | Path) -> None:
        self.inner = inner
        self.cassette_path = Path(cassette_path)
        self._write_lock = threading.Lock()

    def send(self, req: ProviderRequest) -> ProviderResponse:
        resp = self.inner.send(req)
        entry = CassetteEntry(
            request_fingerprint=fingerprint(req),
            request_tag=req.request_tag.value,
            response_text=resp.text,
            recorded_at=datetime.now(timezone.utc).isoformat(),
        )
        line = json.dumps(entry.__dict__, sort_keys=True, ensure_ascii=False)
        with self._write_lock:
            with self.cassette_path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")
        return resp


class ReplayGateway(Gateway):
    """Serves recorded responses; a fingerprint miss is a hard error."""

    def __init__(self, cassette_path: str | Path) -> None:
        self.cassette_path = Path(cassette_path)
        self._responses: dict[str, str] = {}
        with self.cassette_path.open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                entry = json.loads(line)
                self._responses[entry["request_fingerprint"]] = entry["response_text"]

    def send(self, req: ProviderRequest) -> ProviderResponse:
        fp = fingerprint(req)
        if fp not in self._responses:
            raise CassetteMissError(
                f"no cassette entry for {req.request_tag.value} request {fp[:12]} in {self.cassette_path}"
            )
        logger.debug("replay send tag=%s prompt_chars=%d response_chars=%d", req.request_tag.value, len(req.user_text()), len(self._responses[fp]))
        return ProviderResponse(text=self._responses[fp], provider_id="replay")
