"""Chat-completion backends, prompt templates, and response utilities.

All agent calls go through :func:`complete`, which renders a named template
and dispatches to either an OpenAI-compatible remote endpoint or an
in-process deterministic mock.  Templates live under ``dmap/prompts`` as
plain text with ``{name}`` placeholders.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional

import requests

logger = logging.getLogger(__name__)

# Declared input placeholders per template.  Any other brace expression in
# the template text is literal (several prompts contain example braces).
TEMPLATE_VARS = {
    "locate_agent": ("summary", "outline", "question"),
    "summarize_agent": ("outline", "previous_page", "current_page", "page_number"),
    "text_agent": ("question", "contexts"),
    "image_agent": ("question",),
    "gen_summarize_agent": ("question", "answers"),
    "reflect_agent": ("question", "answer"),
    "judge_agent": ("question", "reference", "candidate"),
    "element_describe": ("label", "caption"),
}


class GatewayError(Exception):
    """Base error for backend and template failures."""


class RenderError(GatewayError):
    """A template placeholder was left unfilled."""


class BackendError(GatewayError):
    """The backend failed after exhausting retries."""

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    text: str
    variables: tuple[str, ...]

    def render(self, variables: dict) -> str:
        missing = [v for v in self.variables if v not in variables]
        if missing:
            raise RenderError(f"template {self.id!r}: missing variable {missing[0]!r}")
        out = self.text
        for name in self.variables:
            out = out.replace("{%s}" % name, str(variables[name]))
        return out


def load_template(template_id: str) -> PromptTemplate:
    try:
        variables = TEMPLATE_VARS[template_id]
    except KeyError:
        raise GatewayError(f"unknown template id {template_id!r}") from None
    text = (
        resources.files("dmap").joinpath(f"prompts/{template_id}.txt").read_text("utf-8")
    )
    return PromptTemplate(id=template_id, text=text, variables=variables)


def render_prompt(template_id: str, variables: dict) -> list[dict]:
    """Render a template into a chat message list (single user message)."""
    content = load_template(template_id).render(variables)
    return [{"role": "user", "content": content}]


_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\n?")


def extract_json_block(text: str) -> Optional[str]:
    """Return the first balanced ``{...}`` substring, or None.

    Markdown code fences are stripped first; brace balancing is
    string-aware so braces inside JSON strings do not confuse it.
    """
    for block in iter_json_blocks(text):
        return block
    return None


def iter_json_blocks(text: str):
    """Yield balanced ``{...}`` substrings left to right, fences stripped."""
    text = _FENCE_RE.sub("", text)
    start = text.find("{")
    while start != -1:
        depth = 0
        in_str = False
        escape = False
        end = None
        for i in range(start, len(text)):
            c = text[i]
            if in_str:
                if escape:
                    escape = False
                elif c == "\\":
                    escape = True
                elif c == '"':
                    in_str = False
            elif c == '"':
                in_str = True
            elif c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
                if depth == 0:
                    end = i
                    break
        if end is None:
            start = text.find("{", start + 1)
            continue
        yield text[start : end + 1]
        start = text.find("{", end + 1)


@dataclass
class BackendConfig:
    kind: str = "mock"  # "remote" | "mock"
    endpoint: str = ""
    model: str = "gpt-4o"
    timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


class RemoteBackend:
    """OpenAI-compatible chat-completions client with retry/backoff."""

    RETRYABLE = {429, 500, 502, 503, 504}

    def __init__(self, config: BackendConfig, session=None, sleep=time.sleep):
        self.config = config
        self.session = session or requests.Session()
        self._sleep = sleep
        self._gate = threading.Semaphore(4)

    def chat(self, messages, attachments=(), meta=None) -> str:
        if not messages:
            raise ValueError("messages must be non-empty")
        body = {
            "model": self.config.model,
            "messages": self._with_attachments(messages, attachments),
            "temperature": self.config.temperature,
        }
        headers = {}
        api_key = os.environ.get("DMAP_API_KEY")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        url = self.config.endpoint.rstrip("/") + "/chat/completions"
        last_exc = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self._sleep(0.5 * 2 ** (attempt - 1))
            try:
                with self._gate:
                    resp = self.session.post(
                        url, json=body, headers=headers, timeout=self.config.timeout
                    )
            except requests.RequestException as exc:
                last_exc = BackendError(f"transport error: {exc}")
                continue
            if resp.status_code in self.RETRYABLE:
                last_exc = BackendError(
                    f"retryable status {resp.status_code}", status=resp.status_code
                )
                continue
            if resp.status_code >= 400:
                raise BackendError(
                    f"backend returned {resp.status_code}", status=resp.status_code
                )
            data = resp.json()
            text = data["choices"][0]["message"]["content"]
            logger.info("chat ok: model=%s chars=%d", self.config.model, len(text))
            return text
        raise last_exc

    @staticmethod
    def _with_attachments(messages, attachments):
        if not attachments:
            return messages
        out = [dict(m) for m in messages]
        last = out[-1]
        parts = [{"type": "text", "text": last["content"]}]
        for path in attachments:
            parts.append({"type": "image_url", "image_url": {"url": f"file://{path}"}})
        last["content"] = parts
        return out


@dataclass
class ScriptRule:
    """One scripted response: fires when the template id matches."""

    template_id: Optional[str]  # None matches everything
    response: str | Callable
    once: bool = True


class ScriptExhausted(AssertionError):
    """A scripted mock ran out of canned responses."""


class MockBackend:
    """Deterministic in-process backend.

    Responses are a pure function of (template id, rendered variables,
    script state, seed).  Without a script, a built-in simulation of each
    agent produces compliant responses so the whole pipeline runs offline.
    """

    def __init__(self, seed: int = 0, script: Optional[list[ScriptRule]] = None,
                 strict_script: bool = False):
        self.seed = seed
        self.script = list(script) if script else []
        self.strict_script = strict_script
        self.calls: list[dict] = []
        self._lock = threading.Lock()

    def chat(self, messages, attachments=(), meta=None) -> str:
        if not messages:
            raise ValueError("messages must be non-empty")
        meta = meta or {}
        template_id = meta.get("template_id")
        variables = meta.get("variables", {})
        with self._lock:
            self.calls.append(
                {"template_id": template_id, "variables": dict(variables),
                 "attachments": tuple(attachments)}
            )
            for i, rule in enumerate(self.script):
                if rule.template_id is None or rule.template_id == template_id:
                    if rule.once:
                        del self.script[i]
                    resp = rule.response
                    return resp(variables) if callable(resp) else resp
            if self.strict_script:
                raise ScriptExhausted(
                    f"no scripted response left for template {template_id!r}"
                )
            return self._simulate(template_id, variables, attachments,
                                  messages[-1]["content"])

    # Built-in agent simulations -------------------------------------------

    def _simulate(self, template_id, variables, attachments, rendered) -> str:
        if template_id == "summarize_agent":
            return self._simulate_summarize(variables)
        if template_id == "locate_agent":
            return json.dumps({"location": ["Page 1"]})
        if template_id == "text_agent":
            contexts = variables.get("contexts", "")
            if not contexts.strip():
                return "not answerable"
            return "Based on the text: " + _first_words(contexts, 12)
        if template_id == "image_agent":
            if not attachments:
                return "not answerable"
            return "Based on the images: " + ", ".join(
                os.path.basename(a) for a in attachments
            )
        if template_id == "gen_summarize_agent":
            answers = variables.get("answers", "")
            candidates = []
            for ln in answers.splitlines():
                ln = ln.strip()
                if not ln:
                    continue
                _, sep, rest = ln.partition(": ")
                candidates.append(rest.strip() if sep else ln)
            first = next(
                (c for c in candidates if c and c.lower() != "not answerable"),
                "not answerable",
            )
            return json.dumps({"Answer": first})
        if template_id == "reflect_agent":
            answer = variables.get("answer", "").strip().lower()
            return "no" if answer in ("", "not answerable") else "yes"
        if template_id == "judge_agent":
            ref = _norm_answer(variables.get("reference", ""))
            cand = _norm_answer(variables.get("candidate", ""))
            return "yes" if ref and ref in cand or ref == cand else "no"
        if template_id == "element_describe":
            caption = variables.get("caption", "").strip()
            label = variables.get("label", "").strip()
            return caption or label or "document element"
        # default echo rule
        return rendered if isinstance(rendered, str) else str(rendered)

    def _simulate_summarize(self, variables) -> str:
        from . import builder  # local import avoids a cycle at module load

        outline_text = variables.get("outline", "")
        page_text = variables.get("current_page", "")
        page_no = int(variables.get("page_number", 1))
        entries = builder.parse_outline_lines(outline_text)
        headings = _find_headings(page_text)
        if headings:
            for number, title in headings:
                existing = {e[0]: i for i, e in enumerate(entries)}
                if number in existing:
                    i = existing[number]
                    entries[i] = (number, entries[i][1],
                                  _add_page(entries[i][2], page_no))
                else:
                    entries.append((number, title, (page_no,)))
            # propagate to ancestors
            entries = [
                (num, title,
                 _add_page(pages, page_no) if any(
                     h[0].startswith(num + ".") or h[0] == num for h in headings
                 ) else pages)
                for num, title, pages in entries
            ]
        elif entries:
            num, title, pages = entries[-1]
            entries[-1] = (num, title, _add_page(pages, page_no))
        else:
            entries.append(("0", "Document", (page_no,)))
        outline = "\n".join(
            "%s:%s < > %s" % (n, t, ",".join(str(p) for p in pg))
            for n, t, pg in entries
        )
        sentence = _first_words(page_text, 10) or "no content"
        return (
            "Outline:\n%s\n\nCurrent page summary:\nPage %d: %s\n"
            % (outline, page_no, sentence)
        )


_HEADING_RE = re.compile(r"^\s*(\d+(?:\.\d+)*)[.)]?\s+(\S.*)$")


def _find_headings(text: str) -> list[tuple[str, str]]:
    found = []
    for line in text.splitlines():
        m = _HEADING_RE.match(line)
        if m and len(m.group(2)) <= 80:
            found.append((m.group(1), m.group(2).strip()))
    return found


def _add_page(pages: tuple, n: int) -> tuple:
    return tuple(sorted(set(pages) | {n}))


def _first_words(text: str, n: int) -> str:
    words = text.split()
    return " ".join(words[:n])


def _norm_answer(s: str) -> str:
    return " ".join(s.lower().split())


def make_backend(config: BackendConfig):
    if config.kind == "mock":
        return MockBackend(seed=config.seed)
    if config.kind == "remote":
        return RemoteBackend(config)
    raise ValueError(f"unknown backend kind {config.kind!r}")


def complete(backend, template_id: str, variables: dict, attachments=()) -> str:
    """Render ``template_id`` with ``variables`` and call the backend."""
    messages = render_prompt(template_id, variables)
    return backend.chat(
        messages,
        attachments=attachments,
        meta={"template_id": template_id, "variables": variables},
    )
