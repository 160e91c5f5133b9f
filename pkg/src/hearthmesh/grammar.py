"""Closed keyword vocabulary and utterance parsing.

Grammar: ``[wake]? action [class]? [room]?`` with filler words ignored.
Phrase order is not enforced ("turn off the bedroom light" puts the room
before the class).  Matching is longest-phrase-first, left to right.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

_NON_WORD = re.compile(r"[^0-9a-z]+")

DEFAULT_KEYWORD_CAPACITY = 300


def normalize(text: str) -> tuple[str, ...]:
    """Fold case and punctuation; hyphens separate words."""
    return tuple(_NON_WORD.sub(" ", text.lower()).split())


def phrase_key(text: str) -> str:
    return " ".join(normalize(text))


class VocabularyError(ValueError):
    pass


@dataclass(frozen=True)
class ActionWord:
    action: str
    device_class: str | None = None


@dataclass(frozen=True)
class Vocabulary:
    name: str
    wake_words: frozenset = frozenset()
    actions: dict = field(default_factory=dict)  # phrase -> ActionWord
    device_classes: dict = field(default_factory=dict)  # phrase -> class
    rooms: dict = field(default_factory=dict)  # phrase -> room name

    def __post_init__(self):
        sets = {
            "wake_words": set(self.wake_words),
            "actions": set(self.actions),
            "device_classes": set(self.device_classes),
            "rooms": set(self.rooms),
        }
        for key, phrases in sets.items():
            for p in phrases:
                if not p or p != phrase_key(p):
                    raise VocabularyError(f"vocabulary {self.name!r}: phrase {p!r} in {key} is not normalized")
        names = list(sets)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                common = sets[a] & sets[b]
                if common:
                    raise VocabularyError(
                        f"vocabulary {self.name!r}: phrase {sorted(common)[0]!r} appears in both {a} and {b}"
                    )

    @property
    def size(self) -> int:
        return len(self.wake_words) + len(self.actions) + len(self.device_classes) + len(self.rooms)

    @property
    def command_word_count(self) -> int:
        return len(self.actions)

    def action_ids(self) -> set[str]:
        return {w.action for w in self.actions.values()}

    @classmethod
    def from_dict(cls, name: str, doc: dict) -> "Vocabulary":
        allowed = {"wake_words", "actions", "device_classes", "rooms"}
        unknown = set(doc) - allowed
        if unknown:
            raise VocabularyError(f"vocabulary {name!r}: unknown key {sorted(unknown)[0]!r}")
        actions = {}
        for phrase, target in doc.get("actions", {}).items():
            if isinstance(target, str):
                word = ActionWord(target)
            elif isinstance(target, dict) and set(target) <= {"action", "class"} and "action" in target:
                word = ActionWord(target["action"], target.get("class"))
            else:
                raise VocabularyError(f"vocabulary {name!r}: bad action entry for {phrase!r}")
            actions[phrase_key(phrase)] = word
        return cls(
            name=name,
            wake_words=frozenset(phrase_key(p) for p in doc.get("wake_words", [])),
            actions=actions,
            device_classes={phrase_key(p): c for p, c in doc.get("device_classes", {}).items()},
            rooms={phrase_key(p): r for p, r in doc.get("rooms", {}).items()},
        )

    def to_dict(self) -> dict:
        actions = {}
        for phrase in sorted(self.actions):
            w = self.actions[phrase]
            actions[phrase] = w.action if w.device_class is None else {"action": w.action, "class": w.device_class}
        return {
            "wake_words": sorted(self.wake_words),
            "actions": actions,
            "device_classes": {p: self.device_classes[p] for p in sorted(self.device_classes)},
            "rooms": {p: self.rooms[p] for p in sorted(self.rooms)},
        }

    def _index(self):
        cached = self.__dict__.get("_index_cache")
        if cached is not None:
            return cached
        entries = []
        for p in self.wake_words:
            entries.append((p, "wake", None))
        for p, w in self.actions.items():
            entries.append((p, "action", w))
        for p, c in self.device_classes.items():
            entries.append((p, "class", c))
        for p, r in self.rooms.items():
            entries.append((p, "room", r))
        index: dict[str, list] = {}
        for p, cat, val in entries:
            toks = tuple(p.split())
            index.setdefault(toks[0], []).append((toks, p, cat, val))
        for cands in index.values():
            # longest first, ties lexicographic
            cands.sort(key=lambda c: (-len(c[0]), c[1]))
        object.__setattr__(self, "_index_cache", index)
        return index


@dataclass(frozen=True)
class Utterance:
    speaker: str
    text: str
    position: tuple = (0.0, 0.0)
    intensity: float = 65.0
    at_ms: float = 0.0

    def __post_init__(self):
        if not normalize(self.text):
            raise ValueError("utterance text is empty")
        if not self.intensity > 0:
            raise ValueError(f"utterance intensity must be positive, got {self.intensity}")


@dataclass(frozen=True)
class Intent:
    action: str
    device_class: str | None = None
    room: str | None = None
    origin: str | None = None
    at_ms: float = 0.0

    def with_(self, **changes) -> "Intent":
        return replace(self, **changes)


@dataclass(frozen=True)
class ParseResult:
    kind: str  # "wake" | "intent" | "unrecognized"
    intent: Intent | None = None
    woke: bool = False
    matched: tuple = ()  # ((category, phrase), ...)


def match_phrases(v: Vocabulary, text: str) -> list[tuple[str, str, object]]:
    """Left-to-right longest-match scan; returns (category, phrase, value)."""
    toks = normalize(text)
    index = v._index()
    out = []
    i = 0
    while i < len(toks):
        for cand, phrase, cat, val in index.get(toks[i], ()):
            n = len(cand)
            if toks[i:i + n] == cand:
                out.append((cat, phrase, val))
                i += n
                break
        else:
            i += 1  # filler
    return out


def parse_utterance(v: Vocabulary, u: Utterance | str, at_ms: float | None = None) -> ParseResult:
    text = u if isinstance(u, str) else u.text
    if at_ms is None:
        at_ms = 0.0 if isinstance(u, str) else u.at_ms
    found = match_phrases(v, text)
    matched = tuple((cat, phrase) for cat, phrase, _ in found)
    woke = any(cat == "wake" for cat, _, _ in found)
    action = next((val for cat, _, val in found if cat == "action"), None)
    if action is None:
        if woke:
            return ParseResult("wake", woke=True, matched=matched)
        return ParseResult("unrecognized", matched=matched)
    cls = next((val for cat, _, val in found if cat == "class"), action.device_class)
    room = next((val for cat, _, val in found if cat == "room"), None)
    intent = Intent(action=action.action, device_class=cls, room=room, at_ms=at_ms)
    return ParseResult("intent", intent=intent, woke=woke, matched=matched)
