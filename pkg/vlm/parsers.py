"""Reply parsers. Each returns a value or raises ``UnparseableReplyError``."""

import difflib
import re
from typing import List, Sequence, Tuple

from models.errors import UnparseableReplyError
from models.schemas import Box, Primitive

_YES_NO = re.compile(r"\b(yes|no)\b", re.IGNORECASE)
_LEADING = re.compile(r"^[\W_]*(yes|no)\b", re.IGNORECASE)
_FINAL_ANSWER = re.compile(r"FINAL[_ ]ANSWER\s*:\s*(.+)", re.IGNORECASE)
_PRIMITIVE = re.compile(r"\b(reach|reposition|transport|stabiliz|idle)", re.IGNORECASE)
_RATING = re.compile(r"(?<![\d.])([012])(?!\d|\.\d)")
_FINAL_RATING = re.compile(r"final\s+(?:score|rating)(?:\s+is)?[\s*:=]*([012])(?!\d|\.\d)", re.IGNORECASE)
_TOUCH = {
    "nose": re.compile(r"nose\D{0,20}?(\d+)", re.IGNORECASE),
    "knee": re.compile(r"knee\D{0,20}?(\d+)", re.IGNORECASE),
}
_NUMBER = r"\s*(-?\d+(?:\.\d+)?)\s*"
_BOX = re.compile(r"\[" + ",".join([_NUMBER] * 4) + r"\]")

_PRIMITIVE_STEMS = {
    "reach": Primitive.REACH,
    "reposition": Primitive.REPOSITION,
    "transport": Primitive.TRANSPORT,
    "stabiliz": Primitive.STABILIZE,
    "idle": Primitive.IDLE,
}


def parse_yes_no(text: str) -> bool:
    """Leading yes/no token first, else the first occurrence anywhere."""
    match = _LEADING.match(text.strip()) or _YES_NO.search(text)
    if match is None:
        raise UnparseableReplyError("yes/no", text)
    return match.group(1).lower() == "yes"


def _normalize(text: str) -> str:
    return "".join(ch for ch in text.lower() if ch.isalnum())


def _stems(label: str) -> List[str]:
    """Lowercase words a free-text reply may use for ``label``."""
    words = re.findall(r"[a-z]+", label.lower())
    phrase = " ".join(words)
    stems = [phrase]
    if len(words) > 1 and words[-1] == "exercise":
        stems.append(words[0])
    for suffix in ("ing", "es", "s"):
        if phrase.endswith(suffix) and len(phrase) - len(suffix) >= 3:
            stems.append(phrase[: -len(suffix)])
            break
    return stems


def parse_final_answer(text: str, classes: Sequence[str]) -> str:
    """Class named on the last FINAL_ANSWER line, else the first class mentioned in the reply."""
    if not classes:
        raise ValueError("class list must not be empty")
    by_key = {_normalize(c): c for c in classes}

    answers = _FINAL_ANSWER.findall(text)
    if answers:
        answer = _normalize(answers[-1])
        if answer in by_key:
            return by_key[answer]
        for key, label in by_key.items():
            if answer and (key in answer or answer in key):
                return label
        close = difflib.get_close_matches(answer, list(by_key), n=1, cutoff=0.75)
        if close:
            return by_key[close[0]]

    lowered = text.lower()
    best: Tuple[int, str] = (len(lowered) + 1, "")
    for label in classes:
        for stem in _stems(label):
            found = re.search(r"\b" + re.escape(stem), lowered)
            if found and found.start() < best[0]:
                best = (found.start(), label)
    if best[1]:
        return best[1]
    raise UnparseableReplyError("final-answer", text)


def parse_primitive(text: str) -> Primitive:
    match = _PRIMITIVE.search(text)
    if match is None:
        raise UnparseableReplyError("primitive", text)
    return _PRIMITIVE_STEMS[match.group(1).lower()]


def parse_rating(text: str) -> int:
    """First standalone 0, 1 or 2."""
    match = _RATING.search(text)
    if match is None:
        raise UnparseableReplyError("rating", text)
    return int(match.group(1))


def parse_final_rating(text: str) -> int:
    """Rating at the end of a reasoning reply."""
    markers = _FINAL_RATING.findall(text)
    if markers:
        return int(markers[-1])
    lines = [line for line in text.splitlines() if line.strip()]
    if lines:
        try:
            return parse_rating(lines[-1])
        except UnparseableReplyError:
            pass
    return parse_rating(text)


def parse_touch_counts(text: str) -> Tuple[int, int]:
    counts = []
    for target in ("nose", "knee"):
        match = _TOUCH[target].search(text)
        if match is None:
            raise UnparseableReplyError("touch-count", text)
        counts.append(int(match.group(1)))
    return counts[0], counts[1]


def parse_bounding_boxes(text: str) -> List[Box]:
    boxes = []
    for groups in _BOX.findall(text):
        x1, y1, x2, y2 = (float(v) for v in groups)
        if x2 < x1 or y2 < y1:
            continue
        boxes.append(Box(x1=x1, y1=y1, x2=x2, y2=y2))
    if not boxes:
        raise UnparseableReplyError("bounding-box", text)
    return boxes
