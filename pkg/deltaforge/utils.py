# utils.py

import hashlib
import json
import logging
import os
import re
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

from dotenv import load_dotenv

logger = logging.getLogger(__name__)

LOG_DIR = "data/logs"
ERROR_LOG_NAME = "error_log.txt"

_WS_RE = re.compile(r"\s+")
_FENCE_RE = re.compile(r"^```[a-zA-Z0-9_-]*\s*\n?|\n?```\s*$")


def setup_logging(level: Optional[str] = None, log_dir: Optional[str] = None) -> None:
    """
    Console logging plus the error log file (WARNING and above) every phase
    writes to. Safe to call more than once.
    """
    load_dotenv()
    level = level or os.getenv("DELTAFORGE_LOG_LEVEL", "INFO")
    log_dir = log_dir or os.getenv("DELTAFORGE_LOG_DIR", LOG_DIR)

    root = logging.getLogger("deltaforge")
    root.setLevel(level.upper())
    if getattr(root, "_deltaforge_configured", False):
        return

    console = logging.StreamHandler()
    console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.addHandler(console)

    try:
        Path(log_dir).mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(Path(log_dir) / ERROR_LOG_NAME, encoding="utf-8")
        file_handler.setLevel(logging.WARNING)
        file_handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        root.addHandler(file_handler)
    except OSError as e:
        root.warning("error log unavailable in %s: %s", log_dir, e)
    root._deltaforge_configured = True


def log_errors(context: Dict[str, Any], log: Optional[logging.Logger] = None) -> None:
    """Logs structured error context as one JSON line."""
    (log or logger).error(json.dumps(context, sort_keys=True, default=str))


def normalize_ws(text: str) -> str:
    return _WS_RE.sub(" ", text or "").strip()


def normalize_evidence(text: str) -> str:
    return normalize_ws(text).casefold()


def sha256_hex(data: str) -> str:
    return hashlib.sha256(data.encode("utf-8")).hexdigest()


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"), default=str)


def fingerprint(obj: Any, length: int = 16) -> str:
    return sha256_hex(canonical_json(obj))[:length]


def strip_code_fences(text: str) -> str:
    """Removes a leading ```lang line and trailing ``` the way LLMs wrap JSON."""
    text = (text or "").strip()
    if text.startswith("```"):
        text = _FENCE_RE.sub("", text).strip()
    return text


def extract_first_json(text: str) -> Any:
    """
    Returns the first JSON object/array found in an LLM completion.
    Raises ValueError when there is none.
    """
    text = strip_code_fences(text)
    decoder = json.JSONDecoder()
    for idx, ch in enumerate(text):
        if ch not in "{[":
            continue
        try:
            value, _ = decoder.raw_decode(text, idx)
            return value
        except json.JSONDecodeError:
            continue
    raise ValueError("no JSON value in completion")


def get_llm_text_response(response: Any) -> str:
    if hasattr(response, "content"):
        content = response.content
        if isinstance(content, list):
            return "".join(part.get("text", "") if isinstance(part, dict) else str(part) for part in content)
        return str(content)
    return str(response)


def section_sort_key(section_id: str) -> Tuple:
    """Natural order for dotted ids: 2 < 2.1 < 2.10 < 10."""
    parts = []
    for part in str(section_id).split("."):
        parts.append((0, int(part), "") if part.isdigit() else (1, 0, part))
    return tuple(parts)


def sorted_ids(ids: Iterable[str]) -> List[str]:
    return sorted(set(ids), key=section_sort_key)


def load_json_file(path: Any) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_json_file(path: Any, data: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, ensure_ascii=False, sort_keys=True)
        f.write("\n")
    return path


def write_text_file(path: Any, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return path
