import json
import os
from datetime import datetime, timezone
from pathlib import Path

from jinja2 import Template

REPO_ROOT = Path(__file__).resolve().parent.parent
TEMPLATE_DIR = REPO_ROOT / "templates"


def load_json(path: str) -> dict:
    """Load a JSON document."""
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def ensure_parent_dir(path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)) or ".", exist_ok=True)


def render_template(name: str, **context) -> str:
    """Render a template from templates/ with the given context."""
    with open(TEMPLATE_DIR / name, "r", encoding="utf-8") as f:
        template = Template(f.read(), trim_blocks=True, lstrip_blocks=True, keep_trailing_newline=True)
    return template.render(**context)


def utc_timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")
