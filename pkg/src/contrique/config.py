"""Run configuration plumbing: seed substreams, fingerprints, config files."""

import hashlib
import json
from pathlib import Path


def derive_seed(*parts) -> int:
    """Stable 63-bit seed derived from a global seed plus named substream parts.

    All randomness in a run flows from one root seed through substreams named
    here, e.g. derive_seed(seed, "sampling", epoch). Hash-based so adding a
    substream never perturbs existing ones.
    """
    key = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def config_fingerprint(config: dict) -> str:
    """Short hex fingerprint of a resolved configuration dict.

    Embedded in every artifact (checkpoints, feature files, reports) so
    outputs can be traced back to the exact settings that produced them.
    """
    blob = json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def load_config_file(path) -> dict:
    """Load a TOML or JSON config file, selected by extension."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        with open(path, "rb") as f:
            return tomllib.load(f)
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def dump_resolved_config(config: dict, out_dir, name: str = "resolved_config.json") -> Path:
    """Write the resolved config next to the run outputs, with fingerprint."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = dict(config)
    payload["fingerprint"] = config_fingerprint(config)
    path = out_dir / name
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=str)
        f.write("\n")
    return path
