#!/usr/bin/env python3
"""
Quick setup script for UV Makeup.
Writes a commented default.conf with every setting and tests the installation.
"""

import sys
from pathlib import Path

from config.loader import Config
from config.settings import SECTIONS

CONFIG_FILE = Path("default.conf")

SECTION_NOTES = {
    "face": "procedural morphable face model",
    "render": "UV unwrap, extraction and rasterization",
    "network": "UV texture generator and discriminators",
    "loss": "loss weights",
    "trainer": "training loop",
    "synth": "synthetic dataset",
    "eval": "held-out evaluation",
}


def config_text(config: Config = Config()) -> str:
    """The effective configuration as a commented config file."""
    lines = ["# UV Makeup configuration", "# format: section.key = value", ""]
    current = None
    for line in config.to_lines():
        section = line.split(".", 1)[0]
        if section != current:
            if current is not None:
                lines.append("")
            lines.append(f"# {SECTION_NOTES.get(section, section)}")
            current = section
        lines.append(line)
    return "\n".join(lines) + "\n"


def write_default_config(path: Path = CONFIG_FILE, force: bool = False) -> bool:
    """Write default.conf unless it exists; returns True when written."""
    if path.exists() and not force:
        return False
    path.write_text(config_text(), encoding="utf-8")
    return True


def test_imports() -> bool:
    """Test that all required modules can be imported."""
    print("\nTesting imports...")
    missing = []
    for module, package in (("rich", "rich"), ("dotenv", "python-dotenv"), ("numpy", "numpy"),
                            ("scipy", "scipy"), ("torch", "torch"), ("PIL", "Pillow")):
        try:
            __import__(module)
            print(f"  ✓ {package}")
        except ImportError:
            print(f"  ✗ {package}")
            missing.append(package)
    if missing:
        print(f"\nInstall the missing packages: pip install {' '.join(missing)}")
    return not missing


def main():
    print("\n" + "=" * 60)
    print("  UV Makeup - Setup")
    print("=" * 60 + "\n")

    force = "--force" in sys.argv
    if write_default_config(force=force):
        print(f"✓ wrote {CONFIG_FILE} ({sum(len(d) for d in SECTIONS.values())} settings)")
    else:
        print(f"✓ {CONFIG_FILE} already exists (use --force to rewrite it)")

    ok = test_imports()

    print("\n" + "=" * 60)
    print("Setup complete!" if ok else "Setup incomplete.")
    print("=" * 60)
    print("\nNext steps:")
    print("  1. Generate data:  python3 main.py synth --out data/train.uvt")
    print(f"  2. Train:          python3 main.py train --config {CONFIG_FILE}")
    print("  3. Run the tests:  pytest")
    print()
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
