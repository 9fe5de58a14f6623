"""Write one example config per experiment kind, using the built-in defaults.

    python3 scripts/write_configs.py [outdir]
"""
import sys
from pathlib import Path

from cylwalk.cli import COMMANDS
from cylwalk.config import dump_config


def main(out="scripts/configs"):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for command, cls in COMMANDS.items():
        path = out / f"{command}.cfg"
        path.write_text(f"# defaults for `cylwalk {command}`\n" + dump_config(cls().to_dict()))
        print(path)


if __name__ == "__main__":
    main(*sys.argv[1:])
