#!/usr/bin/env python3
"""
pcurve - startup script

Prepares the output directory, reports the environment configuration and hands the
remaining arguments to the command-line front end.
"""

import sys
from pathlib import Path

# Add project root to Python path
current_dir = Path(__file__).parent
sys.path.insert(0, str(current_dir))

from config import settings  # noqa: E402


def create_directories():
    """Create the artifact directory"""
    target = settings.ensure_directories_exist()
    print(f"✓ Output directory: {target}")


def check_environment() -> bool:
    """Check environment configuration"""
    if settings.LOG_LEVEL not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        print(f"❌ PCURVE_LOG_LEVEL must be a logging level name, got {settings.LOG_LEVEL!r}")
        return False
    print(f"✓ Threads: {settings.THREADS}, direct solves up to {settings.DIRECT_SOLVE_MAX_UNKNOWNS} unknowns "
          f"({settings.DIRECT_SOLVE_MAX_UNKNOWNS_3D} in 3-D)")
    return True


def main():
    """Main startup function"""
    print("🚀 pcurve")
    print("=" * 50)
    create_directories()
    if not check_environment():
        sys.exit(1)
    print("=" * 50)

    from cli import main as cli_main
    try:
        sys.exit(cli_main(sys.argv[1:]))
    except KeyboardInterrupt:
        print("\n👋 interrupted")
        sys.exit(130)


if __name__ == "__main__":
    main()
