#!/usr/bin/env python3
"""
eoc-lab Startup Script

Usage:
    python run.py eoc --activation swish --sigma-b-grid 0.1:0.5:5
    python run.py --help
"""

import sys


def check_dependencies():
    """Check if dependencies are installed"""
    try:
        import numpy
        import scipy
        import pandas
        import jsonschema
        from dotenv import load_dotenv
        return True
    except ImportError as e:
        print(f"❌ Missing dependency: {e}", file=sys.stderr)
        print("Please run: pip install -r requirements.txt", file=sys.stderr)
        return False


def check_configuration():
    """Load the environment configuration; bad EOC_LAB_* values are reported here"""
    try:
        from backend.core import config  # noqa: F401
        return True
    except Exception as e:
        print(f"❌ Configuration error: {e}", file=sys.stderr)
        print("Please check the EOC_LAB_* variables in your .env file", file=sys.stderr)
        return False


def main():
    """Main function"""
    # Check dependencies
    if not check_dependencies():
        sys.exit(1)

    # Check configuration
    if not check_configuration():
        sys.exit(2)

    from backend.api.cli import run
    try:
        sys.exit(run(sys.argv[1:]))
    except KeyboardInterrupt:
        print("\n👋 Interrupted", file=sys.stderr)
        sys.exit(130)


if __name__ == "__main__":
    main()
