#!/usr/bin/env python3
"""
Reproduction Script - run every manifest check through the CLI and write the markdown report

Usage:
    python scripts/repro/repro_all.py
    python scripts/repro/repro_all.py --only swish_eoc_sigma_w_01 relu_rate_limit --report /tmp/report.md
"""

import argparse
import logging
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[2]))

from backend.core.config import LOG_FORMAT
from backend.services.repro_service import REPRO_DIR, repro_runner

# Setup logging
logging.basicConfig(
    level=logging.INFO,
    format=LOG_FORMAT,
    handlers=[
        logging.FileHandler('repro_all.log'),
        logging.StreamHandler()
    ]
)
logger = logging.getLogger(__name__)


def main(argv=None):
    """Main function"""
    parser = argparse.ArgumentParser(description='Reproduce every manifest check')
    parser.add_argument('--manifest', type=Path, default=REPRO_DIR / 'manifest.csv')
    parser.add_argument('--claims', type=Path, default=REPRO_DIR / 'claims.csv')
    parser.add_argument('--report', type=Path, default=REPRO_DIR / 'REPORT.md')
    parser.add_argument('--only', nargs='*', default=None, help='check ids to run')
    args = parser.parse_args(argv)

    logger.info(f"🔄 Running reproduction manifest {args.manifest}")
    report = repro_runner.repro_all(args.manifest, args.claims, args.only)
    args.report.write_text(report.to_markdown())
    logger.info(f"📄 Report written to {args.report}")

    for result in report.failed:
        logger.error(f"❌ {result.check_id}: {result.detail}")
    for claim in report.uncovered:
        logger.error(f"❌ claim {claim} has no check")
    if report.passed:
        logger.info(f"✅ All {len(report.results)} checks passed")
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
